"""Independent reference implementations used by the tests."""
import math

import numpy as np


def nt_xent_direct(z: np.ndarray, tau: float) -> float:
    """Per-anchor softmax cross-entropy by explicit loops; positive of 2i is 2i+1."""
    n = len(z)
    total = 0.0
    for i in range(n):
        sims = []
        for k in range(n):
            if k == i:
                continue
            cos = float(np.dot(z[i], z[k]) / (np.linalg.norm(z[i]) * np.linalg.norm(z[k])))
            sims.append((k, cos / tau))
        m = max(s for _, s in sims)
        denom = sum(math.exp(s - m) for _, s in sims)
        pos = next(s for k, s in sims if k == i ^ 1)
        total += -(pos - m - math.log(denom))
    return total / n
