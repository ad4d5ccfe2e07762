"""Adam with bias-corrected moments."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericFailure, ShapeMismatch


@dataclass
class AdamState:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """Update ``params`` in place; parameters without a gradient are skipped."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericFailure(f"non-finite gradient for {name} at step {state.step}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if not np.all(np.isfinite(p)):
            raise NumericFailure(f"parameter {name} became non-finite at step {state.step}")


class Adam:
    """Optimizer over a dict of :class:`~cascl.autodiff.Tensor` parameters."""

    def __init__(self, params: dict, lr: float = 5e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self) -> None:
        grads = {k: t.grad for k, t in self.params.items() if t.grad is not None}
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericFailure(f"non-finite gradient for {name}")
        adam_step({k: t.data for k, t in self.params.items()}, grads, self.state)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None
