"""Downstream evaluation: popularity MSLE, outbreak accuracy, seed aggregation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoder import CascadeModel
from .errors import EmptyTestSplit, TooFewPositives
from .ingest import SPLITS, CascadeDataset, LabeledCascade
from .train import OUTBREAK, POPULARITY, evaluate_split


@dataclass
class MetricsReport:
    metric: str
    values: list[float]
    seeds: list[int] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def std(self) -> float:
        # population std: defined (0) for a single seed
        return float(np.std(self.values))

    def format(self, digits: int = 2) -> str:
        return f"{self.mean:.{digits}f}±{self.std:.{digits}f}"

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "values": list(self.values),
            "seeds": list(self.seeds),
            "mean": self.mean,
            "std": self.std,
            "metadata": dict(self.metadata),
        }


def aggregate(reports: list[MetricsReport]) -> MetricsReport:
    if not reports:
        raise ValueError("nothing to aggregate")
    out = MetricsReport(reports[0].metric, [], [], dict(reports[0].metadata))
    for r in reports:
        out.values.extend(r.values)
        out.seeds.extend(r.seeds)
    return out


def evaluate_popularity(model: CascadeModel, ds: CascadeDataset, seed: int = 0) -> MetricsReport:
    value = evaluate_split(model, ds, "test", POPULARITY)
    return MetricsReport("msle", [value], [seed], {"n_test": len(ds.split("test"))})


def evaluate_outbreak(model: CascadeModel, ds: CascadeDataset, seed: int = 0) -> MetricsReport:
    value = evaluate_split(model, ds, "test", OUTBREAK)
    return MetricsReport("accuracy", [value], [seed], {"n_test": len(ds.split("test"))})


def build_outbreak_dataset(ds: CascadeDataset, seed: int = 0, top: float = 0.1) -> CascadeDataset:
    """Balanced binary dataset: top decile of each split vs undersampled rest.

    The threshold is the split's own 90th percentile (linear interpolation);
    labels strictly above it are outbreaks.  Negatives are a seeded uniform
    sample of equal size.
    """
    rng = np.random.default_rng(seed)
    labeled: list[LabeledCascade] = []
    for split in SPLITS:
        items = ds.split(split)
        if not items:
            if split == "test":
                raise EmptyTestSplit("outbreak dataset needs a test split")
            continue
        y = np.array([c.label for c in items])
        threshold = np.percentile(y, 100.0 * (1.0 - top))
        pos = np.flatnonzero(y > threshold)
        neg = np.flatnonzero(y <= threshold)
        if len(pos) < 2:
            raise TooFewPositives(f"split {split!r} has {len(pos)} outbreak cascades")
        neg = np.sort(rng.choice(neg, size=len(pos), replace=False))
        keep = sorted([(k, 1.0) for k in pos] + [(k, 0.0) for k in neg])
        labeled.extend(LabeledCascade(items[k].graph, lab, split) for k, lab in keep)
    return CascadeDataset(labeled, list(ds.unlabeled), ds.config)
