"""Perturbed views of cascade graphs.

``aug_sim`` re-simulates diffusion: nodes attract a new adopter with a
degree-proportional probability, then leaves are dropped with a probability
proportional to their parent's degree.  ``aug_rwr`` keeps the nodes visited
by a degree-biased random walk with restart from the root.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ConfigError, NoAdoptions, NotALeaf, SingletonGraph
from .graph import CascadeGraph, subgraph

AUGSIM = "augsim"
AUGRWR = "augrwr"
COMBINED = "augsim+augrwr"
STRATEGIES = (AUGSIM, AUGRWR, COMBINED)


@dataclass(frozen=True)
class AugSimParams:
    eta: float = 0.1
    theta_t: float = 0.5
    lam: float = 1.0
    strength_mode: str = "absolute"

    def __post_init__(self):
        if self.eta <= 0:
            raise ConfigError("eta must be positive")
        if not 0 <= self.theta_t <= 1:
            raise ConfigError("theta_t must lie in [0, 1]")
        if self.lam <= 0:
            raise ConfigError("lambda must be positive")
        if self.strength_mode not in ("absolute", "per_node"):
            raise ConfigError(f"unknown strength_mode {self.strength_mode!r}")

    def strength(self, n_nodes: int) -> float:
        return self.eta * n_nodes if self.strength_mode == "per_node" else self.eta


@dataclass(frozen=True)
class AugRwrParams:
    restart_prob: float = 0.2
    walk_budget_factor: float = 3.0

    def __post_init__(self):
        if not 0 < self.restart_prob < 1:
            raise ConfigError("restart_prob must lie in (0, 1)")
        if self.walk_budget_factor < 0:
            raise ConfigError("walk_budget_factor must be non-negative")


@dataclass(frozen=True)
class ViewPair:
    view1: CascadeGraph
    view2: CascadeGraph


def fit_global_rate(graphs: Iterable[CascadeGraph]) -> float:
    """Exponential MLE of the rate over all non-root adoption times."""
    total = 0.0
    count = 0
    for g in graphs:
        total += float(g.times[1:].sum())
        count += len(g) - 1
    if count == 0 or total <= 0:
        raise NoAdoptions("no non-root adoption with positive time to fit a rate on")
    return count / total


def fit_dataset_rate(ds) -> float:
    return fit_global_rate([c.graph for c in ds.labeled] + list(ds.unlabeled))


def attractiveness(g: CascadeGraph, params: AugSimParams) -> np.ndarray:
    """Per-node probability of attracting one new adopter, clamped to [0, 1]."""
    if len(g) < 2:
        raise SingletonGraph(f"cascade {g.id!r} has a single node")
    deg = g.degrees.astype(np.float64)
    return np.minimum(params.strength(len(g)) * deg / deg.sum(), 1.0)


def new_adoption_time(t_j: float, t_local: float, t_global: float, theta_t: float,
                      t_o: float) -> float:
    """Blend local and global reaction times, clamped to ``[t_j, t_o]``."""
    t_new = t_j + theta_t * t_local + (1.0 - theta_t) * t_global
    return float(min(max(t_new, t_j), max(t_o, t_j)))


def sample_adoption_time(t_j: float, t_local: float, params: AugSimParams, t_o: float,
                         rng: np.random.Generator) -> float:
    t_global = 0.0 if params.theta_t == 1.0 else rng.exponential(1.0 / params.lam)
    return new_adoption_time(t_j, t_local, t_global, params.theta_t, t_o)


def _removal_probs(parents: np.ndarray, leaf: np.ndarray, degree: np.ndarray,
                   strength: float) -> np.ndarray:
    w = degree[parents[leaf]].astype(np.float64)
    return np.minimum(strength * w / w.sum(), 1.0)


def removal_prob(g: CascadeGraph, leaf: int | str, params: AugSimParams) -> float:
    """Removal probability of one leaf of ``g`` (index or user id)."""
    k = g.index[leaf] if isinstance(leaf, str) else int(leaf)
    if k == 0 or not g.leaf_mask[k]:
        raise NotALeaf(f"node {g.users[k]!r} is not a removable leaf")
    leaves = np.flatnonzero(g.leaf_mask)
    leaves = leaves[leaves != 0]
    probs = _removal_probs(g.parents, leaves, g.degrees, params.strength(len(g)))
    return float(probs[np.searchsorted(leaves, k)])


@dataclass(frozen=True)
class AugStats:
    added: int
    removed: int


def aug_sim_stats(g: CascadeGraph, params: AugSimParams, t_o: float,
                  rng: np.random.Generator) -> tuple[CascadeGraph, AugStats]:
    a = attractiveness(g, params)
    n = len(g)
    t_local = float(g.times.mean())

    hit = np.flatnonzero(rng.random(n) <= a)
    new_times = [sample_adoption_time(float(g.times[j]), t_local, params, t_o, rng) for j in hit]

    # expanded graph, added nodes appended after the originals
    parents = np.concatenate([g.parents, hit]).astype(np.int64)
    times = np.concatenate([g.times, np.asarray(new_times, dtype=np.float64)])
    m = len(parents)
    degree = np.bincount(parents[1:], minlength=m)
    degree[1:] += 1
    has_child = np.zeros(m, dtype=bool)
    has_child[parents[1:]] = True
    leaves = np.flatnonzero(~has_child)
    leaves = leaves[leaves != 0]

    keep = np.ones(m, dtype=bool)
    if len(leaves):
        r = _removal_probs(parents, leaves, degree, params.strength(n))
        keep[leaves[rng.random(len(leaves)) <= r]] = False

    taken = set(g.users)
    users = list(g.users)
    k = 0
    for _ in hit:
        while f"{g.id}~a{k}" in taken:
            k += 1
        users.append(f"{g.id}~a{k}")
        k += 1

    # stable time sort; an added node never precedes its parent (t_new >= t_j)
    order = np.lexsort((np.arange(m), times))
    order = order[keep[order]]
    pos = np.full(m, -1, dtype=np.int64)
    pos[order] = np.arange(len(order))
    new_par = np.where(parents[order] >= 0, pos[np.maximum(parents[order], 0)], -1)
    out = CascadeGraph(g.id, [users[i] for i in order], times[order], new_par, g.pub_time)
    return out, AugStats(added=len(hit), removed=int(m - keep.sum()))


def aug_sim(g: CascadeGraph, params: AugSimParams, t_o: float, rng: np.random.Generator) -> CascadeGraph:
    return aug_sim_stats(g, params, t_o, rng)[0]


def aug_rwr(g: CascadeGraph, params: AugRwrParams, rng: np.random.Generator,
            budget: int | None = None) -> CascadeGraph:
    """Subgraph induced on the nodes visited by a random walk with restart."""
    n = len(g)
    if budget is None:
        budget = int(params.walk_budget_factor * n)
    if n == 1 or budget <= 0:
        return subgraph(g, np.eye(1, n, dtype=bool)[0])
    deg = g.degrees.astype(np.float64)
    nbrs = [np.array(([p] if p >= 0 else []) + list(c), dtype=np.int64)
            for p, c in zip(g.parents, g.children)]
    cum = [np.cumsum(deg[nb]) for nb in nbrs]

    visited = np.zeros(n, dtype=bool)
    visited[0] = True
    draws = rng.random((budget, 2))
    u = 0
    for restart, pick in draws:
        if restart < params.restart_prob:
            u = 0
            continue
        c = cum[u]
        u = int(nbrs[u][min(np.searchsorted(c, pick * c[-1], side="right"), len(c) - 1)])
        visited[u] = True
    return subgraph(g, visited)


def view_rng(run_seed: int, cascade_id: str, view_index: int, *extra: int) -> np.random.Generator:
    """Independent stream per (run, cascade, view); stable across processes."""
    key = [int(run_seed), zlib.crc32(cascade_id.encode("utf-8")), int(view_index), *map(int, extra)]
    return np.random.default_rng(np.random.SeedSequence(key))


def make_views(g: CascadeGraph, strategy: str, sim: AugSimParams, rwr: AugRwrParams,
               t_o: float, rngs: tuple[np.random.Generator, np.random.Generator]) -> ViewPair:
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown augmentation strategy {strategy!r}")
    views = []
    for k, rng in enumerate(rngs):
        use_sim = strategy == AUGSIM or (strategy == COMBINED and k == 0)
        views.append(aug_sim(g, sim, t_o, rng) if use_sim else aug_rwr(g, rwr, rng))
    return ViewPair(*views)
