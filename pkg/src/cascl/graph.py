"""Cascade graphs: rooted diffusion trees with per-node adoption times.

A :class:`CascadeGraph` stores its nodes in adoption-time order (root first),
as parallel arrays of user ids, times and parent indices.  Graphs are
immutable; every operation returns a new graph.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CycleDetected,
    DanglingParent,
    InvalidGraph,
    MultipleRoots,
    NegativeTime,
)


@dataclass(frozen=True)
class Adoption:
    user: str
    time: float
    parent: str | None = None


@dataclass(frozen=True)
class ObservationWindow:
    t_o: float
    t_p: float

    def __post_init__(self):
        if not (0 < self.t_o < self.t_p):
            raise InvalidGraph(f"need 0 < t_o < t_p, got t_o={self.t_o}, t_p={self.t_p}")


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class CascadeGraph:
    """Validated diffusion tree.

    Build instances with :func:`build_graph`; the constructor trusts its
    arguments (node 0 is the root, ``parents[k] < k`` for every ``k > 0``).
    """

    __slots__ = ("id", "users", "times", "parents", "pub_time", "__dict__")

    def __init__(self, id: str, users: Sequence[str], times, parents, pub_time: float = 0.0):
        self.id = str(id)
        self.users = tuple(users)
        self.times = _readonly(np.asarray(times, dtype=np.float64).copy())
        self.parents = _readonly(np.asarray(parents, dtype=np.int64).copy())
        self.pub_time = float(pub_time)

    def __len__(self) -> int:
        return len(self.users)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CascadeGraph):
            return NotImplemented
        return (
            self.id == other.id
            and self.pub_time == other.pub_time
            and self.users == other.users
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.parents, other.parents)
        )

    def __hash__(self):
        return hash((self.id, self.users))

    def __repr__(self) -> str:
        return f"CascadeGraph(id={self.id!r}, n={len(self)}, pub_time={self.pub_time})"

    @property
    def nodes(self) -> tuple[Adoption, ...]:
        users = self.users
        return tuple(
            Adoption(u, float(t), users[p] if p >= 0 else None)
            for u, t, p in zip(users, self.times, self.parents)
        )

    @property
    def edges(self) -> list[tuple[str, str]]:
        return [(self.users[p], self.users[k]) for k, p in enumerate(self.parents) if p >= 0]

    @property
    def root(self) -> str:
        return self.users[0]

    @cached_property
    def index(self) -> dict[str, int]:
        return {u: k for k, u in enumerate(self.users)}

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        kids: list[list[int]] = [[] for _ in self.users]
        for k, p in enumerate(self.parents):
            if p >= 0:
                kids[p].append(k)
        return tuple(tuple(c) for c in kids)

    @cached_property
    def degrees(self) -> np.ndarray:
        """Undirected-tree degree of every node."""
        deg = np.bincount(self.parents[1:], minlength=len(self)).astype(np.int64)
        deg[1:] += 1
        return _readonly(deg)

    @cached_property
    def depths(self) -> np.ndarray:
        d = np.zeros(len(self), dtype=np.int64)
        par = self.parents
        for k in range(1, len(self)):
            d[k] = d[par[k]] + 1
        return _readonly(d)

    @cached_property
    def leaf_mask(self) -> np.ndarray:
        has_child = np.zeros(len(self), dtype=bool)
        has_child[self.parents[1:]] = True
        return _readonly(~has_child)


def _order(times: list[float], parents: list[int], depth: list[int]) -> list[int]:
    order = sorted(range(len(times)), key=lambda k: (times[k], k))
    pos = {k: i for i, k in enumerate(order)}
    if all(parents[k] < 0 or pos[parents[k]] < pos[k] for k in order):
        return order
    # equal-time parent/child listed child-first: break ties by depth instead
    return sorted(range(len(times)), key=lambda k: (times[k], depth[k], k))


def build_graph(adoptions: Iterable[Adoption], id: str = "", pub_time: float = 0.0) -> CascadeGraph:
    """Validate adoptions and assemble a time-sorted :class:`CascadeGraph`."""
    adoptions = list(adoptions)
    if not adoptions:
        raise InvalidGraph("a cascade needs at least one adoption")
    users = [str(a.user) for a in adoptions]
    times = [float(a.time) for a in adoptions]
    for u, t in zip(users, times):
        if not math.isfinite(t):
            raise InvalidGraph(f"non-finite adoption time for {u!r}")
        if t < 0:
            raise NegativeTime(f"adoption time {t} < 0 for {u!r}")
    index: dict[str, int] = {}
    for k, u in enumerate(users):
        if u in index:
            raise InvalidGraph(f"duplicate node id {u!r} in cascade {id!r}")
        index[u] = k

    parents: list[int] = []
    roots: list[int] = []
    for k, a in enumerate(adoptions):
        if a.parent is None:
            roots.append(k)
            parents.append(-1)
            continue
        p = index.get(str(a.parent))
        if p is None:
            raise DanglingParent(f"parent {a.parent!r} of {users[k]!r} not in cascade {id!r}")
        if p == k:
            raise CycleDetected(f"{users[k]!r} adopts from itself")
        parents.append(p)
    if len(roots) > 1:
        raise MultipleRoots(f"cascade {id!r} has {len(roots)} parentless nodes")
    if not roots:
        raise CycleDetected(f"cascade {id!r} has no root, parent links form a cycle")
    root = roots[0]

    depth = [-1] * len(users)
    depth[root] = 0
    for k in range(len(users)):
        path = []
        v = k
        while depth[v] < 0:
            path.append(v)
            v = parents[v]
            if len(path) > len(users):
                raise CycleDetected(f"cycle through {users[k]!r} in cascade {id!r}")
        for step, w in enumerate(reversed(path), start=1):
            depth[w] = depth[v] + step

    if times[root] != 0.0:
        raise InvalidGraph(f"root {users[root]!r} must have time 0, got {times[root]}")
    for k, p in enumerate(parents):
        if p >= 0 and times[p] > times[k]:
            raise InvalidGraph(
                f"{users[k]!r} (t={times[k]}) adopts before its parent {users[p]!r} (t={times[p]})"
            )

    order = _order(times, parents, depth)
    pos = {k: i for i, k in enumerate(order)}
    return CascadeGraph(
        id,
        [users[k] for k in order],
        [times[k] for k in order],
        [pos[parents[k]] if parents[k] >= 0 else -1 for k in order],
        pub_time,
    )


def subgraph(g: CascadeGraph, keep: np.ndarray) -> CascadeGraph:
    """Induced subgraph on a boolean node mask that is closed under parents."""
    keep = np.asarray(keep, dtype=bool)
    if keep.all():
        return g
    remap = np.cumsum(keep) - 1
    par = g.parents[keep]
    new_par = np.where(par >= 0, remap[np.maximum(par, 0)], -1)
    users = [u for u, k in zip(g.users, keep) if k]
    return CascadeGraph(g.id, users, g.times[keep], new_par, g.pub_time)


def observe(g: CascadeGraph, t_o: float) -> CascadeGraph:
    """Restrict ``g`` to adoptions strictly before ``t_o``; the root is always kept."""
    keep = g.times < t_o
    keep[0] = True
    return subgraph(g, keep)


def truncate(g: CascadeGraph, max_nodes: int) -> CascadeGraph:
    """Keep the first ``max_nodes`` adoptions in time order."""
    if len(g) <= max_nodes:
        return g
    keep = np.zeros(len(g), dtype=bool)
    keep[:max_nodes] = True
    return subgraph(g, keep)


def popularity(g: CascadeGraph, t_p: float) -> int:
    """Number of nodes adopted at or before ``t_p``, root included."""
    return max(1, int(np.count_nonzero(g.times <= t_p)))


@dataclass(frozen=True)
class GraphStats:
    degree: dict[str, int]
    leaves: frozenset[str]
    depth: dict[str, int]
    mean_path_length: float


def graph_stats(g: CascadeGraph) -> GraphStats:
    depths = g.depths
    mean_path = float(depths[1:].mean()) if len(g) > 1 else 0.0
    return GraphStats(
        degree={u: int(d) for u, d in zip(g.users, g.degrees)},
        leaves=frozenset(u for u, leaf in zip(g.users, g.leaf_mask) if leaf),
        depth={u: int(d) for u, d in zip(g.users, depths)},
        mean_path_length=mean_path,
    )


def check_tree(g: CascadeGraph) -> None:
    """Re-verify the structural invariants of ``g``; raise on the first violation."""
    n = len(g)
    if n == 0:
        raise InvalidGraph("empty graph")
    par = g.parents
    if par[0] != -1:
        raise MultipleRoots("node 0 is not the root")
    if n > 1:
        if np.any(par[1:] < 0):
            raise MultipleRoots("more than one parentless node")
        if np.any(par[1:] >= np.arange(1, n)):
            raise CycleDetected("parent listed after child")
        if np.any(g.times[par[1:]] > g.times[1:]):
            raise InvalidGraph("child adopts before its parent")
    if len(set(g.users)) != n:
        raise InvalidGraph("duplicate node ids")
    if g.times[0] != 0.0 or np.any(g.times < 0):
        raise NegativeTime("times must start at 0 and be non-negative")
    if np.any(np.diff(g.times) < 0):
        raise InvalidGraph("nodes not sorted by time")
