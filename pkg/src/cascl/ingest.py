"""Reading, labeling, splitting and synthesizing cascade datasets.

Line format (one cascade per line, tab separated)::

    id <TAB> root_user <TAB> pub_time <TAB> M <TAB> u0:0 u0/u1:t1 u0/u1/u2:t2 ...

Each path entry is the diffusion chain from the root to an adopter followed by
that adopter's time since publication.  ``M`` counts the non-root entries.
"""
from __future__ import annotations

import gzip
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import (
    ConfigError,
    EmptyDataset,
    FractionOutOfRange,
    InconsistentCount,
    MalformedLine,
)
from .graph import Adoption, CascadeGraph, build_graph, observe, popularity, truncate

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class DatasetConfig:
    t_o: float = 1.0
    t_p: float = 24.0
    min_observed_nodes: int = 10
    max_observed_nodes: int = 100
    dataset_end_time: float | None = None
    train_frac: float = 0.5
    val_frac: float = 0.1
    test_frac: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.t_o < self.t_p):
            raise ConfigError(f"need 0 < t_o < t_p, got {self.t_o}, {self.t_p}")
        if not 1 <= self.min_observed_nodes <= self.max_observed_nodes:
            raise ConfigError("need 1 <= min_observed_nodes <= max_observed_nodes")
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if min(fracs) < 0 or abs(sum(fracs) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be non-negative and sum to 1, got {fracs}")


@dataclass(frozen=True)
class LabeledCascade:
    graph: CascadeGraph
    label: float
    split: str


@dataclass
class CascadeDataset:
    labeled: list[LabeledCascade]
    unlabeled: list[CascadeGraph]
    config: DatasetConfig = field(default_factory=DatasetConfig)

    def split(self, name: str) -> list[LabeledCascade]:
        return [c for c in self.labeled if c.split == name]

    def graphs(self, name: str) -> list[CascadeGraph]:
        if name == "unlabeled":
            return list(self.unlabeled)
        return [c.graph for c in self.labeled if c.split == name]

    def labels(self, name: str) -> np.ndarray:
        return np.array([c.label for c in self.labeled if c.split == name], dtype=np.float64)

    def counts(self) -> dict[str, int]:
        out = {s: 0 for s in SPLITS}
        for c in self.labeled:
            out[c.split] += 1
        out["unlabeled"] = len(self.unlabeled)
        return out


# -- line format -------------------------------------------------------------

def parse_line(line: str) -> CascadeGraph:
    parts = line.rstrip("\r\n").split("\t")
    if len(parts) != 5:
        raise MalformedLine(f"expected 5 tab-separated fields, got {len(parts)}")
    cid, root, pub, m, paths = parts
    try:
        pub_time = float(pub)
        m = int(m)
    except ValueError as exc:
        raise MalformedLine(f"bad pub_time or count in cascade {cid!r}: {exc}") from None
    if not root or m < 0:
        raise MalformedLine(f"bad root or count in cascade {cid!r}")

    adoptions = [Adoption(root, 0.0, None)]
    n_entries = 0
    for entry in paths.split():
        chain, sep, t = entry.rpartition(":")
        if not sep or not chain:
            raise MalformedLine(f"bad path entry {entry!r} in cascade {cid!r}")
        try:
            time = float(t)
        except ValueError:
            raise MalformedLine(f"bad time in entry {entry!r} of cascade {cid!r}") from None
        users = chain.split("/")
        if users[0] != root or any(not u for u in users):
            raise MalformedLine(f"path {chain!r} does not start at root {root!r}")
        if len(users) == 1:
            if time != 0.0:
                raise MalformedLine(f"root entry of cascade {cid!r} must have time 0")
            continue
        n_entries += 1
        adoptions.append(Adoption(users[-1], time, users[-2]))
    if n_entries != m:
        raise InconsistentCount(f"cascade {cid!r} declares {m} adoptions, found {n_entries}")
    return build_graph(adoptions, cid, pub_time)


def _fmt(x: float) -> str:
    return repr(float(x))


def serialize_graph(g: CascadeGraph) -> str:
    chains: list[str] = []
    for k, (u, p) in enumerate(zip(g.users, g.parents)):
        chains.append(u if p < 0 else f"{chains[p]}/{u}")
    paths = " ".join(f"{c}:{_fmt(t)}" for c, t in zip(chains, g.times))
    return f"{g.id}\t{g.root}\t{_fmt(g.pub_time)}\t{len(g) - 1}\t{paths}"


def _open_text(path: Path, mode: str):
    if str(path).endswith(".gz"):
        return io.TextIOWrapper(gzip.open(path, mode + "b"), encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def read_cascades(path: str | Path) -> Iterator[CascadeGraph]:
    with _open_text(Path(path), "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                yield parse_line(line)
            except MalformedLine as exc:
                raise MalformedLine(f"{path}:{lineno}: {exc}") from None


def write_cascades(path: str | Path, graphs: Iterable[CascadeGraph]) -> int:
    n = 0
    with _open_text(Path(path), "w") as fh:
        for g in graphs:
            fh.write(serialize_graph(g) + "\n")
            n += 1
    return n


def write_manifest(path: str | Path, entries: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(entries):
            fh.write(f"{key}={entries[key]}\n")


def read_manifest(path: str | Path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                key, _, value = line.partition("=")
                out[key.strip()] = value.strip()
    return out


def dataset_manifest(ds: CascadeDataset) -> dict:
    cfg = ds.config
    entries = {f"config.{k}": v for k, v in vars(cfg).items()}
    entries.update({f"count.{k}": v for k, v in ds.counts().items()})
    return entries


# -- assembly ----------------------------------------------------------------

def split_sizes(n: int, cfg: DatasetConfig) -> tuple[int, int, int]:
    n_train = int(round(n * cfg.train_frac))
    n_val = min(int(round(n * cfg.val_frac)), n - n_train)
    return n_train, n_val, n - n_train - n_val


def assemble_dataset(graphs: Iterable[CascadeGraph], cfg: DatasetConfig) -> CascadeDataset:
    """Filter, truncate, label and split full cascades."""
    graphs = list(graphs)
    end = cfg.dataset_end_time
    if end is None:
        end = max((g.pub_time + float(g.times[-1]) for g in graphs), default=0.0)

    labeled: list[tuple[CascadeGraph, int]] = []
    unlabeled: list[CascadeGraph] = []
    for g in graphs:
        obs = observe(g, cfg.t_o)
        if len(obs) < cfg.min_observed_nodes:
            continue
        obs = truncate(obs, cfg.max_observed_nodes)
        if g.pub_time + cfg.t_p <= end:
            labeled.append((obs, popularity(g, cfg.t_p)))
        else:
            unlabeled.append(obs)
    if not labeled and not unlabeled:
        raise EmptyDataset("no cascade survives the observed-size filter")

    n_train, n_val, _ = split_sizes(len(labeled), cfg)
    perm = np.random.default_rng(cfg.seed).permutation(len(labeled))
    tags = [""] * len(labeled)
    for rank, idx in enumerate(perm):
        tags[idx] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    items = [LabeledCascade(g, float(y), s) for (g, y), s in zip(labeled, tags)]
    return CascadeDataset(items, unlabeled, replace(cfg, dataset_end_time=end))


def load_dataset(path: str | Path, cfg: DatasetConfig) -> CascadeDataset:
    return assemble_dataset(read_cascades(path), cfg)


def label_fraction(ds: CascadeDataset, fraction: float, seed: int = 0) -> CascadeDataset:
    """Keep a seeded ceil(fraction * N_train) subsample of the training labels.

    Graphs whose labels are dropped join the unlabeled pool; validation and
    test cascades are untouched.
    """
    if not 0 < fraction <= 1:
        raise FractionOutOfRange(f"label fraction must lie in (0, 1], got {fraction}")
    train_idx = [k for k, c in enumerate(ds.labeled) if c.split == "train"]
    n_keep = math.ceil(fraction * len(train_idx) - 1e-9)
    if n_keep == len(train_idx):
        return CascadeDataset(list(ds.labeled), list(ds.unlabeled), ds.config)
    chosen = np.random.default_rng(seed).choice(len(train_idx), size=n_keep, replace=False)
    drop = set(train_idx) - {train_idx[i] for i in chosen}
    labeled = [c for k, c in enumerate(ds.labeled) if k not in drop]
    moved = [c.graph for k, c in enumerate(ds.labeled) if k in drop]
    return CascadeDataset(labeled, list(ds.unlabeled) + moved, ds.config)


# -- synthetic data ----------------------------------------------------------

@dataclass(frozen=True)
class SyntheticParams:
    """Knobs of the preferential-attachment cascade generator.

    ``branching_mean`` is the mean number of adopters before the ``max_size``
    cap; sizes follow a Pareto law with tail index ``size_tail``.  Adoption
    times since publication are exponential with a per-cascade rate whose
    reciprocal has mean ``1 / time_rate`` and log-spread ``rate_spread``.
    """

    branching_mean: float = 100.0
    time_rate: float = 0.3
    rate_spread: float = 0.5
    max_size: int = 1000
    size_tail: float = 2.0


def grow_cascade(cid: str, n_adopters: int, mean_delay: float, pub_time: float,
                 rng: np.random.Generator, horizon: float = math.inf) -> CascadeGraph:
    """One preferential-attachment tree; adopters after ``horizon`` are censored."""
    times = np.sort(rng.exponential(mean_delay, size=n_adopters))
    times = times[times <= horizon]
    n = len(times) + 1
    parents = np.full(n, -1, dtype=np.int64)
    urn: list[int] = []
    picks = rng.random(n)
    for k in range(1, n):
        p = 0 if not urn else urn[int(picks[k] * len(urn))]
        parents[k] = p
        urn.append(p)
        urn.append(k)
    users = [f"{cid}u0"] + [f"{cid}u{k}" for k in range(1, n)]
    return CascadeGraph(cid, users, np.concatenate([[0.0], times]), parents, pub_time)


def synthesize_cascades(n_cascades: int, params: SyntheticParams, seed: int,
                        dataset_end_time: float) -> list[CascadeGraph]:
    rng = np.random.default_rng(seed)
    out = []
    xm = params.branching_mean * (params.size_tail - 1) / params.size_tail
    for i in range(n_cascades):
        pub = float(rng.uniform(0.0, dataset_end_time))
        size = xm * (1.0 - rng.random()) ** (-1.0 / params.size_tail) if xm > 0 else 0.0
        n_adopters = int(min(params.max_size - 1, math.floor(size)))
        s = params.rate_spread
        mean_delay = float(np.exp(s * rng.standard_normal() - 0.5 * s * s)) / params.time_rate
        out.append(grow_cascade(f"s{i}", max(n_adopters, 0), mean_delay, pub, rng,
                                horizon=dataset_end_time - pub))
    return out


def generate_synthetic(n_cascades: int, cfg: DatasetConfig | None = None,
                       gen_params: SyntheticParams | None = None, seed: int = 0) -> CascadeDataset:
    """Synthesize ``n_cascades`` raw cascades and assemble them under ``cfg``.

    Without an explicit ``dataset_end_time`` the time span is three prediction
    horizons, so roughly a third of the cascades end up unlabeled.
    """
    cfg = cfg or DatasetConfig()
    gen_params = gen_params or SyntheticParams()
    end = cfg.dataset_end_time if cfg.dataset_end_time is not None else 3.0 * cfg.t_p
    graphs = synthesize_cascades(n_cascades, gen_params, seed, end)
    return assemble_dataset(graphs, replace(cfg, dataset_end_time=end))
