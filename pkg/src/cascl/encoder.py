"""Cascade graph encoder: node features, bidirectional GRU, projection head.

A graph becomes a sequence of node feature rows in adoption-time order.  The
rows are linearly embedded and read by a forward and a backward gated
recurrent pass; the two final states form ``h``.  The projection head maps
``h`` to ``z`` through ``head_depth`` dense layers (tanh between layers,
last layer linear).  Downstream prediction heads attach after layer
``finetune_layer`` of the projection head (0 means directly on ``h``).

Checkpoints are ``.npz`` archives of little-endian float64 arrays keyed by
parameter name plus a ``__meta__`` entry holding the JSON model config.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, EigenFailure, ShapeMismatch
from .graph import CascadeGraph

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NodeFeatureSpec:
    mode: str = "structural"
    t_o: float = 1.0
    wavelet_scale: float = 1.0
    wavelet_samples: int = 4
    wavelet_t_max: float = 10.0

    def __post_init__(self):
        if self.mode not in ("structural", "wavelet"):
            raise ConfigError(f"unknown feature mode {self.mode!r}")
        if self.mode == "wavelet" and (self.wavelet_samples < 2 or self.wavelet_scale <= 0):
            raise ConfigError("wavelet mode needs wavelet_samples >= 2 and wavelet_scale > 0")

    @property
    def dim(self) -> int:
        return 4 if self.mode == "structural" else 2 * self.wavelet_samples + 1


def laplacian(g: CascadeGraph) -> np.ndarray:
    n = len(g)
    a = np.zeros((n, n))
    k = np.arange(1, n)
    a[k, g.parents[1:]] = 1.0
    a[g.parents[1:], k] = 1.0
    return np.diag(a.sum(axis=1)) - a


def heat_kernel(g: CascadeGraph, scale: float) -> tuple[np.ndarray, np.ndarray]:
    """Heat-kernel wavelets ``U exp(-scale Λ) Uᵀ`` (column a is ψ_a) and Λ."""
    lap = laplacian(g)
    for attempt in range(3):
        try:
            evals, evecs = np.linalg.eigh(lap)
            break
        except np.linalg.LinAlgError:
            jitter = 1e-12 * 10 ** attempt
            lap = lap + jitter * np.eye(len(lap))
    else:
        raise EigenFailure(f"eigendecomposition failed for cascade {g.id!r}")
    psi = (evecs * np.exp(-scale * evals)) @ evecs.T
    return psi, evals


def node_features(g: CascadeGraph, spec: NodeFeatureSpec) -> np.ndarray:
    """Feature matrix with one row per node, rows in adoption-time order."""
    time = g.times / spec.t_o
    if spec.mode == "structural":
        depth = g.depths.astype(np.float64)
        max_depth = depth.max()
        return np.column_stack([
            time,
            np.log1p(g.degrees),
            depth / max_depth if max_depth > 0 else depth,
            g.leaf_mask.astype(np.float64),
        ])
    psi, _ = heat_kernel(g, spec.wavelet_scale)
    ts = np.linspace(0.0, spec.wavelet_t_max, spec.wavelet_samples)
    # phi[a, k] = mean_m exp(i t_k psi[m, a])
    phase = ts[None, None, :] * psi[:, :, None]
    re = np.cos(phase).mean(axis=0)
    im = np.sin(phase).mean(axis=0)
    pairs = np.stack([re, im], axis=2).reshape(len(g), -1)
    return np.column_stack([pairs, time])


@dataclass
class Batch:
    forward: np.ndarray  # (B, T, F)
    backward: np.ndarray  # (B, T, F), each row reversed within its length
    mask: np.ndarray  # (B, T)

    def __len__(self) -> int:
        return self.forward.shape[0]


def pad_batch(features: Sequence[np.ndarray]) -> Batch:
    if not features:
        raise ShapeMismatch("empty batch")
    lengths = [len(f) for f in features]
    if min(lengths) < 1:
        raise ShapeMismatch("every graph needs at least one node")
    B, T, F = len(features), max(lengths), features[0].shape[1]
    fwd = np.zeros((B, T, F))
    bwd = np.zeros((B, T, F))
    mask = np.zeros((B, T), dtype=bool)
    for b, f in enumerate(features):
        if f.shape[1] != F:
            raise ShapeMismatch("feature widths differ within a batch")
        n = len(f)
        fwd[b, :n] = f
        bwd[b, :n] = f[::-1]
        mask[b, :n] = True
    return Batch(fwd, bwd, mask)


def make_batch(graphs: Sequence[CascadeGraph], spec: NodeFeatureSpec) -> Batch:
    return pad_batch([node_features(g, spec) for g in graphs])


@dataclass(frozen=True)
class ModelConfig:
    features: NodeFeatureSpec = field(default_factory=NodeFeatureSpec)
    embedding_dim: int = 64
    hidden_dim: int = 128
    projection_dim: int | None = None
    head_depth: int = 4
    finetune_layer: int = 4
    downstream_width: int | None = None

    def __post_init__(self):
        if self.hidden_dim < 2 or self.hidden_dim % 2:
            raise ConfigError("hidden_dim must be an even number >= 2")
        if not 0 <= self.head_depth <= 4:
            raise ConfigError("head_depth must lie in [0, 4]")
        if not 0 <= self.finetune_layer <= self.head_depth:
            raise ConfigError("finetune_layer must lie in [0, head_depth]")

    @property
    def z_dim(self) -> int:
        if self.head_depth == 0:
            return self.hidden_dim
        return self.projection_dim or self.hidden_dim

    @property
    def task_input_dim(self) -> int:
        return self.z_dim if self.finetune_layer == self.head_depth else self.hidden_dim

    @property
    def task_width(self) -> int:
        return self.downstream_width or max(self.hidden_dim // 2, 1)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        raw = json.loads(text)
        raw["features"] = NodeFeatureSpec(**raw["features"])
        return cls(**raw)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class CascadeModel:
    """Encoder, projection head and (optionally) a downstream task head."""

    def __init__(self, config: ModelConfig, seed: int | None = 0, zero: bool = False):
        self.config = config
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        f, e, d = config.features.dim, config.embedding_dim, config.hidden_dim
        hh = d // 2
        self._init("emb.w", rng, (f, e), zero)
        self._init("emb.b", rng, (e,), True)
        for side in ("gru_f", "gru_b"):
            self._init(f"{side}.w", rng, (e, 3 * hh), zero)
            self._init(f"{side}.u", rng, (hh, 3 * hh), zero)
            self._init(f"{side}.b", rng, (3 * hh,), True)
        for k in range(1, config.head_depth + 1):
            out = config.z_dim if k == config.head_depth else d
            self._init(f"head.{k}.w", rng, (d, out), zero)
            self._init(f"head.{k}.b", rng, (out,), True)

    def _init(self, name: str, rng, shape, zero: bool) -> None:
        if zero or len(shape) == 1:
            data = np.zeros(shape)
        else:
            data = _glorot(rng, *shape)
        self.params[name] = Tensor(data, requires_grad=True, name=name)

    @property
    def has_task_head(self) -> bool:
        return "task.1.w" in self.params

    def attach_task_head(self, seed: int, bias: float = 0.0) -> None:
        """(Re)initialize the downstream head that reads layer ``finetune_layer``."""
        rng = np.random.default_rng(seed)
        cfg = self.config
        self.params["task.1.w"] = Tensor(_glorot(rng, cfg.task_input_dim, cfg.task_width), True, "task.1.w")
        self.params["task.1.b"] = Tensor(np.zeros(cfg.task_width), True, "task.1.b")
        self.params["task.2.w"] = Tensor(_glorot(rng, cfg.task_width, 1), True, "task.2.w")
        self.params["task.2.b"] = Tensor(np.full(1, float(bias)), True, "task.2.b")

    def with_finetune_layer(self, j: int) -> "CascadeModel":
        out = self.copy()
        out.config = replace(self.config, finetune_layer=j)
        for k in [k for k in out.params if k.startswith("task.")]:
            del out.params[k]
        return out

    # -- forward passes --------------------------------------------------

    def encode(self, batch: Batch) -> Tensor:
        p = self.params
        if batch.forward.shape[2] != self.config.features.dim:
            raise ShapeMismatch(
                f"feature width {batch.forward.shape[2]} != model input {self.config.features.dim}")
        states = []
        for side, x in (("gru_f", batch.forward), ("gru_b", batch.backward)):
            e = ad.matmul(Tensor(x), p["emb.w"]) + p["emb.b"]
            states.append(ad.gru_sequence(e, batch.mask, p[f"{side}.w"], p[f"{side}.u"], p[f"{side}.b"]))
        return ad.concat(states, axis=1)

    def head_activations(self, h: Tensor, upto: int | None = None) -> list[Tensor]:
        """Activations ``[h, a_1, ..., a_upto]`` of the projection head."""
        depth = self.config.head_depth
        upto = depth if upto is None else upto
        acts = [h]
        for k in range(1, upto + 1):
            a = ad.matmul(acts[-1], self.params[f"head.{k}.w"]) + self.params[f"head.{k}.b"]
            acts.append(a if k == depth else ad.tanh(a))
        return acts

    def project(self, h: Tensor) -> Tensor:
        return self.head_activations(h)[-1]

    def task_output(self, a: Tensor) -> Tensor:
        p = self.params
        hidden = ad.tanh(ad.matmul(a, p["task.1.w"]) + p["task.1.b"])
        out = ad.matmul(hidden, p["task.2.w"]) + p["task.2.b"]
        return ad.reshape(out, (out.shape[0],))

    def predict(self, batch: Batch) -> Tensor:
        """Scalar output per graph: log2 popularity, or an outbreak logit."""
        if not self.has_task_head:
            raise ConfigError("model has no downstream head; call attach_task_head first")
        h = self.encode(batch)
        a = self.head_activations(h, self.config.finetune_layer)[-1]
        return self.task_output(a)

    # -- parameter handling ---------------------------------------------

    def copy(self) -> "CascadeModel":
        out = object.__new__(CascadeModel)
        out.config = self.config
        out.params = {k: Tensor(t.data.copy(), True, k) for k, t in self.params.items()}
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.params = {k: Tensor(np.array(v, dtype=np.float64), True, k) for k, v in state.items()}

    def save(self, path: str | Path) -> None:
        meta = json.dumps({"version": CHECKPOINT_VERSION, "config": json.loads(self.config.to_json())})
        arrays = {k: t.data.astype("<f8") for k, t in self.params.items()}
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.array(meta), **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "CascadeModel":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["__meta__"]))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ConfigError(f"unsupported checkpoint version {meta.get('version')}")
            out = object.__new__(cls)
            out.config = ModelConfig.from_json(json.dumps(meta["config"]))
            out.load_state({k: data[k] for k in data.files if k != "__meta__"})
        return out


def encode(g: CascadeGraph, model: CascadeModel) -> np.ndarray:
    """Representation ``h`` of a single graph."""
    return model.encode(make_batch([g], model.config.features)).data[0]


def project(h, model: CascadeModel) -> np.ndarray:
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    return model.project(Tensor(h)).data[0]
