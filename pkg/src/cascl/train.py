"""Losses, early stopping, and the three training regimes.

* ``pretrain``: contrastive pre-training on augmented view pairs (NT-Xent).
* ``finetune``: supervised training of a downstream head (MSLE in log2
  space, or logistic loss for outbreak classification).
* ``distill``: a student regresses a frozen teacher's log2 predictions over
  labeled and unlabeled cascades.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .augment import (
    AUGSIM,
    AugRwrParams,
    AugSimParams,
    aug_sim,
    make_views,
    view_rng,
)
from .autodiff import Tensor
from .encoder import CascadeModel, ModelConfig, node_features, pad_batch
from .errors import (
    ConfigError,
    EmptySet,
    EmptyTestSplit,
    InsufficientData,
    NoLabeledData,
    NonPositiveLabel,
    NoTeacher,
    NumericFailure,
    ShapeMismatch,
)
from .graph import CascadeGraph
from .ingest import CascadeDataset
from .optim import Adam

Logger = Callable[[dict], None]

POPULARITY = "popularity"
OUTBREAK = "outbreak"


# -- losses --------------------------------------------------------------------

def nt_xent_loss(z: Tensor, temperature: float) -> Tensor:
    """Mean NT-Xent loss over all 2B anchors.

    Rows ``2i`` and ``2i+1`` of ``z`` are the two views of cascade ``i``.
    Each anchor's denominator runs over every other row of the batch.
    """
    n = z.shape[0]
    if z.data.ndim != 2 or n < 2 or n % 2:
        raise ShapeMismatch(f"nt_xent_loss expects (2B, d) with B >= 1, got {z.shape}")
    if temperature <= 0:
        raise ConfigError("temperature must be positive")
    u = ad.l2_normalize(z, axis=1)
    sim = ad.mul(ad.matmul(u, ad.transpose(u)), 1.0 / temperature)
    rows = np.arange(n)
    positive = ad.getitem(sim, (rows, rows ^ 1))
    lse = ad.logsumexp(sim, axis=1, mask=~np.eye(n, dtype=bool))
    return ad.mean(lse - positive)


def _log2_labels(labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.float64)
    if np.any(labels <= 0):
        raise NonPositiveLabel("popularity labels must be positive")
    return np.log2(labels)


def msle_loss(pred_log2: Tensor, labels) -> Tensor:
    """Mean squared error between predicted log2 popularity and log2 labels."""
    target = _log2_labels(labels)
    if pred_log2.shape != target.shape:
        raise ShapeMismatch(f"{pred_log2.shape} predictions vs {target.shape} labels")
    if target.size == 0:
        raise EmptySet("no labels")
    return ad.mean(ad.square(pred_log2 - target))


def distill_loss(teacher_log2, student_log2: Tensor) -> Tensor:
    teacher_log2 = np.asarray(teacher_log2, dtype=np.float64)
    if teacher_log2.size == 0:
        raise EmptySet("distillation needs at least one cascade")
    if student_log2.shape != teacher_log2.shape:
        raise ShapeMismatch(f"{student_log2.shape} student vs {teacher_log2.shape} teacher")
    return ad.mean(ad.square(student_log2 - teacher_log2))


def logistic_loss(logits: Tensor, targets) -> Tensor:
    y = np.asarray(targets, dtype=np.float64)
    pos = ad.mul(ad.log_sigmoid(logits), y)
    neg = ad.mul(ad.log_sigmoid(-logits), 1.0 - y)
    return -ad.mean(pos + neg)


def msle(pred_log2: np.ndarray, labels) -> float:
    return float(np.mean((np.asarray(pred_log2) - _log2_labels(labels)) ** 2))


# -- early stopping ------------------------------------------------------------

class EarlyStopping:
    """Tracks the best (lowest) monitored value; epochs count from ``first_epoch``."""

    def __init__(self, patience: int = 20, first_epoch: int = 1):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = first_epoch - 1
        self.epoch = first_epoch - 1

    def update(self, value: float) -> bool:
        self.epoch += 1
        if value < self.best:
            self.best, self.best_epoch = value, self.epoch
            return True
        return False

    @property
    def wait(self) -> int:
        return self.epoch - self.best_epoch

    @property
    def should_stop(self) -> bool:
        return self.wait >= self.patience


class StopDecision(NamedTuple):
    stop: bool
    best_epoch: int
    stop_epoch: int | None


def early_stop(history: Sequence[float], patience: int = 20) -> StopDecision:
    """Replay a monitored-loss history through the patience rule."""
    if not history:
        raise ValueError("empty history")
    es = EarlyStopping(patience)
    for v in history:
        es.update(v)
        if es.should_stop:
            return StopDecision(True, es.best_epoch, es.epoch)
    return StopDecision(False, es.best_epoch, None)


# -- shared plumbing -----------------------------------------------------------

@dataclass(frozen=True)
class AugmentSettings:
    strategy: str = AUGSIM
    sim: AugSimParams = field(default_factory=AugSimParams)
    rwr: AugRwrParams = field(default_factory=AugRwrParams)
    t_o: float = 1.0


@dataclass(frozen=True)
class ContrastiveParams:
    batch_size: int = 64
    temperature: float = 0.1
    epochs: int = 30
    patience: int = 20
    lr: float = 5e-4
    use_unlabeled: bool = True

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("contrastive batch size must be >= 2")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")


@dataclass(frozen=True)
class FinetuneParams:
    epochs: int = 100
    patience: int = 20
    batch_size: int = 64
    lr: float = 5e-4
    freeze: bool = False
    task: str = POPULARITY


@dataclass(frozen=True)
class DistillParams:
    epochs: int = 100
    patience: int = 20
    batch_size: int = 64
    lr: float = 5e-4
    pool: str = "label+unlabel"
    width_factor: float = 1.0
    augment: bool = True


@dataclass
class TrainResult:
    model: CascadeModel
    history: list[dict]
    best_epoch: int
    test_metric: float | None = None


def _rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *keys]))


class _Recorder:
    def __init__(self, phase: str, seed: int, log: Logger | None):
        self.phase, self.seed, self.log = phase, seed, log
        self.history: list[dict] = []
        self._t = time.perf_counter()

    def __call__(self, **fields) -> dict:
        now = time.perf_counter()
        rec = {"phase": self.phase, **fields, "seed": self.seed,
               "wall_ms": int(round((now - self._t) * 1000))}
        self._t = now
        for k, v in rec.items():
            if isinstance(v, float) and not math.isfinite(v):
                raise NumericFailure(f"{self.phase}: non-finite {k} at epoch {rec.get('epoch')}")
        self.history.append(rec)
        if self.log is not None:
            self.log(rec)
        return rec


def predict(model: CascadeModel, graphs: Sequence[CascadeGraph] | None = None,
            features: Sequence[np.ndarray] | None = None, batch_size: int = 256) -> np.ndarray:
    """Task-head outputs for many graphs, batched by length."""
    if features is None:
        features = [node_features(g, model.config.features) for g in graphs]
    order = sorted(range(len(features)), key=lambda k: (len(features[k]), k))
    out = np.empty(len(features))
    for s in range(0, len(order), batch_size):
        idx = order[s : s + batch_size]
        out[idx] = model.predict(pad_batch([features[k] for k in idx])).data
    return out


def _trainable(model: CascadeModel, freeze: bool) -> dict[str, Tensor]:
    j = model.config.finetune_layer
    keep = {}
    for name, t in model.params.items():
        if name.startswith("task."):
            keep[name] = t
        elif freeze:
            continue
        elif name.startswith("head."):
            if int(name.split(".")[1]) <= j:
                keep[name] = t
        else:
            keep[name] = t
    return keep


def _step(model: CascadeModel, params: dict[str, Tensor], opt: Adam, loss: Tensor) -> float:
    value = loss.item()
    if not math.isfinite(value):
        raise NumericFailure(f"non-finite loss {value}")
    ad.zero_grad(model.params)
    ad.backward(loss)
    opt.step()
    return value


# -- contrastive pre-training ----------------------------------------------------

def pretrain_pool(ds: CascadeDataset, use_unlabeled: bool = True) -> list[CascadeGraph]:
    """Training-split graphs plus (optionally) the unlabeled pool; never val/test."""
    pool = ds.graphs("train")
    if use_unlabeled:
        pool += list(ds.unlabeled)
    return pool


def pretrain(pool: Sequence[CascadeGraph], model: CascadeModel, params: ContrastiveParams,
             augment: AugmentSettings, seed: int = 0, log: Logger | None = None) -> TrainResult:
    """Contrastive pre-training; returns the checkpoint with the lowest epoch loss."""
    pool = list(pool)
    B = params.batch_size
    if len(pool) < B:
        raise InsufficientData(f"pre-training needs >= {B} cascades, got {len(pool)}")
    model = model.copy()
    spec = model.config.features
    trainable = {k: t for k, t in model.params.items() if not k.startswith("task.")}
    opt = Adam(trainable, lr=params.lr)
    stopper = EarlyStopping(params.patience)
    rec = _Recorder("pretrain", seed, log)
    best_state = model.state()
    order_rng = _rng(seed, 1)

    for epoch in range(1, params.epochs + 1):
        perm = order_rng.permutation(len(pool))
        losses = []
        for bno in range(len(pool) // B):
            feats = []
            for k in perm[bno * B : (bno + 1) * B]:
                g = pool[k]
                rngs = (view_rng(seed, g.id, 0, epoch, bno), view_rng(seed, g.id, 1, epoch, bno))
                pair = make_views(g, augment.strategy, augment.sim, augment.rwr, augment.t_o, rngs)
                feats.append(node_features(pair.view1, spec))
                feats.append(node_features(pair.view2, spec))
            z = model.project(model.encode(pad_batch(feats)))
            losses.append(_step(model, trainable, opt, nt_xent_loss(z, params.temperature)))
        loss = float(np.mean(losses))
        if stopper.update(loss):
            best_state = model.state()
        rec(epoch=epoch, loss=loss)
        if stopper.should_stop:
            break
    model.load_state(best_state)
    return TrainResult(model, rec.history, stopper.best_epoch)


# -- supervised fine-tuning ------------------------------------------------------

def _task_loss(task: str, out: Tensor, y: np.ndarray) -> Tensor:
    return msle_loss(out, y) if task == POPULARITY else logistic_loss(out, y)


def _task_value(task: str, pred: np.ndarray, y: np.ndarray) -> float:
    if task == POPULARITY:
        return msle(pred, y)
    return float(logistic_loss(Tensor(pred), y).data)


def accuracy(logits: np.ndarray, y) -> float:
    return float(np.mean((np.asarray(logits) >= 0) == (np.asarray(y) > 0.5)))


def finetune(ds: CascadeDataset, model: CascadeModel | None, params: FinetuneParams,
             seed: int = 0, log: Logger | None = None, config: ModelConfig | None = None,
             finetune_layer: int | None = None) -> TrainResult:
    """Fit a downstream head (plus the encoder unless frozen) on the training split.

    ``model=None`` trains the same architecture from a random initialization.
    Early stopping monitors the validation loss; the test split is only
    touched once, after the best checkpoint has been restored.
    """
    if params.task not in (POPULARITY, OUTBREAK):
        raise ConfigError(f"unknown task {params.task!r}")
    if model is None:
        if config is None:
            raise ConfigError("random-init fine-tuning needs a model config")
        model = CascadeModel(config, seed=int(_rng(seed, 2).integers(2**31)))
    j = model.config.finetune_layer if finetune_layer is None else finetune_layer
    model = model.with_finetune_layer(j)
    spec = model.config.features

    train = ds.split("train")
    if not train:
        raise NoLabeledData("no labeled training cascades")
    val = ds.split("val")
    x_tr = [node_features(c.graph, spec) for c in train]
    y_tr = np.array([c.label for c in train])
    x_val = [node_features(c.graph, spec) for c in val]
    y_val = np.array([c.label for c in val])
    bias = float(np.mean(_log2_labels(y_tr))) if params.task == POPULARITY else 0.0
    model.attach_task_head(int(_rng(seed, 3).integers(2**31)), bias=bias)

    trainable = _trainable(model, params.freeze)
    opt = Adam(trainable, lr=params.lr)
    stopper = EarlyStopping(params.patience)
    rec = _Recorder("finetune", seed, log)
    best_state = model.state()
    order_rng = _rng(seed, 4)
    for epoch in range(1, params.epochs + 1):
        perm = order_rng.permutation(len(train))
        losses = []
        for s in range(0, len(perm), params.batch_size):
            idx = perm[s : s + params.batch_size]
            out = model.predict(pad_batch([x_tr[k] for k in idx]))
            losses.append(_step(model, trainable, opt, _task_loss(params.task, out, y_tr[idx])))
        loss = float(np.mean(losses))
        if val:
            val_loss = _task_value(params.task, predict(model, features=x_val), y_val)
        else:
            val_loss = loss
        if stopper.update(val_loss):
            best_state = model.state()
        rec(epoch=epoch, loss=loss, val_loss=val_loss)
        if stopper.should_stop:
            break
    model.load_state(best_state)
    test_metric = None
    if ds.split("test"):
        test_metric = evaluate_split(model, ds, "test", params.task)
        key = "test_msle" if params.task == POPULARITY else "test_accuracy"
        rec(epoch=stopper.best_epoch, val_loss=stopper.best, **{key: test_metric})
    return TrainResult(model, rec.history, stopper.best_epoch, test_metric)


def evaluate_split(model: CascadeModel, ds: CascadeDataset, split: str = "test",
                   task: str = POPULARITY) -> float:
    items = ds.split(split)
    if not items:
        raise EmptyTestSplit(f"split {split!r} is empty")
    pred = predict(model, [c.graph for c in items])
    y = np.array([c.label for c in items])
    return msle(pred, y) if task == POPULARITY else accuracy(pred, y)


# -- distillation ----------------------------------------------------------------

def distill_pool(ds: CascadeDataset, pool: str) -> list[CascadeGraph]:
    parts = {"label": ds.graphs("train"), "unlabel": list(ds.unlabeled)}
    if pool == "label+unlabel":
        return parts["label"] + parts["unlabel"]
    if pool not in parts:
        raise ConfigError(f"unknown distillation pool {pool!r}")
    return parts[pool]


def distill(teacher: CascadeModel | None, ds: CascadeDataset, params: DistillParams,
            augment: AugmentSettings | None = None, seed: int = 0,
            log: Logger | None = None) -> TrainResult:
    """Train a student on the teacher's log2 predictions.

    With ``width_factor == 1`` the student starts as an exact copy of the
    teacher (self-distillation); otherwise it is a freshly initialized,
    narrower network.  When ``params.augment`` is set, the student sees an
    AugSIM view of each cascade per epoch while the teacher targets stay
    those of the clean graph.  Epoch 0 (the initial student) takes part in
    checkpoint selection on validation MSLE.
    """
    if teacher is None or not teacher.has_task_head:
        raise NoTeacher("distillation needs a fine-tuned teacher")
    augment = augment or AugmentSettings()
    pool = distill_pool(ds, params.pool)
    if not pool:
        raise EmptySet(f"distillation pool {params.pool!r} is empty")
    spec = teacher.config.features
    clean = [node_features(g, spec) for g in pool]
    targets = predict(teacher, features=clean)

    if params.width_factor == 1.0:
        student = teacher.copy()
    else:
        cfg = teacher.config
        cfg = replace(
            cfg,
            embedding_dim=max(1, int(round(cfg.embedding_dim * params.width_factor))),
            hidden_dim=max(2, 2 * int(round(cfg.hidden_dim * params.width_factor / 2))),
            projection_dim=None,
            downstream_width=None,
        )
        student = CascadeModel(cfg, seed=int(_rng(seed, 5).integers(2**31)))
        student.attach_task_head(int(_rng(seed, 6).integers(2**31)), bias=float(targets.mean()))

    val = ds.split("val")
    x_val = [node_features(c.graph, spec) for c in val]
    y_val = np.array([c.label for c in val])

    def val_msle() -> float:
        return msle(predict(student, features=x_val), y_val) if val else math.nan

    trainable = _trainable(student, freeze=False)
    opt = Adam(trainable, lr=params.lr)
    stopper = EarlyStopping(params.patience, first_epoch=0)
    rec = _Recorder("distill", seed, log)
    init_loss = float(np.mean((predict(student, features=clean) - targets) ** 2))
    v0 = val_msle()
    stopper.update(v0 if val else init_loss)
    rec(epoch=0, loss=init_loss, **({"val_loss": v0} if val else {}))
    best_state = student.state()
    order_rng = _rng(seed, 7)
    for epoch in range(1, params.epochs + 1):
        perm = order_rng.permutation(len(pool))
        losses = []
        for s in range(0, len(perm), params.batch_size):
            idx = perm[s : s + params.batch_size]
            feats = []
            for k in idx:
                g = pool[k]
                if params.augment and len(g) > 1:
                    g = aug_sim(g, augment.sim, augment.t_o, view_rng(seed, g.id, 2, epoch))
                    feats.append(node_features(g, spec))
                else:
                    feats.append(clean[k])
            out = student.predict(pad_batch(feats))
            losses.append(_step(student, trainable, opt, distill_loss(targets[idx], out)))
        loss = float(np.mean(losses))
        v = val_msle()
        if stopper.update(v if val else loss):
            best_state = student.state()
        rec(epoch=epoch, loss=loss, **({"val_loss": v} if val else {}))
        if stopper.should_stop:
            break
    student.load_state(best_state)
    test_metric = None
    if ds.split("test"):
        test_metric = evaluate_split(student, ds, "test", POPULARITY)
        rec(epoch=stopper.best_epoch, test_msle=test_metric)
    return TrainResult(student, rec.history, stopper.best_epoch, test_metric)
