"""End-to-end runs: data preparation, per-seed phases, run artifacts.

Layout of ``out_dir`` after :func:`run_experiment`::

    config.ini            resolved configuration (re-runnable via --config)
    dataset_manifest.txt  split sizes and protocol settings
    metrics.jsonl         one record per epoch / evaluation, all seeds
    seed_<s>/*.npz        checkpoints per phase
    summary.json          aggregated results; ``complete`` is false on failure
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, replace
from pathlib import Path

from .augment import fit_global_rate
from .config import ExperimentConfig
from .encoder import CascadeModel
from .errors import ConfigError, NoTeacher
from .evaluate import (
    MetricsReport,
    build_outbreak_dataset,
    evaluate_outbreak,
    evaluate_popularity,
)
from .graph import CascadeGraph
from .ingest import (
    CascadeDataset,
    dataset_manifest,
    generate_synthetic,
    label_fraction,
    load_dataset,
    read_manifest,
    write_manifest,
)
from .train import OUTBREAK, distill, finetune, pretrain, pretrain_pool

log = logging.getLogger(__name__)

SYNTHETIC = "synthetic"


def manifest_path(cascade_file: str | Path) -> Path:
    return Path(str(cascade_file) + ".manifest")


def load_source(source: str, cfg: ExperimentConfig) -> CascadeDataset:
    """A cascade file, ``synthetic``, or ``synthetic:<seed>`` for another draw.

    A file written by ``synth`` carries a sidecar manifest; its end time is
    used unless the config pins one.
    """
    dcfg = cfg.dataset_config()
    if source == SYNTHETIC or source.startswith(SYNTHETIC + ":"):
        _, _, seed = source.partition(":")
        try:
            gen_seed = int(seed) if seed else cfg.data_seed
        except ValueError:
            raise ConfigError(f"bad synthetic source {source!r}") from None
        return generate_synthetic(cfg.n_cascades, dcfg, cfg.synthetic_params(), seed=gen_seed)
    sidecar = manifest_path(source)
    if dcfg.dataset_end_time is None and sidecar.exists():
        end = read_manifest(sidecar).get("dataset_end_time")
        if end:
            dcfg = replace(dcfg, dataset_end_time=float(end))
    return load_dataset(source, dcfg)


def prepare_dataset(cfg: ExperimentConfig, full: CascadeDataset | None = None) -> CascadeDataset:
    """Target dataset for the configured task, with the label budget applied."""
    ds = load_source(cfg.dataset, cfg) if full is None else full
    if cfg.task == OUTBREAK:
        ds = build_outbreak_dataset(ds, seed=cfg.data_seed)
    if cfg.label_fraction < 1.0:
        ds = label_fraction(ds, cfg.label_fraction, seed=cfg.data_seed)
    return ds


def _source_key(source: str, cfg: ExperimentConfig) -> str:
    if source == SYNTHETIC:
        return f"{SYNTHETIC}:{cfg.data_seed}"
    return source if source.startswith(SYNTHETIC + ":") else str(Path(source).resolve())


def pretraining_pool(cfg: ExperimentConfig, full: CascadeDataset) -> list[CascadeGraph]:
    """Training and unlabeled graphs of the target plus every extra source.

    Only train/unlabeled cascades ever enter the pool, so a transfer source
    that happens to be the target dataset cannot leak its test split.
    Naming the target again as a source adds nothing.
    """
    pool = pretrain_pool(full, cfg.pretrain_unlabeled)
    seen = {_source_key(cfg.dataset, cfg)}
    for source in filter(None, (s.strip() for s in cfg.pretrain_datasets.split(","))):
        key = _source_key(source, cfg)
        if key not in seen:
            seen.add(key)
            pool += pretrain_pool(load_source(source, cfg), cfg.pretrain_unlabeled)
    return pool


class MetricsLog:
    """Append-only JSON-lines sink; also mirrors records to the logger."""

    def __init__(self, path: Path):
        self.path = path
        self._fh = open(path, "w", encoding="utf-8")

    def __call__(self, rec: dict) -> None:
        self._fh.write(json.dumps(rec) + "\n")
        self._fh.flush()
        log.info("%s", rec)

    def close(self) -> None:
        self._fh.close()


def run_seed(cfg: ExperimentConfig, ds: CascadeDataset, pool: list[CascadeGraph], lam: float,
             seed: int, out_dir: Path, sink) -> dict[str, float]:
    phases = cfg.phase_list
    seed_dir = out_dir / f"seed_{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    augment = cfg.augment_settings(lam)
    results: dict[str, float] = {}

    model = CascadeModel(cfg.model_config(), seed=seed)
    pretrained = None
    if "pretrain" in phases:
        res = pretrain(pool, model, cfg.contrastive_params(), augment, seed=seed, log=sink)
        pretrained = res.model
        pretrained.save(seed_dir / "pretrained.npz")

    teacher = None
    if "finetune" in phases:
        res = finetune(ds, pretrained, cfg.finetune_params(), seed=seed, log=sink,
                       config=cfg.model_config())
        teacher = res.model
        teacher.save(seed_dir / "finetuned.npz")
        results["finetune"] = res.test_metric

    final = teacher
    if "distill" in phases and cfg.task == OUTBREAK:
        log.warning("skipping distill: it regresses popularity, not outbreak logits")
    elif "distill" in phases:
        if teacher is None:
            raise NoTeacher("distill phase needs the finetune phase in the same run")
        res = distill(teacher, ds, cfg.distill_params(), augment, seed=seed, log=sink)
        final = res.model
        final.save(seed_dir / "student.npz")
        results["distill"] = res.test_metric

    if "eval" in phases:
        if final is None:
            raise ConfigError("eval phase needs a fine-tuned model")
        t0 = time.perf_counter()
        evaluate = evaluate_outbreak if cfg.task == OUTBREAK else evaluate_popularity
        report = evaluate(final, ds, seed)
        results["eval"] = report.values[0]
        sink({"phase": "eval", "model": "student" if "distill" in results else "finetuned",
              report.metric: report.values[0], "n_test": report.metadata["n_test"],
              "seed": seed, "wall_ms": int(round((time.perf_counter() - t0) * 1000))})
    return results


def run_experiment(cfg: ExperimentConfig) -> dict:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    started = time.perf_counter()
    metric = "accuracy" if cfg.task == OUTBREAK else "msle"
    per_phase: dict[str, MetricsReport] = {}
    summary = {"complete": False, "task": cfg.task, "metric": metric,
               "seeds": cfg.seed_list, "results": {}, "config": asdict(cfg)}
    sink = MetricsLog(out_dir / "metrics.jsonl")
    try:
        full = load_source(cfg.dataset, cfg)
        ds = prepare_dataset(cfg, full)
        write_manifest(out_dir / "dataset_manifest.txt", dataset_manifest(ds))
        pool = pretraining_pool(cfg, full) if "pretrain" in cfg.phase_list else []
        lam = fit_global_rate(pool or full.graphs("train") + list(full.unlabeled))
        summary["global_rate"] = lam
        for seed in cfg.seed_list:
            for phase, value in run_seed(cfg, ds, pool, lam, seed, out_dir, sink).items():
                per_phase.setdefault(phase, MetricsReport(metric, [])).values.append(value)
                per_phase[phase].seeds.append(seed)
        summary["complete"] = True
    finally:
        sink.close()
        summary["results"] = {k: r.to_dict() for k, r in per_phase.items()}
        summary["elapsed_s"] = round(time.perf_counter() - started, 3)
        with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2)
    return summary
