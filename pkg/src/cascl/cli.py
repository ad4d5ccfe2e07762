"""Command-line entry point: ``cascl <verb> [options]``.

Every configuration key is also a ``--kebab-case`` flag on every verb.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
import zipfile
from dataclasses import fields
from pathlib import Path

from .augment import AUGRWR, AUGSIM, aug_rwr, aug_sim_stats, fit_global_rate, view_rng
from .config import ExperimentConfig, resolve_config
from .encoder import CascadeModel
from .errors import ConfigError, DataError, NumericFailure
from .evaluate import evaluate_outbreak, evaluate_popularity
from .experiment import (
    MetricsLog,
    load_source,
    manifest_path,
    prepare_dataset,
    pretraining_pool,
    run_experiment,
)
from .ingest import dataset_manifest, serialize_graph, synthesize_cascades, write_cascades, write_manifest
from .train import OUTBREAK, distill, finetune, pretrain

log = logging.getLogger("cascl")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _flag_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="INI config file")
    parent.add_argument("--seed", help="model seed(s), comma-separated; same as --seeds")
    parent.add_argument("-v", "--verbose", action="store_true", help="log every epoch record")
    group = parent.add_argument_group("configuration keys")
    for f in fields(ExperimentConfig):
        group.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None,
                           metavar=f.type.upper(), help=f.metadata.get("help") or None)
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cascl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)
    parent = _flag_parent()

    def verb(name: str, help: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, parents=[parent], help=help, description=help)

    verb("synth", "write raw synthetic cascades to <out-dir>/cascades.txt")
    verb("ingest", "apply the observation protocol and write observed graphs and splits")
    p = verb("augment", "write one augmented view per cascade plus per-cascade stats")
    p.add_argument("--view-index", type=int, default=0)
    verb("pretrain", "contrastive pre-training; writes pretrained.npz")
    p = verb("finetune", "supervised fine-tuning; writes finetuned.npz")
    p.add_argument("--pretrained", help="checkpoint to start from (default: random init)")
    p = verb("distill", "distill a fine-tuned teacher; writes student.npz")
    p.add_argument("--teacher", help="fine-tuned checkpoint")
    p = verb("eval", "evaluate a fine-tuned checkpoint on the test split")
    p.add_argument("--model", required=True, help="checkpoint to evaluate")
    verb("run", "all configured phases for every seed")
    return parser


def _config(args: argparse.Namespace) -> ExperimentConfig:
    flags = {f.name: getattr(args, f.name) for f in fields(ExperimentConfig)}
    if args.seed is not None:
        flags["seeds"] = args.seed
    return resolve_config(args.config, flags)


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_checkpoint(path: str | None, what: str) -> CascadeModel:
    if not path:
        raise ConfigError(f"--{what} is required")
    try:
        return CascadeModel.load(path)
    except (KeyError, ValueError, zipfile.BadZipFile) as exc:
        raise DataError(f"unreadable checkpoint {path}: {exc}") from None


def cmd_synth(cfg: ExperimentConfig, args) -> dict:
    out = _out_dir(cfg)
    end = cfg.dataset_end_time or 3.0 * cfg.t_p
    graphs = synthesize_cascades(cfg.n_cascades, cfg.synthetic_params(), cfg.data_seed, end)
    path = out / "cascades.txt"
    n = write_cascades(path, graphs)
    write_manifest(manifest_path(path), {
        "dataset_end_time": repr(end), "n_cascades": n, "data_seed": cfg.data_seed,
        **{f"synthetic.{k}": v for k, v in vars(cfg.synthetic_params()).items()},
    })
    return {"cascades": str(path), "n": n, "dataset_end_time": end}


def cmd_ingest(cfg: ExperimentConfig, args) -> dict:
    out = _out_dir(cfg)
    ds = prepare_dataset(cfg)
    write_cascades(out / "observed.txt", [c.graph for c in ds.labeled] + list(ds.unlabeled))
    with open(out / "splits.tsv", "w", encoding="utf-8") as fh:
        fh.write("id\tsplit\tlabel\n")
        for c in ds.labeled:
            fh.write(f"{c.graph.id}\t{c.split}\t{c.label!r}\n")
        for g in ds.unlabeled:
            fh.write(f"{g.id}\tunlabeled\t\n")
    write_manifest(out / "dataset_manifest.txt", dataset_manifest(ds))
    return ds.counts()


def cmd_augment(cfg: ExperimentConfig, args) -> dict:
    out = _out_dir(cfg)
    ds = load_source(cfg.dataset, cfg)
    graphs = [c.graph for c in ds.labeled] + list(ds.unlabeled)
    settings = cfg.augment_settings(fit_global_rate(graphs))
    seed = cfg.seed_list[0]
    totals = {"added": 0, "removed": 0}
    with open(out / "augmented.txt", "w", encoding="utf-8") as data, \
            open(out / "augment_stats.jsonl", "w", encoding="utf-8") as stats:
        for g in graphs:
            rng = view_rng(seed, g.id, args.view_index)
            t0 = time.perf_counter()
            # the combined strategy alternates by view index, as in pre-training
            use_rwr = settings.strategy == AUGRWR or (settings.strategy != AUGSIM and args.view_index % 2)
            if use_rwr:
                view = aug_rwr(g, settings.rwr, rng)
                added, removed = 0, len(g) - len(view)
            elif len(g) > 1:
                view, st = aug_sim_stats(g, settings.sim, settings.t_o, rng)
                added, removed = st.added, st.removed
            else:
                view, added, removed = g, 0, 0
            runtime_ms = (time.perf_counter() - t0) * 1000
            data.write(serialize_graph(view) + "\n")
            stats.write(json.dumps({"id": g.id, "strategy": "augrwr" if use_rwr else "augsim",
                                    "n_before": len(g), "n_after": len(view), "added": added,
                                    "removed": removed, "runtime_ms": round(runtime_ms, 3)}) + "\n")
            totals["added"] += added
            totals["removed"] += removed
    return {"n": len(graphs), "global_rate": settings.sim.lam, **totals}


def _with_sink(cfg: ExperimentConfig, fn):
    sink = MetricsLog(_out_dir(cfg) / "metrics.jsonl")
    try:
        return fn(sink)
    finally:
        sink.close()


def cmd_pretrain(cfg: ExperimentConfig, args) -> dict:
    full = load_source(cfg.dataset, cfg)
    pool = pretraining_pool(cfg, full)
    settings = cfg.augment_settings(fit_global_rate(pool))
    seed = cfg.seed_list[0]
    model = CascadeModel(cfg.model_config(), seed=seed)
    res = _with_sink(cfg, lambda sink: pretrain(pool, model, cfg.contrastive_params(), settings,
                                                seed=seed, log=sink))
    path = _out_dir(cfg) / "pretrained.npz"
    res.model.save(path)
    return {"checkpoint": str(path), "best_epoch": res.best_epoch, "pool": len(pool)}


def cmd_finetune(cfg: ExperimentConfig, args) -> dict:
    ds = prepare_dataset(cfg)
    start = _load_checkpoint(args.pretrained, "pretrained") if args.pretrained else None
    layer = cfg.resolved_finetune_layer if start is not None else None
    res = _with_sink(cfg, lambda sink: finetune(ds, start, cfg.finetune_params(), seed=cfg.seed_list[0],
                                                log=sink, config=cfg.model_config(),
                                                finetune_layer=layer))
    path = _out_dir(cfg) / "finetuned.npz"
    res.model.save(path)
    return {"checkpoint": str(path), "best_epoch": res.best_epoch, "test": res.test_metric}


def cmd_distill(cfg: ExperimentConfig, args) -> dict:
    teacher = _load_checkpoint(args.teacher, "teacher")
    ds = prepare_dataset(cfg)
    full = [c.graph for c in ds.labeled] + list(ds.unlabeled)
    settings = cfg.augment_settings(fit_global_rate(full))
    res = _with_sink(cfg, lambda sink: distill(teacher, ds, cfg.distill_params(), settings,
                                               seed=cfg.seed_list[0], log=sink))
    path = _out_dir(cfg) / "student.npz"
    res.model.save(path)
    return {"checkpoint": str(path), "best_epoch": res.best_epoch, "test_msle": res.test_metric}


def cmd_eval(cfg: ExperimentConfig, args) -> dict:
    model = _load_checkpoint(args.model, "model")
    if not model.has_task_head:
        raise ConfigError("checkpoint has no downstream head; fine-tune it first")
    ds = prepare_dataset(cfg)
    evaluate = evaluate_outbreak if cfg.task == OUTBREAK else evaluate_popularity
    report = evaluate(model, ds, cfg.seed_list[0]).to_dict()
    (_out_dir(cfg) / "eval.json").write_text(json.dumps(report, indent=2), encoding="utf-8")
    return report


def cmd_run(cfg: ExperimentConfig, args) -> dict:
    summary = run_experiment(cfg)
    return {"complete": summary["complete"], "results": {
        k: {"mean": v["mean"], "std": v["std"]} for k, v in summary["results"].items()}}


COMMANDS = {
    "synth": cmd_synth, "ingest": cmd_ingest, "augment": cmd_augment, "pretrain": cmd_pretrain,
    "finetune": cmd_finetune, "distill": cmd_distill, "eval": cmd_eval, "run": cmd_run,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        result = COMMANDS[args.verb](cfg, args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except NumericFailure as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    print(json.dumps(result, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
