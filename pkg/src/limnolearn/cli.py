"""Command-line entry point.

Commands: simulate | pretrain | finetune | evaluate | export-genemap.
Every artifact embeds the resolved config hash and seed; downstream
commands refuse artifacts produced under a different config.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import pipeline
from .checkpoint import load_model, save_model
from .evolution import export_fitness_trace, export_gene_map
from .finetune import evaluate
from .lake import export_dataset, import_dataset
from .runconfig import RunConfig, load_config


class CommandError(RuntimeError):
    pass


def _prepare(args) -> tuple[RunConfig, Path, dict]:
    config = load_config(args.config, overrides={
        "seed": args.seed, "workers": args.workers, "out_dir": args.out})
    out_dir = Path(config.io.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.yaml").write_text(config.to_yaml())
    meta = {"config_hash": config.config_hash(), "seed": config.seed}
    return config, out_dir, meta


def _workers(config: RunConfig) -> int:
    return config.workers if config.workers > 0 else (os.cpu_count() or 1)


def _check_meta(meta: dict, expected: dict, path):
    if meta.get("config_hash") != expected["config_hash"]:
        raise CommandError(
            f"{path}: config hash {meta.get('config_hash')} does not match "
            f"current config {expected['config_hash']}")


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise CommandError(f"missing {what}: {path}")
    return path


def cmd_simulate(args) -> int:
    config, out_dir, meta = _prepare(args)
    trajectories = pipeline.simulate_pretrain_world(config)
    export_dataset(trajectories, out_dir / "dataset.csv", metadata=meta)
    print(f"simulate: wrote {len(trajectories)} lakes to "
          f"{out_dir / 'dataset.csv'}")
    return 0


def cmd_pretrain(args) -> int:
    config, out_dir, meta = _prepare(args)
    dataset = _require(out_dir / "dataset.csv", "dataset (run simulate)")
    trajectories = import_dataset(dataset)
    data = pipeline.build_pretrain_data(config, trajectories)
    best, _, trace = pipeline.pretrain(config, data,
                                       workers=_workers(config))
    save_model(best, out_dir / "pretrained.npz", metadata=meta)
    export_gene_map(best, out_dir / "genemap", metadata=meta)
    export_fitness_trace(trace, out_dir / "fitness_trace.csv", metadata=meta)
    print(f"pretrain: best validation loss {best.fitness:.6f}; "
          f"checkpoint at {out_dir / 'pretrained.npz'}")
    return 0


def cmd_finetune(args) -> int:
    config, out_dir, meta = _prepare(args)
    ckpt = _require(Path(args.checkpoint) if args.checkpoint
                    else out_dir / "pretrained.npz",
                    "pretrained checkpoint (run pretrain)")
    pretrained, ckpt_meta = load_model(ckpt)
    _check_meta(ckpt_meta, meta, ckpt)
    world = pipeline.build_experiment_world(config)
    result = pipeline.run_experiment(config, pretrained, world)
    for variant, fit in result["fitted"].items():
        if fit.get("temp_model") is not None:
            save_model(fit["temp_model"],
                       out_dir / f"finetuned_{variant}_temperature.npz",
                       metadata=meta)
        if fit.get("do_model") is not None:
            save_model(fit["do_model"],
                       out_dir / f"finetuned_{variant}_oxygen.npz",
                       metadata=meta)
    (out_dir / "metrics.json").write_text(
        json.dumps({"config_hash": meta["config_hash"], "seed": config.seed,
                    "metrics": result["metrics"]}, sort_keys=True, indent=1)
        + "\n")
    print(f"finetune: wrote variant checkpoints and metrics to {out_dir}")
    return 0


def cmd_evaluate(args) -> int:
    config, out_dir, meta = _prepare(args)
    world = pipeline.build_experiment_world(config)
    metrics = {}
    for variant in config.finetune.variants:
        temp_path = out_dir / f"finetuned_{variant}_temperature.npz"
        do_path = _require(out_dir / f"finetuned_{variant}_oxygen.npz",
                           f"fine-tuned checkpoint for variant {variant!r} "
                           "(run finetune)")
        do_model, do_meta = load_model(do_path)
        _check_meta(do_meta, meta, do_path)
        temp_model = None
        if temp_path.exists():
            temp_model, temp_meta = load_model(temp_path)
            _check_meta(temp_meta, meta, temp_path)
        coupled = variant in ("pgfm", "no_pretrain", "no_physics")
        metrics[variant] = evaluate(
            temp_model, do_model, world.eval,
            temp_model_for_do=temp_model if coupled else None,
            window=config.eval.window)
    payload = {"config_hash": meta["config_hash"], "seed": config.seed,
               "metrics": metrics}
    (out_dir / "metrics.json").write_text(
        json.dumps(payload, sort_keys=True, indent=1) + "\n")
    _write_comparison_table(metrics, out_dir / "comparison_table.csv", meta)
    print(f"evaluate: wrote {out_dir / 'metrics.json'}")
    return 0


def _write_comparison_table(metrics: dict, path: Path, meta: dict):
    import csv
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={meta['config_hash']} seed={meta['seed']}\n")
        writer = csv.writer(fh)
        writer.writerow(["variant", "temp_rmse_all", "do_rmse_all",
                         "do_rmse_summer", "energy_inconsistency",
                         "mass_inconsistency", "surface_temp_do_corr"])
        for variant, m in metrics.items():
            temp = m.get("temperature", {})
            do = m.get("do", {})
            writer.writerow([
                variant,
                "%.6g" % temp.get("all", float("nan")),
                "%.6g" % do.get("all", float("nan")),
                "%.6g" % do.get("stratified", float("nan")),
                "%.6g" % m.get("energy_inconsistency", float("nan")),
                "%.6g" % m.get("mass_inconsistency", float("nan")),
                "%.6g" % m.get("surface_temp_do_correlation", float("nan")),
            ])


def cmd_export_genemap(args) -> int:
    config, out_dir, meta = _prepare(args)
    ckpt = _require(Path(args.checkpoint) if args.checkpoint
                    else out_dir / "pretrained.npz", "checkpoint")
    model, ckpt_meta = load_model(ckpt)
    _check_meta(ckpt_meta, meta, ckpt)
    paths = export_gene_map(model, out_dir / "genemap", metadata=meta)
    print(f"export-genemap: wrote {paths[0]} and {paths[1]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="limnolearn",
        description="Simulated-lake pretraining and physics-constrained "
                    "fine-tuning pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, takes_ckpt in (
            ("simulate", cmd_simulate, False),
            ("pretrain", cmd_pretrain, False),
            ("finetune", cmd_finetune, True),
            ("evaluate", cmd_evaluate, False),
            ("export-genemap", cmd_export_genemap, True)):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="YAML config path")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        if takes_ckpt:
            p.add_argument("--checkpoint", default=None)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CommandError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"limnolearn {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
