"""Command-line entry point: ``touchstream <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from ..backbone import BackboneConfig, FeatureFileError
from ..environment import TaskSpec, parse_task
from ..imagery import write_dataset
from ..modules import CheckpointError, SpecError, load_checkpoint, param_count
from ..numerics import NumericalError
from ..reference import param_table, table_matches
from .config import PRESET_ALIASES, ConfigError, RunConfig, load_config
from .report import ReportError, emit_report
from .training import evaluate, features_for, run_switch, run_training

EXIT_OK, EXIT_CONFIG, EXIT_NAN, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("touchstream")


def _task(text: str, size: int | None = None) -> TaskSpec:
    try:
        return parse_task(text, **({"size": size} if size else {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad task {text!r}: {exc}") from exc


def cmd_gen_data(args) -> int:
    task = _task(args.task, args.size)
    task = TaskSpec(**{**task.to_json(), "dataset_seed": args.seed})
    ds = task.build_dataset()
    write_dataset(ds, args.out, store_images=args.store_images)
    print(f"wrote {len(ds.records)} records ({task.name}, seed {args.seed}) to {args.out}")
    return EXIT_OK


def _report_failures(result) -> int:
    errors = [c.error for c in result.curves if c.error]
    for e in errors:
        print(e, file=sys.stderr)
    return EXIT_NAN if errors else EXIT_OK


def _summary(result) -> None:
    for c in result.curves:
        if c.points:
            print(f"seed {c.seed}: trials {c.points[-1][0]}, "
                  + ", ".join(f"{k} {v:.4f}" for k, v in sorted(c.points[-1][1].items())))


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.trials is not None:
        cfg = cfg.with_(trials=args.trials)
    if args.seeds:
        cfg = cfg.with_(seeds=tuple(args.seeds))
    result = run_training(cfg, args.out)
    _summary(result)
    return _report_failures(result)


def _checkpoint(path: str):
    module, context = load_checkpoint(path)
    backbone = BackboneConfig(**context["backbone"]) if "backbone" in context else None
    return module, context, backbone


def cmd_eval(args) -> int:
    module, context, backbone = _checkpoint(args.checkpoint)
    task = _task(args.task, backbone.size if backbone else None)
    backbone = backbone or BackboneConfig(size=task.size)
    feats = features_for(backbone, task)
    metrics = evaluate(module, task, feats, args.trials, args.seed, args.candidates)
    print(json.dumps({"task": task.name, "trials": args.trials, **metrics}, sort_keys=True))
    return EXIT_OK


def cmd_switch(args) -> int:
    module, context, backbone = _checkpoint(args.checkpoint)
    task = _task(args.task, backbone.size if backbone else None)
    backbone = backbone or BackboneConfig(size=task.size)
    if len(task.vocab) != module.spec.vocab_size:
        raise ConfigError(f"checkpoint predicts {module.spec.vocab_size} reward values, "
                          f"{task.name} has {len(task.vocab)}")
    if args.config:
        cfg = load_config(args.config).with_(task=task, backbone=backbone,
                                             module_name=module.spec.name, width=module.spec.width)
    else:
        cfg = RunConfig.build(task, module.spec.name, backbone=backbone, width=module.spec.width)
    if args.trials is not None:
        cfg = cfg.with_(trials=args.trials)
    if args.seeds:
        cfg = cfg.with_(seeds=tuple(args.seeds))
    preset = PRESET_ALIASES.get(args.preset, args.preset)
    result = run_switch(module, task, preset, cfg, out_dir=args.out)
    _summary(result)
    return _report_failures(result)


def cmd_param_count(args) -> int:
    if args.paper_table:
        print(f"{'task':<4} {'column':<12} {'task-vocab heads':>17} {'2-value heads':>14} "
              f"{'printed':>11}  match")
        ok = True
        for row in param_table():
            task, column, native, binary, ref = row
            good = table_matches(row)
            ok &= good
            print(f"{task:<4} {column:<12} {native:>17,} {binary:>14,} {ref:>11,}  "
                  f"{'yes' if good else 'NO'}")
        print("all entries match" if ok else "MISMATCH")
        return EXIT_OK if ok else 1
    cfg = load_config(args.config)
    spec = cfg.module_spec
    print(json.dumps({"module": spec.name, "task": cfg.task.name, "params": param_count(spec),
                      "tensors": {n: list(s) for n, s in spec.tensor_shapes()}}))
    return EXIT_OK


def cmd_report(args) -> int:
    out = emit_report(args.runs, args.out, heatmaps=not args.no_heatmaps)
    print(f"report for {len(out['runs'])} run(s) written to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="touchstream", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render a task dataset manifest")
    g.add_argument("--task", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--size", type=int)
    g.add_argument("--store-images", action="store_true")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train every seed of a run config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--trials", type=int)
    t.add_argument("--seeds", type=int, nargs="+")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="greedy validation of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--task", required=True)
    e.add_argument("--trials", type=int, default=500)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--candidates", type=int, default=256)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("switch", help="warm-start a checkpoint on a new task")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--task", required=True)
    s.add_argument("--preset", required=True, choices=sorted(PRESET_ALIASES) + ["none"])
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--trials", type=int)
    s.add_argument("--seeds", type=int, nargs="+")
    s.set_defaults(func=cmd_switch)

    c = sub.add_parser("param-count", help="parameter counts")
    grp = c.add_mutually_exclusive_group(required=True)
    grp.add_argument("--config")
    grp.add_argument("--paper-table", action="store_true")
    c.set_defaults(func=cmd_param_count)

    r = sub.add_parser("report", help="CSV/SVG/heatmap report over run directories")
    r.add_argument("--runs", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--no-heatmaps", action="store_true")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SpecError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NAN
    except (OSError, CheckpointError, FeatureFileError, ReportError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
