"""Report emission from completed run directories.

A run directory holds ``config.json``, ``curves.csv`` and ``seed{n}.tsck``
files as written by :func:`touchstream.harness.training.write_run`.
"""

from __future__ import annotations

import csv
import json
import os
from collections import defaultdict

import numpy as np

from ..backbone import BackboneConfig
from ..environment import TaskSpec, TouchstreamEnv
from ..modules import load_checkpoint
from .config import ConfigError, RunConfig
from .metrics import auc, normalize_auc
from .training import CURVE_HEADER, features_for, dataset_for


class ReportError(IOError):
    pass


def find_runs(root: str) -> list[str]:
    if not os.path.isdir(root):
        raise ReportError(f"{root}: not a directory")
    if os.path.exists(os.path.join(root, "config.json")):
        return [root]
    runs = sorted(os.path.join(root, d) for d in os.listdir(root)
                  if os.path.exists(os.path.join(root, d, "config.json")))
    if not runs:
        raise ReportError(f"{root}: no run directories (config.json) found")
    return runs


def read_curves(run_dir: str) -> dict[tuple[int, str], list[tuple[int, float]]]:
    """(seed, metric) -> sorted (trial, value) points."""
    path = os.path.join(run_dir, "curves.csv")
    if not os.path.exists(path):
        raise ReportError(f"{run_dir}: missing curves.csv")
    out = defaultdict(list)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if ",".join(reader.fieldnames or ()) != CURVE_HEADER:
            raise ReportError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            out[int(row["seed"]), row["metric"]].append((int(row["trial"]), float(row["value"])))
    return {k: sorted(v) for k, v in out.items()}


def _run_config(run_dir: str) -> RunConfig:
    try:
        with open(os.path.join(run_dir, "config.json")) as fh:
            return RunConfig.from_json(json.load(fh))
    except (OSError, json.JSONDecodeError, ConfigError) as exc:
        raise ReportError(f"{run_dir}: unreadable config ({exc})") from exc


# -- heatmaps ------------------------------------------------------------------

def pixel_grid(size: int) -> np.ndarray:
    """Every pixel centre, row-major (y outer), normalised to [-1, 1]."""
    c = (np.arange(size) + 0.5) * (2.0 / size) - 1.0
    xx, yy = np.meshgrid(c, c)
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


def reward_heatmaps(module, features, frame, size: int, prev_frame=None,
                    prev_action=None) -> np.ndarray:
    """Expected reward per horizon on the stride-1 grid, shape (k_f, S, S)."""
    dtype = module.params.flat.dtype
    D = module.spec.feature_dim
    cur = np.asarray(features(frame), dtype=dtype)
    prev = np.zeros(D, dtype) if prev_frame is None else np.asarray(features(prev_frame), dtype)
    pa = np.zeros(2, dtype) if prev_action is None else np.asarray(prev_action, dtype)
    grid = pixel_grid(size).astype(dtype)
    maps = module.reward_maps(np.concatenate([prev, cur]), pa, grid)
    return maps.expected.reshape(-1, size, size)


def sample_frame(task: TaskSpec, seed: int = 0):
    """First validation frame; for MTS the match frame after a centre touch on the sample."""
    env = TouchstreamEnv(task, np.random.default_rng(seed), "val", dataset_for(task))
    if task.kind == "MTS":
        first = env.frame
        env.step((task.size / 2, task.size / 2))
        return env.frame, first
    return env.frame, None


def write_grid_txt(path: str, grid: np.ndarray) -> None:
    with open(path, "w") as fh:
        for row in grid:
            fh.write(" ".join(f"{v:.4f}" for v in row) + "\n")


def write_pgm(path: str, grid: np.ndarray) -> None:
    """Binary grayscale PGM, min-max scaled (a constant grid maps to mid-grey)."""
    lo, hi = float(grid.min()), float(grid.max())
    if hi - lo > 1e-12:
        u8 = np.round((grid - lo) / (hi - lo) * 255).astype(np.uint8)
    else:
        u8 = np.full(grid.shape, 128, np.uint8)
    h, w = grid.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(u8.tobytes())


# -- SVG -----------------------------------------------------------------------

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def curves_svg(series: dict[str, tuple[np.ndarray, np.ndarray]], title: str,
               width: int = 480, height: int = 300) -> str:
    """Standalone line plot; values are assumed to lie in [0, 1]."""
    pad = 40
    tmax = max((float(t.max()) for t, _ in series.values() if len(t)), default=1.0) or 1.0

    def xy(t, v):
        x = pad + (width - 2 * pad) * t / tmax
        y = height - pad - (height - 2 * pad) * np.clip(v, 0, 1)
        return x, y

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" font-size="13">{title}</text>',
           f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
           f'<text x="{width / 2:.0f}" y="{height - 8}" text-anchor="middle" font-size="11">'
           f'trials (max {tmax:.0f})</text>',
           f'<text x="{pad - 4}" y="{pad + 4}" text-anchor="end" font-size="10">1</text>',
           f'<text x="{pad - 4}" y="{height - pad}" text-anchor="end" font-size="10">0</text>']
    for i, (label, (t, v)) in enumerate(sorted(series.items())):
        color = _COLORS[i % len(_COLORS)]
        x, y = xy(np.asarray(t, float), np.asarray(v, float))
        pts = " ".join(f"{a:.1f},{b:.1f}" for a, b in zip(x, y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{width - pad + 2}" y="{pad + 12 * i}" font-size="10" '
                   f'fill="{color}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# -- the report ------------------------------------------------------------------

def emit_report(runs_dir: str, out_dir: str, heatmaps: bool = True) -> dict:
    """Write curves/AUC/normalised-AUC CSVs, one SVG per run and reward heatmaps."""
    runs = find_runs(runs_dir)
    os.makedirs(out_dir, exist_ok=True)
    auc_rows = []
    per_task = defaultdict(dict)
    written = []
    curves_out = os.path.join(out_dir, "curves.csv")
    with open(curves_out, "w") as cfh:
        cfh.write("run," + CURVE_HEADER + "\n")
        for run in runs:
            name = os.path.basename(os.path.normpath(run))
            cfg = _run_config(run)
            curves = read_curves(run)
            metric = "iou" if cfg.task.kind == "LOC" else "reward"
            series = {}
            for (seed, m), pts in sorted(curves.items()):
                for trial, value in pts:
                    cfh.write(f"{name},{trial},{seed},val,{m},{value:.6f}\n")
                if m != metric or len(pts) < 2:
                    continue
                a = auc(pts)
                auc_rows.append((cfg.task.name, cfg.module_name, name, seed, m, a))
                arr = np.array(pts, float)
                series[f"seed {seed}"] = (arr[:, 0], arr[:, 1])
            seed_aucs = [r[5] for r in auc_rows if r[2] == name]
            if seed_aucs:
                per_task[cfg.task.name][name] = float(np.mean(seed_aucs))
            svg = os.path.join(out_dir, f"{name}.svg")
            with open(svg, "w") as fh:
                fh.write(curves_svg(series, f"{cfg.module_name} on {cfg.task.name} ({metric})"))
            written.append(svg)
            if heatmaps:
                written += _heatmaps_for(run, name, cfg, out_dir)
    with open(os.path.join(out_dir, "auc.csv"), "w") as fh:
        fh.write("task,module,run,seed,metric,auc\n")
        for task, module, run, seed, m, a in auc_rows:
            fh.write(f"{task},{module},{run},{seed},{m},{a:.6f}\n")
    norm_rows = []
    with open(os.path.join(out_dir, "normalized_auc.csv"), "w") as fh:
        fh.write("task,run,mean_auc,normalized_auc\n")
        for task in sorted(per_task):
            norm = normalize_auc(per_task[task])
            for run in sorted(norm):
                fh.write(f"{task},{run},{per_task[task][run]:.6f},{norm[run]:.6f}\n")
                norm_rows.append((task, run, norm[run]))
    return {"runs": runs, "auc": auc_rows, "normalized": norm_rows, "files": written}


def _heatmaps_for(run: str, name: str, cfg: RunConfig, out_dir: str) -> list[str]:
    ckpts = sorted(f for f in os.listdir(run) if f.endswith(".tsck"))
    if not ckpts:
        return []
    module, context = load_checkpoint(os.path.join(run, ckpts[0]))
    task = TaskSpec(**context["task"]) if context.get("task") else cfg.task
    backbone = BackboneConfig(**context["backbone"]) if context.get("backbone") else cfg.backbone
    features = features_for(backbone, task)
    frame, prev = sample_frame(task)
    maps = reward_heatmaps(module, features, frame, task.size, prev_frame=prev)
    out = []
    for j, grid in enumerate(maps, start=1):
        stem = os.path.join(out_dir, f"{name}_m{j}")
        write_grid_txt(stem + ".txt", grid)
        write_pgm(stem + ".pgm", grid)
        out += [stem + ".txt", stem + ".pgm"]
    return out
