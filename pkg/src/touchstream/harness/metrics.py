"""Learning-curve summaries: trapezoidal AUC, normalisation, trials-to-threshold."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np


def _xy(points) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("curve points must be (trial, value) pairs")
    return arr[:, 0], arr[:, 1]


def auc(points) -> float:
    """Trapezoid rule over the trials axis. Needs at least two points in trial order."""
    t, v = _xy(points)
    if len(t) < 2:
        raise ValueError("AUC needs at least two curve points")
    if np.any(np.diff(t) < 0):
        raise ValueError("curve points must be sorted by trial")
    return float(np.sum(np.diff(t) * (v[1:] + v[:-1]) * 0.5))


def normalize_auc(values: Mapping[str, float]) -> dict[str, float]:
    """Divide every entry by the largest one, so the best module scores exactly 1."""
    if not values:
        raise ValueError("nothing to normalise")
    best = max(values.values())
    if best <= 0:
        raise ValueError("normalisation needs a positive maximum AUC")
    return {k: (1.0 if v == best else v / best) for k, v in values.items()}


def trials_to_threshold(points, threshold: float) -> float:
    """First trial count whose value reaches ``threshold``; inf if never reached."""
    t, v = _xy(points)
    hit = np.nonzero(v >= threshold)[0]
    return float(t[hit[0]]) if len(hit) else float("inf")


def mean_trials_to_threshold(curves: Sequence, threshold: float, budget: float | None = None,
                             metric: str = "reward") -> float:
    """Seed mean; a seed that never reaches ``threshold`` is charged ``budget`` (or inf)."""
    out = []
    for c in curves:
        t, v = c.values(metric)
        hit = trials_to_threshold(np.stack([t, v], 1), threshold)
        if hit == float("inf") and budget is not None:
            hit = float(budget)
        out.append(hit)
    return float(np.mean(out))


@dataclass
class CurveMetrics:
    trials: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    seed_auc: np.ndarray

    @property
    def auc(self) -> float:
        return float(self.seed_auc.mean())

    @property
    def final(self) -> float:
        return float(self.mean[-1])


def summarize(curves: Sequence, metric: str = "reward") -> CurveMetrics:
    """Across-seed mean and standard error on a shared trial grid."""
    if not curves:
        raise ValueError("no curves")
    grids = [c.values(metric) for c in curves]
    t0 = grids[0][0]
    n = min(len(t) for t, _ in grids)
    for t, _ in grids:
        if not np.array_equal(t[:n], t0[:n]):
            raise ValueError("curves were validated at different trial counts")
    vals = np.stack([v[:n] for _, v in grids])
    se = vals.std(axis=0, ddof=1) / np.sqrt(len(vals)) if len(vals) > 1 else np.zeros(n)
    aucs = np.array([auc(np.stack([t0[:n], v], 1)) for v in vals])
    return CurveMetrics(t0[:n], vals.mean(axis=0), se, aucs)
