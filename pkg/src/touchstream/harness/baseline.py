"""Supervised bounding-box baselines on frozen features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..environment import TaskSpec, iou
from ..imagery import Box, Frame, Record

RIDGE_LAMBDA = 1.0


def loc_frame(record: Record, size: int) -> Frame:
    return Frame("loc", size, record.cls, record.instance_seed, box=record.box)


def box_targets(records, size: int) -> np.ndarray:
    """Boxes as (x0, y0, x1, y1) scaled to [-1, 1]."""
    b = np.array([tuple(r.box) for r in records], dtype=float)
    return b * (2.0 / size) - 1.0


def targets_to_boxes(y: np.ndarray, size: int) -> list[Box]:
    px = np.clip((np.asarray(y, float) + 1.0) * (size / 2.0), 0, size)
    out = []
    for x0, y0, x1, y1 in px:
        out.append(Box(min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1)))
    return out


def mean_iou(pred, truth) -> float:
    return float(np.mean([iou(p, t) for p, t in zip(pred, truth)]))


@dataclass
class RidgeRegressor:
    """Closed-form ridge with an unpenalised intercept (features are centred first)."""

    lam: float = RIDGE_LAMBDA
    coef: np.ndarray | None = None
    x_mean: np.ndarray | None = None
    y_mean: np.ndarray | None = None

    def fit(self, X: np.ndarray, Y: np.ndarray) -> "RidgeRegressor":
        if self.lam <= 0:
            raise ValueError("ridge needs lambda > 0")
        X = np.asarray(X, float)
        Y = np.asarray(Y, float)
        self.x_mean = X.mean(axis=0)
        self.y_mean = Y.mean(axis=0)
        Xc = X - self.x_mean
        A = Xc.T @ Xc + self.lam * np.eye(X.shape[1])
        self.coef = np.linalg.solve(A, Xc.T @ (Y - self.y_mean))
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, float) - self.x_mean) @ self.coef + self.y_mean


@dataclass
class BaselineResult:
    ridge_iou: float
    center_iou: float
    shuffled_iou: float
    n_train: int
    n_val: int


def _features(records, features, size) -> np.ndarray:
    return np.stack([np.asarray(features(loc_frame(r, size)), float) for r in records])


def center_box(train_records, size: int) -> Box:
    """The fixed prediction: mean training box."""
    y = box_targets(train_records, size).mean(axis=0, keepdims=True)
    return targets_to_boxes(y, size)[0]


def bbox_baseline(task: TaskSpec, dataset, features, lam: float = RIDGE_LAMBDA,
                  seed: int = 0) -> BaselineResult:
    """Ridge regression from features to the box, scored by mean IoU on the val split."""
    if task.kind != "LOC":
        raise ValueError("the box baseline needs a localization task")
    train, val = dataset.split("train"), dataset.split("val")
    S = task.size
    Xtr, Xva = _features(train, features, S), _features(val, features, S)
    Ytr = box_targets(train, S)
    truth = [r.box for r in val]
    ridge = RidgeRegressor(lam).fit(Xtr, Ytr)
    ridge_iou = mean_iou(targets_to_boxes(ridge.predict(Xva), S), truth)
    cb = center_box(train, S)
    center_iou = mean_iou([cb] * len(val), truth)
    perm = np.random.default_rng(seed).permutation(len(train))
    null = RidgeRegressor(lam).fit(Xtr, Ytr[perm])
    shuffled_iou = mean_iou(targets_to_boxes(null.predict(Xva), S), truth)
    return BaselineResult(ridge_iou, center_iou, shuffled_iou, len(train), len(val))
