"""The screen server: task programs emitting frames and rewards for touches.

A :class:`TouchstreamEnv` is a never-ending stream of trials. Each call to
``step`` consumes one touch and returns the next frame, the reward for that
touch and whether a trial just ended.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .imagery import DEFAULT_SIZE, FULL_SIZE, Box, Dataset, Frame, Record, build_dataset

SR_VARIANTS = ("two_way", "four_way_double_binary", "four_way_quadrant")
MTS_VARIANTS = (
    "2way_stationary",
    "2way_vert_motion",
    "2way_horiz_flip",
    "2way_motion_flip",
    "4way_2shown",
    "4way_2shown_vert_motion",
    "4way_4shown_stationary",
    "4way_4shown_permuted",
)
LOC_VARIANTS = ("default",)
VARIANTS = {"SR": SR_VARIANTS, "MTS": MTS_VARIANTS, "LOC": LOC_VARIANTS}

BINARY_VOCAB = (0.0, 1.0)
LOC_VOCAB = (0.0, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
TRIAL_LENGTH = {"SR": 1, "MTS": 2, "LOC": 2}

# MTS geometry at full scale (224 px screen)
TEMPLATE_PX = 100
EDGE_BUFFER_PX = 6
GAP_BUFFER_PX = 12


class ActionError(ValueError):
    pass


def n_way(kind: str, variant: str) -> int:
    if kind == "SR":
        return 2 if variant == "two_way" else 4
    if kind == "MTS":
        return 2 if variant.startswith("2way") else 4
    return 0


@dataclass(frozen=True)
class TaskSpec:
    kind: str = "SR"
    variant: str = "two_way"
    size: int = DEFAULT_SIZE
    classes: tuple[int, ...] | None = None
    train_per_class: int = 200
    val_per_class: int = 50
    loc_train: int = 5000
    loc_val: int = 1000
    dataset_seed: int = 0

    def __post_init__(self):
        if self.kind not in VARIANTS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.variant not in VARIANTS[self.kind]:
            raise ValueError(f"variant {self.variant!r} invalid for {self.kind}; "
                             f"expected one of {VARIANTS[self.kind]}")
        if self.classes is None:
            object.__setattr__(self, "classes", tuple(range(n_way(self.kind, self.variant))))
        else:
            object.__setattr__(self, "classes", tuple(int(c) for c in self.classes))
        if self.kind != "LOC":
            if len(self.classes) != n_way(self.kind, self.variant):
                raise ValueError(f"{self.kind}/{self.variant} needs {n_way(self.kind, self.variant)} "
                                 f"classes, got {self.classes}")
            if len(set(self.classes)) != len(self.classes):
                raise ValueError(f"duplicate classes {self.classes}")
        if self.kind == "MTS":
            mts_geometry(self.size)

    @property
    def vocab(self) -> tuple[float, ...]:
        return LOC_VOCAB if self.kind == "LOC" else BINARY_VOCAB

    @property
    def trial_length(self) -> int:
        return TRIAL_LENGTH[self.kind]

    @property
    def name(self) -> str:
        return f"{self.kind}:{self.variant}"

    def to_json(self) -> dict:
        return {"kind": self.kind, "variant": self.variant, "size": self.size,
                "classes": list(self.classes), "train_per_class": self.train_per_class,
                "val_per_class": self.val_per_class, "loc_train": self.loc_train,
                "loc_val": self.loc_val, "dataset_seed": self.dataset_seed}

    def build_dataset(self) -> Dataset:
        if self.kind == "LOC":
            counts = {"train": self.loc_train, "val": self.loc_val}
            return build_dataset("LOC", counts, self.dataset_seed, self.size)
        counts = {"train": self.train_per_class, "val": self.val_per_class}
        return build_dataset(self.kind, counts, self.dataset_seed, self.size)


def parse_task(text: str, **overrides) -> TaskSpec:
    """``"SR:two_way"``, ``"MTS:2way_stationary"``, ``"LOC"``; optional ``@c0,c1`` class list."""
    classes = None
    if "@" in text:
        text, cls_text = text.split("@", 1)
        classes = tuple(int(c) for c in cls_text.split(","))
    kind, _, variant = text.partition(":")
    kind = kind.upper()
    if not variant:
        variant = VARIANTS.get(kind, ("",))[0]
    return TaskSpec(kind=kind, variant=variant, classes=classes, **overrides)


# -- rewards -----------------------------------------------------------------

def sr_reward(variant: str, cls: int, action, size: int) -> float:
    """``cls`` is the task-local class index (position in TaskSpec.classes)."""
    x, y = action
    right = x >= size / 2
    bottom = y >= size / 2
    if variant == "two_way":
        return float(right == (cls == 1))
    if variant == "four_way_double_binary":
        return float(right == (cls % 2 == 1))
    if variant == "four_way_quadrant":
        return float(2 * bottom + right == cls)
    raise ValueError(f"unknown SR variant {variant!r}")


def mts_reward(layout: Sequence[tuple[int, Box]], target_cls: int, action) -> float:
    for cls, box in layout:
        if cls == target_cls:
            return float(Box(*box).contains(*action))
    raise ValueError(f"target class {target_cls} not on the match screen")


def iou(a, b) -> float:
    a, b = Box(*a), Box(*b)
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    if union <= 0:
        return 1.0 if a == b else 0.0
    return inter / union


def touches_to_box(touch1, touch2) -> Box:
    (x1, y1), (x2, y2) = touch1, touch2
    return Box(min(x1, x2), min(y1, y2), max(x1, x2), max(y1, y2))


def quantize_iou(value: float) -> float:
    if value < 0.5:
        return 0.0
    # nearest tenth, halves rounding up
    return float(min(1.0, np.floor(value * 10 + 0.5 + 1e-9) / 10))


def loc_reward(touch1, touch2, gt) -> float:
    return quantize_iou(iou(touches_to_box(touch1, touch2), gt))


# -- MTS layouts -------------------------------------------------------------

@dataclass(frozen=True)
class MTSGeometry:
    size: int
    template: int
    edge: int
    gap: int

    @property
    def columns(self) -> tuple[int, int]:
        return self.edge, self.edge + self.template + self.gap

    @property
    def centred_row(self) -> int:
        return (self.size - self.template) // 2


def mts_geometry(size: int) -> MTSGeometry:
    """Slot geometry scaled from the 224 px layout, shrinking the template if rounding overflows."""
    scale = size / FULL_SIZE
    template = int(round(TEMPLATE_PX * scale))
    edge = int(round(EDGE_BUFFER_PX * scale))
    gap = int(round(GAP_BUFFER_PX * scale))
    excess = 2 * edge + 2 * template + gap - size
    if excess > 0:
        template -= -(-excess // 2)
    if template < 4:
        raise ValueError(f"screen size {size} too small for match-to-sample slots")
    return MTSGeometry(size, template, edge, gap)


def mts_layout(variant: str, target: int, classes: Sequence[int], rng: np.random.Generator,
               size: int = DEFAULT_SIZE) -> list[tuple[int, Box]]:
    """Place templates for one match screen; ``target`` is a global class id in ``classes``."""
    g = mts_geometry(size)
    T = g.template
    cols = g.columns
    classes = list(classes)
    if variant.startswith("4way_4shown"):
        order = list(classes)
        if variant == "4way_4shown_permuted":
            order = [order[i] for i in rng.permutation(4)]
        rows = cols
        slots = [(cols[0], rows[0]), (cols[1], rows[0]), (cols[0], rows[1]), (cols[1], rows[1])]
        return [(c, Box(x, y, x + T, y + T)) for c, (x, y) in zip(order, slots)]
    if variant.startswith("2way"):
        shown = list(classes)
    else:
        others = [c for c in classes if c != target]
        shown = [target, others[int(rng.integers(len(others)))]]
    shuffled = variant in ("2way_horiz_flip", "2way_motion_flip") or variant.startswith("4way_2shown")
    if shuffled and rng.random() < 0.5:
        shown = shown[::-1]
    moving = variant in ("2way_vert_motion", "2way_motion_flip", "4way_2shown_vert_motion")
    out = []
    for c, x in zip(shown, cols):
        y = int(rng.integers(g.edge, size - g.edge - T + 1)) if moving else g.centred_row
        out.append((c, Box(x, y, x + T, y + T)))
    return out


# -- the stream --------------------------------------------------------------

class Step(NamedTuple):
    frame: Frame
    reward: float
    trial_end: bool
    info: dict


@dataclass
class EnvState:
    trial: int = 0
    step_in_trial: int = 0
    target: int | None = None      # task-local class index
    record: Record | None = None
    layout: tuple | None = None
    first_touch: tuple[float, float] | None = None


class TouchstreamEnv:
    """Deterministic per (spec, seed, split, action sequence)."""

    def __init__(self, spec: TaskSpec, seed=0, split: str = "train", dataset: Dataset | None = None):
        self.spec = spec
        self.split = split
        self.rng = np.random.default_rng(seed)
        self.dataset = dataset if dataset is not None else spec.build_dataset()
        if spec.kind == "LOC":
            self._pool = self.dataset.split(split)
            if not self._pool:
                raise ValueError(f"dataset has no {split!r} records")
        else:
            by_class = self.dataset.by_class(split)
            missing = [c for c in spec.classes if c not in by_class]
            if missing:
                raise ValueError(f"dataset lacks {split!r} records for classes {missing}")
            self._pool_by_class = [by_class[c] for c in spec.classes]
        self.state = EnvState()
        self.frame = self._begin_trial()

    @property
    def size(self) -> int:
        return self.spec.size

    def _pick(self, pool):
        return pool[int(self.rng.integers(len(pool)))]

    def _begin_trial(self) -> Frame:
        spec, st = self.spec, self.state
        st.step_in_trial = 0
        st.first_touch = None
        st.layout = None
        if spec.kind == "LOC":
            st.target = None
            st.record = self._pick(self._pool)
            r = st.record
            return Frame("loc", spec.size, r.cls, r.instance_seed, box=r.box)
        st.target = int(self.rng.integers(len(spec.classes)))
        st.record = self._pick(self._pool_by_class[st.target])
        r = st.record
        return Frame("sr" if spec.kind == "SR" else "sample", spec.size, r.cls, r.instance_seed)

    def _check_action(self, action) -> tuple[float, float]:
        x, y = float(action[0]), float(action[1])
        if not (0 <= x < self.size and 0 <= y < self.size):
            raise ActionError(f"action ({x}, {y}) outside the {self.size}px screen")
        return x, y

    def step(self, action) -> Step:
        action = self._check_action(action)
        spec, st = self.spec, self.state
        info: dict = {}
        if spec.kind == "SR":
            reward = sr_reward(spec.variant, st.target, action, spec.size)
            done = True
        elif spec.kind == "MTS":
            if st.step_in_trial == 0:
                target_cls = spec.classes[st.target]
                st.layout = tuple(mts_layout(spec.variant, target_cls, spec.classes, self.rng, spec.size))
                st.step_in_trial = 1
                self.frame = Frame("match", spec.size, layout=st.layout)
                return Step(self.frame, 0.0, False, info)
            reward = mts_reward(st.layout, spec.classes[st.target], action)
            done = True
        else:
            if st.step_in_trial == 0:
                st.first_touch = action
                st.step_in_trial = 1
                r = st.record
                self.frame = Frame("loc", spec.size, r.cls, r.instance_seed, box=r.box)
                return Step(self.frame, 0.0, False, info)
            value = iou(touches_to_box(st.first_touch, action), st.record.box)
            info["iou"] = value
            reward = quantize_iou(value)
            done = True
        st.trial += 1
        self.frame = self._begin_trial()
        return Step(self.frame, reward, done, info)


def make_env(spec: TaskSpec, seed=0, split: str = "train", dataset: Dataset | None = None):
    """Returns ``(env, first_frame)``; the reward before the first touch is 0."""
    env = TouchstreamEnv(spec, seed, split, dataset)
    return env, env.frame


def env_step(env: TouchstreamEnv, action) -> Step:
    return env.step(action)
