"""Procedural, seeded image corpora.

Eight glyph classes stand in for natural image categories. Every renderer is
a pure function of its arguments: the same (class, seed, size) always gives
the same bytes.
"""

from __future__ import annotations

import colorsys
import json
import os
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

DEFAULT_SIZE = 64
FULL_SIZE = 224
SHAPES = ("square", "disc", "triangle", "cross", "ring", "bar", "chevron", "dot-grid")
N_CLASSES = len(SHAPES)


@dataclass(frozen=True)
class ClassStyle:
    shape: str
    hue: float

    @property
    def rgb(self) -> np.ndarray:
        return np.array(colorsys.hsv_to_rgb(self.hue, 0.85, 0.95))


# shape and hue advance together, so (shape, hue) pairs are all distinct
CLASS_STYLES = tuple(ClassStyle(shape, k / N_CLASSES) for k, shape in enumerate(SHAPES))


class Box(NamedTuple):
    """Half-open pixel box: covers x_min <= x < x_max, y_min <= y < y_max."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return max(self.width, 0.0) * max(self.height, 0.0)

    @property
    def center(self) -> tuple[float, float]:
        return (self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x < self.x_max and self.y_min <= y < self.y_max

    def overlaps(self, other: "Box") -> bool:
        return (self.x_min < other.x_max and other.x_min < self.x_max
                and self.y_min < other.y_max and other.y_min < self.y_max)

    def validate(self, size: int) -> "Box":
        if not (0 <= self.x_min <= self.x_max <= size and 0 <= self.y_min <= self.y_max <= size):
            raise ValueError(f"{self} is not a valid box on a {size}px screen")
        return self


def _check_class(cls: int) -> int:
    if not 0 <= int(cls) < N_CLASSES:
        raise ValueError(f"class id {cls} outside 0..{N_CLASSES - 1}")
    return int(cls)


def _shape_mask(shape: str, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Glyph membership in local coordinates, glyph spanning roughly [-1, 1]."""
    au, av = np.abs(u), np.abs(v)
    r = np.hypot(u, v)
    if shape == "square":
        return (au <= 0.8) & (av <= 0.8)
    if shape == "disc":
        return r <= 0.9
    if shape == "triangle":
        return (v <= 0.75) & (v >= 1.7 * au - 0.95)
    if shape == "cross":
        return ((au <= 0.28) & (av <= 0.95)) | ((av <= 0.28) & (au <= 0.95))
    if shape == "ring":
        return (r <= 0.95) & (r >= 0.55)
    if shape == "bar":
        return (au <= 0.95) & (av <= 0.3)
    if shape == "chevron":
        d = v + 0.9 * au
        return (d >= -0.35) & (d <= 0.2) & (au <= 0.95)
    # dot-grid: 3x3 dots
    cu = np.round(np.clip(u, -1, 1) / 0.65) * 0.65
    cv = np.round(np.clip(v, -1, 1) / 0.65) * 0.65
    return (np.hypot(u - cu, v - cv) <= 0.24) & (au <= 0.95) & (av <= 0.95)


def _glyph_mask(shape: str, size: int, cx: float, cy: float, half: float,
                angle: float) -> np.ndarray:
    """Boolean (size, size) mask of a glyph centred at (cx, cy) spanning 2*half px."""
    coords = np.arange(size) + 0.5
    xs, ys = np.meshgrid(coords, coords)
    cos, sin = np.cos(angle), np.sin(angle)
    dx, dy = xs - cx, ys - cy
    u = (cos * dx + sin * dy) / half
    v = (-sin * dx + cos * dy) / half
    return _shape_mask(shape, u, v)


def _value_noise(rng: np.random.Generator, size: int, cells: int, channels: int = 3) -> np.ndarray:
    """Bilinearly upsampled lattice noise in [0, 1], shape (size, size, channels)."""
    grid = rng.random((cells + 1, cells + 1, channels))
    t = (np.arange(size) + 0.5) / size * cells
    i0 = np.minimum(t.astype(int), cells - 1)
    f = t - i0
    f = f * f * (3 - 2 * f)
    row = grid[i0] * (1 - f)[:, None, None] + grid[i0 + 1] * f[:, None, None]
    return row[:, i0] * (1 - f)[None, :, None] + row[:, i0 + 1] * f[None, :, None]


def _to_u8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(img * 255), 0, 255).astype(np.uint8)


def render_sr_frame(cls: int, instance_seed: int, size: int = DEFAULT_SIZE) -> np.ndarray:
    """A class glyph with random pose over a noise background, (size, size, 3) uint8."""
    cls = _check_class(cls)
    rng = np.random.default_rng([instance_seed, cls, 101])
    style = CLASS_STYLES[cls]
    background = 0.25 + 0.35 * _value_noise(rng, size, 4)
    width_frac = rng.uniform(0.2, 0.6)
    half = width_frac * size / 2
    cx = rng.uniform(half, size - half)
    cy = rng.uniform(half, size - half)
    angle = rng.uniform(0, 2 * np.pi)
    mask = _glyph_mask(style.shape, size, cx, cy, half, angle)
    shade = rng.uniform(0.85, 1.0)
    img = np.where(mask[..., None], style.rgb * shade, background)
    return _to_u8(img)


def render_template(cls: int, width: int, height: int) -> np.ndarray:
    """Canonical centred rendering of a class, used on match screens."""
    cls = _check_class(cls)
    style = CLASS_STYLES[cls]
    rng = np.random.default_rng([cls, 7])
    patch = 0.8 + 0.1 * _value_noise(rng, max(width, height), 2)[:height, :width]
    side = min(width, height)
    coords_x = np.arange(width) + 0.5
    coords_y = np.arange(height) + 0.5
    xs, ys = np.meshgrid(coords_x, coords_y)
    half = 0.42 * side
    mask = _shape_mask(style.shape, (xs - width / 2) / half, (ys - height / 2) / half)
    return _to_u8(np.where(mask[..., None], style.rgb, patch))


MATCH_BACKGROUND = 128


def render_match_frame(layout: Sequence[tuple[int, Box]], size: int = DEFAULT_SIZE) -> np.ndarray:
    img = np.full((size, size, 3), MATCH_BACKGROUND, dtype=np.uint8)
    boxes = []
    for cls, box in layout:
        box = Box(*box).validate(size)
        for other in boxes:
            if box.overlaps(other):
                raise ValueError(f"match slots {other} and {box} overlap")
        boxes.append(box)
        x0, y0, x1, y1 = (int(round(c)) for c in box)
        if x1 > x0 and y1 > y0:
            img[y0:y1, x0:x1] = render_template(cls, x1 - x0, y1 - y0)
    return img


LOC_SIDE_RANGE = (0.22, 0.6)


def _loc_scene(instance_seed: int, size: int, cls: int | None):
    rng = np.random.default_rng([instance_seed, 202])
    if cls is None:
        cls = int(rng.integers(N_CLASSES))
    else:
        rng.integers(N_CLASSES)
    cls = _check_class(cls)
    img = 0.15 + 0.35 * _value_noise(rng, size, 3) + 0.3 * _value_noise(rng, size, 12)
    # distractor texture patches: striped or checkered rectangles
    for _ in range(int(rng.integers(3, 7))):
        w, h = rng.integers(size // 10, size // 4, size=2)
        x0, y0 = rng.integers(0, size - w), rng.integers(0, size - h)
        period = int(rng.integers(2, 5))
        yy, xx = np.mgrid[0:h, 0:w]
        if rng.random() < 0.5:
            pattern = ((xx // period) % 2).astype(float)
        else:
            pattern = (((xx // period) + (yy // period)) % 2).astype(float)
        tint = rng.uniform(0.2, 0.8, size=3)
        img[y0:y0 + h, x0:x0 + w] = 0.5 * img[y0:y0 + h, x0:x0 + w] + 0.5 * pattern[..., None] * tint
    lo, hi = LOC_SIDE_RANGE
    side = size * np.exp(rng.uniform(np.log(lo), np.log(hi)))
    half = side / 2
    angle = rng.uniform(0, 2 * np.pi)
    style = CLASS_STYLES[cls]
    cx = rng.uniform(half, size - half)
    cy = rng.uniform(half, size - half)
    mask = _glyph_mask(style.shape, size, cx, cy, half, angle)
    if not mask.any():
        mask[int(cy) % size, int(cx) % size] = True
    img = np.where(mask[..., None], style.rgb * rng.uniform(0.85, 1.0), img)
    return img, mask, cls


def render_loc_scene(instance_seed: int, size: int = DEFAULT_SIZE, cls: int | None = None):
    """One object on clutter. Returns ``(image, box, cls)``; box is the tight pixel bound."""
    img, mask, cls = _loc_scene(instance_seed, size, cls)
    ys, xs = np.nonzero(mask)
    box = Box(float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))
    return _to_u8(img), box, cls


def loc_object_mask(instance_seed: int, size: int = DEFAULT_SIZE, cls: int | None = None) -> np.ndarray:
    """Boolean (size, size) mask of the object pixels in the matching scene."""
    return _loc_scene(instance_seed, size, cls)[1]


# -- datasets ----------------------------------------------------------------

TASK_KINDS = ("SR", "MTS", "LOC")


@dataclass(frozen=True)
class Record:
    index: int
    split: str
    cls: int
    instance_seed: int
    box: Box | None = None

    def to_json(self) -> dict:
        d = {"index": self.index, "split": self.split, "class": self.cls,
             "instance_seed": self.instance_seed}
        if self.box is not None:
            d["box"] = list(self.box)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Record":
        box = Box(*d["box"]) if d.get("box") is not None else None
        return cls(int(d["index"]), d["split"], int(d["class"]), int(d["instance_seed"]), box)


@dataclass
class Dataset:
    task_kind: str
    size: int
    seed: int
    records: list[Record] = field(default_factory=list)

    def split(self, name: str) -> list[Record]:
        return [r for r in self.records if r.split == name]

    def by_class(self, name: str) -> dict[int, list[Record]]:
        out: dict[int, list[Record]] = {}
        for r in self.split(name):
            out.setdefault(r.cls, []).append(r)
        return out

    def render(self, record: Record) -> np.ndarray:
        if self.task_kind == "LOC":
            return render_loc_scene(record.instance_seed, self.size, record.cls)[0]
        return render_sr_frame(record.cls, record.instance_seed, self.size)

    def header(self) -> dict:
        counts: dict[str, int] = {}
        for r in self.records:
            counts[r.split] = counts.get(r.split, 0) + 1
        return {"task": self.task_kind, "size": self.size, "seed": self.seed,
                "n_records": len(self.records), "counts": counts}


def _distinct_seeds(rng: np.random.Generator, n: int) -> list[int]:
    seen: set[int] = set()
    out = []
    while len(out) < n:
        s = int(rng.integers(0, 2**31 - 1))
        if s not in seen:
            seen.add(s)
            out.append(s)
    return out


def build_dataset(task_kind: str, counts: dict[str, int], seed: int = 0,
                  size: int = DEFAULT_SIZE, classes: Iterable[int] | None = None) -> Dataset:
    """Build a split dataset.

    For SR/MTS ``counts`` is records per class per split; for LOC it is
    records per split. Instance seeds are unique across the whole dataset,
    so train and val never share one.
    """
    task_kind = task_kind.upper()
    if task_kind not in TASK_KINDS:
        raise ValueError(f"unknown task kind {task_kind!r}")
    for split, n in counts.items():
        if n < 1:
            raise ValueError(f"count for split {split!r} must be >= 1")
    rng = np.random.default_rng([seed, 303])
    records: list[Record] = []
    if task_kind == "LOC":
        total = sum(counts.values())
        seeds = iter(_distinct_seeds(rng, total))
        for split, n in counts.items():
            for _ in range(n):
                s = next(seeds)
                _, box, cls = render_loc_scene(s, size)
                records.append(Record(len(records), split, cls, s, box))
    else:
        class_list = list(range(N_CLASSES)) if classes is None else [_check_class(c) for c in classes]
        total = sum(counts.values()) * len(class_list)
        seeds = iter(_distinct_seeds(rng, total))
        for split, n in counts.items():
            for cls in class_list:
                for _ in range(n):
                    records.append(Record(len(records), split, cls, next(seeds)))
    return Dataset(task_kind, size, seed, records)


MANIFEST = "manifest.jsonl"
HEADER = "dataset.json"
IMAGES = "images.u8"


def write_dataset(ds: Dataset, out_dir: str, store_images: bool = False) -> None:
    """Manifest as JSONL; optionally the rendered images as flat uint8 planes."""
    os.makedirs(out_dir, exist_ok=True)
    header = ds.header()
    header["images"] = IMAGES if store_images else None
    with open(os.path.join(out_dir, HEADER), "w") as fh:
        json.dump(header, fh, indent=1, sort_keys=True)
    with open(os.path.join(out_dir, MANIFEST), "w") as fh:
        for r in ds.records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")
    if store_images:
        with open(os.path.join(out_dir, IMAGES), "wb") as fh:
            for r in ds.records:
                fh.write(ds.render(r).tobytes())


def read_dataset(in_dir: str) -> Dataset:
    with open(os.path.join(in_dir, HEADER)) as fh:
        header = json.load(fh)
    with open(os.path.join(in_dir, MANIFEST)) as fh:
        records = [Record.from_json(json.loads(line)) for line in fh if line.strip()]
    if len(records) != header["n_records"]:
        raise ValueError(f"manifest has {len(records)} records, header says {header['n_records']}")
    return Dataset(header["task"], int(header["size"]), int(header["seed"]), records)


def read_stored_images(in_dir: str, ds: Dataset) -> np.ndarray:
    raw = np.fromfile(os.path.join(in_dir, IMAGES), dtype=np.uint8)
    return raw.reshape(len(ds.records), ds.size, ds.size, 3)


class Frame:
    """An emitted screen: metadata plus lazily rendered pixels.

    ``key`` identifies the pixel content, so feature extractors can cache on it.
    """

    __slots__ = ("kind", "size", "cls", "instance_seed", "layout", "box", "key", "_pixels")

    def __init__(self, kind: str, size: int, cls: int | None = None, instance_seed: int | None = None,
                 layout: tuple[tuple[int, Box], ...] | None = None, box: Box | None = None):
        self.kind = kind
        self.size = size
        self.cls = cls
        self.instance_seed = instance_seed
        self.layout = layout
        self.box = box
        if kind == "match":
            self.key = ("match", size, layout)
        else:
            self.key = (kind if kind == "loc" else "sr", size, cls, instance_seed)
        self._pixels = None

    @property
    def pixels(self) -> np.ndarray:
        if self._pixels is None:
            if self.kind == "match":
                self._pixels = render_match_frame(self.layout, self.size)
            elif self.kind == "loc":
                self._pixels = render_loc_scene(self.instance_seed, self.size, self.cls)[0]
            else:
                self._pixels = render_sr_frame(self.cls, self.instance_seed, self.size)
        return self._pixels

    def __repr__(self) -> str:
        return f"Frame({self.kind!r}, cls={self.cls}, seed={self.instance_seed})"
