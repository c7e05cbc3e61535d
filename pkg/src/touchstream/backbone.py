"""Frozen visual representations.

Three interchangeable encoders turn a :class:`~touchstream.imagery.Frame`
into a fixed feature vector: a seeded random convnet, an oracle that exposes
task variables directly, and a lookup into a precomputed feature file.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imagery import Box, Frame
from .numerics import xavier_init


class FeatureFileError(IOError):
    pass


class BadFormatError(FeatureFileError):
    """Wrong magic or unsupported version."""


class CorruptFileError(FeatureFileError):
    """Header and payload disagree, or the file is truncated."""


BACKBONE_KINDS = ("random_conv", "oracle", "file")


@dataclass(frozen=True)
class BackboneConfig:
    kind: str = "oracle"
    dim: int = 64
    seed: int = 0
    path: str | None = None
    size: int = 64
    n_classes: int = 8
    noise: float = 0.1

    def __post_init__(self):
        if self.kind not in BACKBONE_KINDS:
            raise ValueError(f"unknown backbone kind {self.kind!r}")
        if self.dim < 8:
            raise ValueError(f"feature dim must be >= 8, got {self.dim}")
        if self.kind == "file" and not self.path:
            raise ValueError("file backbone needs a path")
        if self.kind == "oracle" and self.dim < oracle_width(self.n_classes):
            raise ValueError(f"oracle needs dim >= {oracle_width(self.n_classes)} "
                             f"for {self.n_classes} classes")

    def to_json(self) -> dict:
        return asdict(self)


# -- oracle ------------------------------------------------------------------

FRAME_KINDS = ("sr", "match", "loc")


def oracle_width(n_classes: int) -> int:
    return len(FRAME_KINDS) + n_classes + 3 * n_classes + 4


def oracle_offsets(n_classes: int) -> dict[str, int]:
    """Start index of each block in an oracle vector."""
    kind = 0
    cls = kind + len(FRAME_KINDS)
    slots = cls + n_classes
    box = slots + 3 * n_classes
    return {"kind": kind, "class": cls, "slots": slots, "box": box, "noise": box + 4}


class OracleBackbone:
    """Frame-kind flag, class one-hot, per-class slot (present, cx, cy), box coords, noise.

    Positions are normalised to [-1, 1]. Padding noise is seeded by the
    frame's content key, so a given frame always maps to the same vector.
    """

    def __init__(self, cfg: BackboneConfig):
        self.cfg = cfg
        self.dim = cfg.dim
        self.offsets = oracle_offsets(cfg.n_classes)

    def _norm(self, v: float) -> float:
        return 2.0 * v / self.cfg.size - 1.0

    def __call__(self, frame: Frame) -> np.ndarray:
        cfg = self.cfg
        if frame.size != cfg.size:
            raise ValueError(f"frame size {frame.size} != backbone size {cfg.size}")
        off = self.offsets
        out = np.zeros(cfg.dim)
        kind = "sr" if frame.kind in ("sr", "sample") else frame.kind
        out[off["kind"] + FRAME_KINDS.index(kind)] = 1.0
        if frame.cls is not None and frame.kind != "match":
            if frame.cls >= cfg.n_classes:
                raise ValueError(f"class {frame.cls} outside oracle range {cfg.n_classes}")
            out[off["class"] + frame.cls] = 1.0
        if frame.kind == "match":
            for cls, box in frame.layout:
                base = off["slots"] + 3 * cls
                cx, cy = Box(*box).center
                out[base:base + 3] = (1.0, self._norm(cx), self._norm(cy))
        if frame.kind == "loc" and frame.box is not None:
            out[off["box"]:off["box"] + 4] = [self._norm(c) for c in frame.box]
        n_noise = cfg.dim - off["noise"]
        if n_noise > 0 and cfg.noise > 0:
            digest = hashlib.blake2b(repr((frame.key, cfg.seed)).encode(), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            out[off["noise"]:] = rng.normal(0.0, cfg.noise, n_noise)
        return out


# -- random convnet ----------------------------------------------------------

CONV_CHANNELS = (8, 16, 32)
CONV_KERNEL = 5
CONV_STRIDE = 2


def conv_output_side(size: int) -> int:
    for _ in CONV_CHANNELS:
        size = (size - CONV_KERNEL) // CONV_STRIDE + 1
    return size


class RandomConvBackbone:
    """Three frozen 5x5/stride-2 ReLu conv layers and a frozen random projection.

    ``calibrate`` fixes the per-channel pixel means and per-dimension output
    standardisation from a sample of images; both are frozen afterwards.
    """

    def __init__(self, cfg: BackboneConfig):
        self.cfg = cfg
        self.dim = cfg.dim
        side = conv_output_side(cfg.size)
        if side < 1:
            raise ValueError(f"screen size {cfg.size} too small for the conv stack")
        rng = np.random.default_rng([cfg.seed, 404])
        self.kernels = []
        c_in = 3
        for c_out in CONV_CHANNELS:
            fan_in = c_in * CONV_KERNEL * CONV_KERNEL
            self.kernels.append(xavier_init(fan_in, c_out, rng))
            c_in = c_out
        self.projection = xavier_init(side * side * c_in, cfg.dim, rng)
        self.channel_means = np.full(3, 0.5)
        self.feature_mean = np.zeros(cfg.dim)
        self.feature_scale = np.ones(cfg.dim)

    def _raw(self, pixels: np.ndarray) -> np.ndarray:
        if pixels.shape != (self.cfg.size, self.cfg.size, 3):
            raise ValueError(f"image shape {pixels.shape} does not match backbone size {self.cfg.size}")
        x = pixels.astype(np.float64) / 255.0 - self.channel_means
        for k in self.kernels:
            # (H', W', C, kh, kw) windows -> rows of C*kh*kw
            win = sliding_window_view(x, (CONV_KERNEL, CONV_KERNEL), axis=(0, 1))
            win = win[::CONV_STRIDE, ::CONV_STRIDE]
            h, w = win.shape[:2]
            x = np.maximum(win.reshape(h, w, -1) @ k, 0)
        return x.reshape(-1) @ self.projection

    def calibrate(self, images) -> None:
        images = list(images)
        if not images:
            return
        stack = np.stack(images).astype(np.float64) / 255.0
        self.channel_means = stack.mean(axis=(0, 1, 2))
        self.feature_mean = np.zeros(self.cfg.dim)
        self.feature_scale = np.ones(self.cfg.dim)
        raw = np.stack([self._raw(im) for im in images])
        self.feature_mean = raw.mean(axis=0)
        std = raw.std(axis=0)
        self.feature_scale = 1.0 / np.where(std > 1e-12, std, 1.0)

    def weights_checksum(self) -> str:
        h = hashlib.sha256()
        for arr in (*self.kernels, self.projection, self.channel_means,
                    self.feature_mean, self.feature_scale):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def __call__(self, frame: Frame) -> np.ndarray:
        if frame.size != self.cfg.size:
            raise ValueError(f"frame size {frame.size} != backbone size {self.cfg.size}")
        return (self._raw(frame.pixels) - self.feature_mean) * self.feature_scale


# -- feature files -----------------------------------------------------------

MAGIC = b"TSFT"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


def labels_path(path: str) -> str:
    root, _ = os.path.splitext(path)
    return root + ".labels.jsonl"


def write_features(path: str, vectors, labels=None) -> None:
    rows = np.asarray(vectors, dtype="<f4")
    if rows.ndim != 2:
        raise ValueError("feature rows must form a 2-D array")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, rows.shape[0], rows.shape[1]))
        fh.write(np.ascontiguousarray(rows).tobytes())
    if labels is not None:
        labels = list(labels)
        if len(labels) != rows.shape[0]:
            raise ValueError(f"{len(labels)} labels for {rows.shape[0]} rows")
        with open(labels_path(path), "w") as fh:
            for lab in labels:
                fh.write(json.dumps(lab, sort_keys=True) + "\n")


def read_features(path: str):
    """Returns ``(rows, labels)``; labels is None if the sibling JSONL is absent."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise CorruptFileError(f"{path}: truncated header")
    magic, version, n, dim = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise BadFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise BadFormatError(f"{path}: unsupported version {version}")
    payload = blob[_HEADER.size:]
    if len(payload) != 4 * n * dim:
        raise CorruptFileError(f"{path}: payload is {len(payload)} bytes, header implies {4 * n * dim}")
    rows = np.frombuffer(payload, dtype="<f4").reshape(n, dim).copy()
    labels = None
    if os.path.exists(labels_path(path)):
        with open(labels_path(path)) as fh:
            labels = [json.loads(line) for line in fh if line.strip()]
        if len(labels) != n:
            raise CorruptFileError(f"{path}: {len(labels)} labels for {n} rows")
    return rows, labels


class FileBackbone:
    """Looks frames up by instance seed in a precomputed feature file."""

    def __init__(self, cfg: BackboneConfig):
        self.cfg = cfg
        rows, labels = read_features(cfg.path)
        if labels is None:
            raise FeatureFileError(f"{cfg.path}: feature file has no labels; instance seeds are required")
        if rows.shape[1] != cfg.dim:
            raise ValueError(f"file dim {rows.shape[1]} != configured dim {cfg.dim}")
        self.dim = cfg.dim
        self._rows = {int(lab["instance_seed"]): rows[i].astype(np.float64)
                      for i, lab in enumerate(labels)}

    def __call__(self, frame: Frame) -> np.ndarray:
        if frame.kind == "match":
            raise ValueError("file backbone cannot encode synthesised match screens")
        try:
            return self._rows[frame.instance_seed]
        except KeyError:
            raise KeyError(f"instance seed {frame.instance_seed} not in {self.cfg.path}") from None


def make_backbone(cfg: BackboneConfig):
    if cfg.kind == "oracle":
        return OracleBackbone(cfg)
    if cfg.kind == "random_conv":
        return RandomConvBackbone(cfg)
    return FileBackbone(cfg)


def extract_features(frame: Frame, cfg_or_backbone) -> np.ndarray:
    backbone = make_backbone(cfg_or_backbone) if isinstance(cfg_or_backbone, BackboneConfig) \
        else cfg_or_backbone
    return backbone(frame)


class CachedFeatures:
    """Memoises a backbone on frame content keys. Backbones are pure, so this is safe."""

    def __init__(self, backbone, max_items: int = 200_000):
        self.backbone = backbone
        self.dim = backbone.dim
        self._cache: dict = {}
        self.max_items = max_items

    def __call__(self, frame: Frame) -> np.ndarray:
        key = frame.key
        hit = self._cache.get(key)
        if hit is None:
            hit = self.backbone(frame)
            hit.setflags(write=False)
            if len(self._cache) < self.max_items:
                self._cache[key] = hit
        return hit
