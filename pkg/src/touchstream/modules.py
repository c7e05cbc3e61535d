"""Learnable decision modules that predict reward maps over candidate touches.

Two generic families share one code path:

* early bottleneck: visual history -> width-w bottleneck ``z``, then
  ``z ++ actions`` through two activation layers and k_f softmax heads;
* late bottleneck: ``features ++ actions`` straight into the two layers.

``ObviousSRModule`` is the hand-structured two-way SR solution, a baseline.

Inputs are a feature history row ``(C_{t-1}, C_t)``, the previous action and
a candidate action, both as screen coordinates normalised to [-1, 1].
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .numerics import (
    ActivationKind,
    NumericalError,
    OptimizerConfig,
    OptimizerState,
    activate,
    activate_backward,
    adam_step,
    softmax,
    xavier_init,
)

A = ActivationKind
FAMILIES = ("early", "late", "obvious")

# name -> (family, bottleneck activation, layer activation)
ZOO: dict[str, tuple[str, A | None, A | None]] = {
    "LRS": ("early", A.RELU, A.RS),
    "LS": ("early", A.RELU, A.SQUARE),
    "LR": ("early", A.RELU, A.RELU),
    "LT": ("early", A.RELU, A.TANH),
    "LSig": ("early", A.RELU, A.SIGMOID),
    "LE": ("early", A.RELU, A.ELU),
    "LCre": ("early", A.RELU, A.CRELU),
    "CReZ-LRS": ("early", A.CRELU, A.RS),
    "CReZ-CReS": ("early", A.CRELU, A.CRES),
    "LBR": ("late", None, A.RELU),
    "LBT": ("late", None, A.TANH),
    "LBSig": ("late", None, A.SIGMOID),
    "LBE": ("late", None, A.ELU),
    "LBCre": ("late", None, A.CRELU),
    "LBS": ("late", None, A.SQUARE),
    "LBRS": ("late", None, A.RS),
    "Obvious": ("obvious", None, None),
}

# per-task widths: (early modules and small LB*, medium LB*, large LB*)
TASK_WIDTHS = {"SR": (8, 128, 512), "MTS": (32, 128, 512), "LOC": (128, 512, 1024)}
SIZES = ("small", "med", "large")


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ModuleSpec:
    family: str
    activation: A | None
    bottleneck: A | None
    width: int
    feature_dim: int
    vocab_size: int
    k_b: int = 1
    k_f: int = 2
    name: str = ""

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise SpecError(f"unknown module family {self.family!r}")
        if self.family == "early":
            if self.bottleneck not in (A.RELU, A.CRELU) or self.activation is None:
                raise SpecError("early-bottleneck modules need a ReLu/CReLu bottleneck and a layer activation")
        elif self.family == "late":
            if self.bottleneck is not None or self.activation is None:
                raise SpecError("late-bottleneck modules take a layer activation and no bottleneck")
        elif self.bottleneck is not None or self.activation is not None:
            raise SpecError("the obvious SR module has no configurable activations")
        if self.width < 1 or self.feature_dim < 1 or self.vocab_size < 2:
            raise SpecError(f"bad sizes: width={self.width}, D={self.feature_dim}, V={self.vocab_size}")
        if (self.k_b, self.k_f) != (1, 2):
            raise SpecError("modules use history depth 1 and prediction horizon 2")

    @classmethod
    def named(cls, name: str, task_kind: str = "SR", feature_dim: int = 64,
              vocab_size: int | None = None, width: int | None = None) -> "ModuleSpec":
        """``"LRS"``, ``"CReZ-CReS"``, ``"LBR-med"`` ... with per-task default widths."""
        base, size = name, ""
        for suffix in SIZES:
            if name.endswith("-" + suffix):
                base, size = name[:-len(suffix) - 1], suffix
        if base not in ZOO:
            raise SpecError(f"unknown module {name!r}; known: {sorted(ZOO)}")
        family, bottleneck, act = ZOO[base]
        if size and family != "late":
            raise SpecError(f"size suffix only applies to late-bottleneck modules: {name!r}")
        if vocab_size is None:
            vocab_size = 7 if task_kind == "LOC" else 2
        if width is None:
            width = TASK_WIDTHS[task_kind][SIZES.index(size or "small")]
        if family == "late" and not size:
            name = f"{name}-small"
        return cls(family, act, bottleneck, width, feature_dim, vocab_size, name=name)

    @property
    def action_dim(self) -> int:
        return 2 * self.k_b + 2

    @property
    def input_dim(self) -> int:
        return (self.k_b + 1) * self.feature_dim

    def tensor_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Canonical tensor order and shapes (fan_in, fan_out)."""
        w, V = self.width, self.vocab_size
        if self.family == "obvious":
            return [("W", (self.feature_dim,)), ("b", (1,))]
        shapes = []
        if self.family == "early":
            nz = w * self.bottleneck.multiplier
            shapes += [("W_0", (self.input_dim, w)), ("b_0", (w,))]
            shapes += [("W_1", (nz + self.action_dim, w)), ("b_1", (w,))]
        else:
            shapes += [("W_1", (self.input_dim + self.action_dim, w)), ("b_1", (w,))]
        m = self.activation.multiplier
        shapes += [("W_2", (w * m, w)), ("b_2", (w,))]
        for j in range(1, self.k_f + 1):
            shapes += [(f"H_{j}", (w * m, V)), (f"c_{j}", (V,))]
        return shapes

    def to_json(self) -> dict:
        return {"family": self.family, "name": self.name,
                "activation": self.activation.value if self.activation else None,
                "bottleneck": self.bottleneck.value if self.bottleneck else None,
                "width": self.width, "feature_dim": self.feature_dim,
                "vocab_size": self.vocab_size, "k_b": self.k_b, "k_f": self.k_f}

    @classmethod
    def from_json(cls, d: dict) -> "ModuleSpec":
        return cls(d["family"], A(d["activation"]) if d.get("activation") else None,
                   A(d["bottleneck"]) if d.get("bottleneck") else None,
                   int(d["width"]), int(d["feature_dim"]), int(d["vocab_size"]),
                   int(d.get("k_b", 1)), int(d.get("k_f", 2)), d.get("name", ""))


def param_count(spec: ModuleSpec) -> int:
    """Closed form; equals the scalar count of ``build_module(spec)``."""
    D, w, V, kf = spec.feature_dim, spec.width, spec.vocab_size, spec.k_f
    if spec.family == "obvious":
        return D + 1
    acts = spec.action_dim
    m = spec.activation.multiplier
    tail = (w * m + 1) * w + kf * (w * m + 1) * V
    if spec.family == "early":
        nz = w * spec.bottleneck.multiplier
        return (spec.input_dim + 1) * w + (nz + acts + 1) * w + tail
    return (spec.input_dim + acts + 1) * w + tail


class ModuleParams:
    """All tensors of a module as named views into one flat buffer."""

    def __init__(self, shapes: Sequence[tuple[str, tuple[int, ...]]], flat: np.ndarray):
        self.shapes = list(shapes)
        self.flat = flat
        self.slices: dict[str, slice] = {}
        self.tensors: dict[str, np.ndarray] = {}
        pos = 0
        for name, shape in self.shapes:
            n = int(np.prod(shape))
            self.slices[name] = slice(pos, pos + n)
            self.tensors[name] = flat[pos:pos + n].reshape(shape)
            pos += n
        if pos != flat.size:
            raise ValueError(f"flat buffer has {flat.size} scalars, shapes need {pos}")

    @classmethod
    def zeros(cls, shapes, dtype=np.float32) -> "ModuleParams":
        return cls(shapes, np.zeros(sum(int(np.prod(s)) for _, s in shapes), dtype=dtype))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.shapes]

    @property
    def size(self) -> int:
        return self.flat.size

    def copy(self, dtype=None) -> "ModuleParams":
        return ModuleParams(self.shapes, self.flat.astype(dtype or self.flat.dtype, copy=True))

    def checksum(self, names: Sequence[str] | None = None) -> str:
        h = hashlib.sha256()
        for n in (self.names if names is None else names):
            h.update(n.encode())
            h.update(np.ascontiguousarray(self.tensors[n]).tobytes())
        return h.hexdigest()

    def active_slices(self, frozen: Sequence[str] = ()) -> list[slice]:
        """Merged flat ranges of the tensors not in ``frozen``."""
        unknown = set(frozen) - set(self.slices)
        if unknown:
            raise KeyError(f"unknown tensors in freeze mask: {sorted(unknown)}")
        out: list[slice] = []
        for name in self.names:
            if name in frozen:
                continue
            sl = self.slices[name]
            if out and out[-1].stop == sl.start:
                out[-1] = slice(out[-1].start, sl.stop)
            else:
                out.append(sl)
        return out


def build_params(spec: ModuleSpec, seed=0, dtype=np.float32) -> ModuleParams:
    """Xavier hidden weights; zero biases and zero output heads; deterministic per seed.

    Zero heads make every untrained reward map constant, so an untrained
    module acts exactly as the uniform random policy.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = ModuleParams.zeros(spec.tensor_shapes(), dtype)
    for name, shape in params.shapes:
        if name == "W":
            params[name][:] = xavier_init(shape[0], 1, rng)[:, 0]
        elif len(shape) == 2 and not name.startswith("H_"):
            params[name][:] = xavier_init(shape[0], shape[1], rng)
    return params


class RewardMap(NamedTuple):
    """``expected[j, n]``: predicted mean reward of candidate n at horizon j+1.

    ``probs[j, n, :]`` holds the categorical distributions (None for the
    scalar obvious module).
    """

    expected: np.ndarray
    probs: np.ndarray | None


def expected_reward(dist, vocab) -> np.ndarray:
    return np.asarray(dist) @ np.asarray(vocab, dtype=np.float64)


class Experience(NamedTuple):
    features: np.ndarray   # (input_dim,) feature history
    prev_action: np.ndarray  # (2 * k_b,) normalised
    action: np.ndarray     # (2,) normalised


class _Cache(NamedTuple):
    feats: np.ndarray
    acts: np.ndarray
    h0: np.ndarray | None
    z: np.ndarray | None
    pre1: np.ndarray
    l1: np.ndarray
    pre2: np.ndarray
    l2: np.ndarray
    logits: list


class Module:
    """Categorical early/late-bottleneck module."""

    def __init__(self, spec: ModuleSpec, params: ModuleParams, vocab: Sequence[float]):
        if spec.family == "obvious":
            raise SpecError("use ObviousSRModule for the obvious family")
        if len(vocab) != spec.vocab_size:
            raise SpecError(f"vocabulary of {len(vocab)} values for {spec.vocab_size} output classes")
        self.spec = spec
        self.params = params
        self.vocab = np.asarray(vocab, dtype=np.float64)
        self._vocab_index = {float(v): i for i, v in enumerate(vocab)}

    def target_index(self, reward: float) -> int:
        try:
            return self._vocab_index[float(reward)]
        except KeyError:
            raise ValueError(f"reward {reward} is not in the vocabulary {tuple(self.vocab)}") from None

    # forward ----------------------------------------------------------------

    def _forward(self, feats: np.ndarray, acts: np.ndarray) -> _Cache:
        """``feats`` (B or 1, input_dim); ``acts`` (B, action_dim). Rows broadcast."""
        spec, P = self.spec, self.params
        X = spec.activation
        if spec.family == "early":
            nz = P["W_1"].shape[0] - spec.action_dim
            h0 = feats @ P["W_0"] + P["b_0"]
            z = activate(spec.bottleneck, h0)
            pre1 = z @ P["W_1"][:nz] + acts @ P["W_1"][nz:] + P["b_1"]
        else:
            h0 = z = None
            F = spec.input_dim
            pre1 = feats @ P["W_1"][:F] + acts @ P["W_1"][F:] + P["b_1"]
        l1 = activate(X, pre1)
        pre2 = l1 @ P["W_2"] + P["b_2"]
        l2 = activate(X, pre2)
        logits = [l2 @ P[f"H_{j}"] + P[f"c_{j}"] for j in range(1, spec.k_f + 1)]
        return _Cache(feats, acts, h0, z, pre1, l1, pre2, l2, logits)

    def _backward(self, c: _Cache, dlogits: Sequence[np.ndarray | None]) -> np.ndarray:
        spec, P = self.spec, self.params
        X = spec.activation
        grad = ModuleParams.zeros(P.shapes, np.result_type(P.flat, c.l2))
        G = grad.tensors
        dl2 = np.zeros_like(c.l2)
        for j, d in enumerate(dlogits, start=1):
            if d is None:
                continue
            G[f"H_{j}"][:] = c.l2.T @ d
            G[f"c_{j}"][:] = d.sum(axis=0)
            dl2 += d @ P[f"H_{j}"].T
        dpre2 = activate_backward(X, c.pre2, dl2, c.l2 if X in (A.TANH, A.SIGMOID) else None)
        G["W_2"][:] = c.l1.T @ dpre2
        G["b_2"][:] = dpre2.sum(axis=0)
        dl1 = dpre2 @ P["W_2"].T
        dpre1 = activate_backward(X, c.pre1, dl1, c.l1 if X in (A.TANH, A.SIGMOID) else None)
        G["b_1"][:] = dpre1.sum(axis=0)
        if spec.family == "early":
            nz = c.z.shape[1]
            G["W_1"][:nz] = c.z.T @ dpre1
            G["W_1"][nz:] = c.acts.T @ dpre1
            dz = dpre1 @ P["W_1"][:nz].T
            dh0 = activate_backward(spec.bottleneck, c.h0, dz)
            G["W_0"][:] = c.feats.T @ dh0
            G["b_0"][:] = dh0.sum(axis=0)
        else:
            F = spec.input_dim
            G["W_1"][:F] = c.feats.T @ dpre1
            G["W_1"][F:] = c.acts.T @ dpre1
        return grad.flat

    def reward_maps(self, features: np.ndarray, prev_action: np.ndarray,
                    candidates: np.ndarray) -> RewardMap:
        """Maps for N candidates sharing one history; the visual part runs once."""
        dt = self.params.flat.dtype
        feats = np.asarray(features, dtype=dt).reshape(1, -1)
        cands = np.asarray(candidates, dtype=dt)
        if feats.shape[1] != self.spec.input_dim:
            raise ValueError(f"feature history has {feats.shape[1]} values, module expects {self.spec.input_dim}")
        prev = np.broadcast_to(np.asarray(prev_action, dtype=dt), (cands.shape[0], 2 * self.spec.k_b))
        acts = np.concatenate([prev, cands], axis=1)
        c = self._forward(feats, acts)
        probs = np.stack([softmax(lg) for lg in c.logits])
        return RewardMap(probs @ self.vocab.astype(dt), probs)

    # learning -----------------------------------------------------------------

    def loss_and_grad(self, rows: Sequence[tuple[Experience, int, float]]):
        """Summed cross-entropy over ``(experience, horizon, reward)`` rows."""
        dt = self.params.flat.dtype
        feats = np.stack([np.asarray(e.features, dtype=dt) for e, _, _ in rows])
        acts = np.stack([np.concatenate([e.prev_action, e.action]).astype(dt) for e, _, _ in rows])
        c = self._forward(feats, acts)
        loss = 0.0
        dlogits = []
        for j in range(1, self.spec.k_f + 1):
            d = np.zeros_like(c.logits[j - 1])
            used = False
            for r, (_, horizon, reward) in enumerate(rows):
                if horizon != j:
                    continue
                used = True
                lg = c.logits[j - 1][r]
                p = softmax(lg)
                t = self.target_index(reward)
                z = lg - lg.max()
                loss += float(np.log(np.exp(z).sum()) - z[t])
                d[r] = p
                d[r, t] -= 1
            dlogits.append(d if used else None)
        return loss, self._backward(c, dlogits)


class ObviousSRModule:
    """``M = ReLu(s) ReLu(-a_x) + ReLu(-s) ReLu(a_x)`` with ``s = W.C_t + b``.

    Trained by squared error; its second-horizon map is identically zero.
    """

    def __init__(self, spec: ModuleSpec, params: ModuleParams, vocab: Sequence[float] = (0.0, 1.0)):
        if spec.family != "obvious":
            raise SpecError("ObviousSRModule needs the obvious family")
        self.spec = spec
        self.params = params
        self.vocab = np.asarray(vocab, dtype=np.float64)

    def _current(self, feats: np.ndarray) -> np.ndarray:
        return feats[..., -self.spec.feature_dim:]

    def reward_maps(self, features, prev_action, candidates) -> RewardMap:
        dt = self.params.flat.dtype
        C = self._current(np.asarray(features, dtype=dt))
        s = C @ self.params["W"] + self.params["b"][0]
        ax = np.asarray(candidates, dtype=dt)[:, 0]
        m1 = obvious_sr_forward(None, None, None, ax, score=s)
        return RewardMap(np.stack([m1, np.zeros_like(m1)]), None)

    def loss_and_grad(self, rows):
        grad = ModuleParams.zeros(self.params.shapes, self.params.flat.dtype)
        loss = 0.0
        for exp, horizon, reward in rows:
            if horizon != 1:
                continue
            C = self._current(np.asarray(exp.features, dtype=self.params.flat.dtype))
            s = float(C @ self.params["W"] + self.params["b"][0])
            ax = float(exp.action[0])
            pred = max(s, 0) * max(-ax, 0) + max(-s, 0) * max(ax, 0)
            err = pred - reward
            loss += err * err
            ds = 2 * err * ((s > 0) * max(-ax, 0) - (s < 0) * max(ax, 0))
            grad["W"][:] += ds * C
            grad["b"][0] += ds
        return loss, grad.flat

    def target_index(self, reward):
        return None


def obvious_sr_forward(W, bias, C, a_x, score=None):
    """Scalar two-way SR reward prediction; ``score`` short-circuits ``W.C + bias``."""
    s = np.dot(C, W) + bias if score is None else score
    a_x = np.asarray(a_x)
    return np.maximum(s, 0) * np.maximum(-a_x, 0) + np.maximum(-s, 0) * np.maximum(a_x, 0)


def make_module(spec: ModuleSpec, params: ModuleParams, vocab):
    return ObviousSRModule(spec, params, vocab) if spec.family == "obvious" else Module(spec, params, vocab)


def build_module(spec: ModuleSpec, vocab, seed=0, dtype=np.float32):
    return make_module(spec, build_params(spec, seed, dtype), vocab)


def module_forward(module, features, prev_action, candidates) -> RewardMap:
    return module.reward_maps(features, prev_action, candidates)


def obvious_lrs_embedding(W, bias, dtype=np.float64) -> Module:
    """A width-2 LRS whose head-1 logit margin equals ``obvious_sr_forward``.

    Uses ``M = ReLu(-s a_x)`` with ``s = W.C_t + bias``. The bottleneck holds
    ``ReLu(+-s)``; layer 1 forms ``p = s +- a_x`` so its squares give
    ``s a_x``; layer 2 and head 1 then read out ``ReLu(-s a_x)``.
    """
    W = np.asarray(W, dtype=np.float64)
    D = W.shape[0]
    spec = ModuleSpec("early", A.RS, A.RELU, 2, D, 2, name="LRS-obvious")
    P = ModuleParams.zeros(spec.tensor_shapes(), dtype)
    P["W_0"][D:, 0], P["W_0"][D:, 1] = W, -W       # current frame only
    P["b_0"][:] = (bias, -bias)
    # W_1 rows: z_0, z_1, then actions (prev x, prev y, cand x, cand y)
    P["W_1"][0] = (1, 1)
    P["W_1"][1] = (-1, -1)
    P["W_1"][4] = (1, -1)
    # RS layer-1 outputs: ReLu(p_0), ReLu(p_1), p_0^2, p_1^2
    P["W_2"][2] = (0.25, -0.25)
    P["W_2"][3] = (-0.25, 0.25)
    # RS layer-2 outputs: ReLu(q_0), ReLu(q_1), ...; q_1 = -s a_x
    P["H_1"][1, 1] = 1.0
    return Module(spec, P, (0.0, 1.0))


def logit_margin(module: Module, features, prev_action, candidates, horizon: int = 1) -> np.ndarray:
    """Logit of the top vocabulary value minus that of the lowest, per candidate."""
    dt = module.params.flat.dtype
    cands = np.asarray(candidates, dtype=dt)
    prev = np.broadcast_to(np.asarray(prev_action, dtype=dt), (cands.shape[0], 2))
    c = module._forward(np.asarray(features, dtype=dt).reshape(1, -1),
                        np.concatenate([prev, cands], axis=1))
    lg = c.logits[horizon - 1]
    return lg[:, -1] - lg[:, 0]


# -- action choice -------------------------------------------------------------

def normalized_maps(expected: np.ndarray):
    """Min-shift and sum-normalise each horizon map. Degenerate (constant) maps give None."""
    out = []
    for m in np.asarray(expected, dtype=np.float64):
        shifted = m - m.min()
        total = shifted.sum()
        out.append(shifted / total if total > 0 else None)
    return out


def select_horizon(expected: np.ndarray):
    """Index of the horizon whose normalised map has the largest entry variance.

    Constant maps count as uniform (variance 0); ties go to the lowest horizon.
    Returns ``(j, p)`` where ``p`` is None if the chosen map is degenerate.
    """
    best_j, best_var, best_p = 0, -1.0, None
    for j, p in enumerate(normalized_maps(expected)):
        var = 0.0 if p is None else float(p.var())
        if var > best_var:
            best_j, best_var, best_p = j, var, p
    return best_j, best_p


def choose_action(expected: np.ndarray, rng: np.random.Generator, mode: str = "sample") -> int:
    expected = np.asarray(expected)
    n = expected.shape[-1]
    if n < 1:
        raise ValueError("need at least one candidate action")
    _, p = select_horizon(expected)
    if p is None:
        return int(rng.integers(n))
    if mode == "greedy":
        return int(np.argmax(p))
    if mode != "sample":
        raise ValueError(f"unknown choice mode {mode!r}")
    cdf = np.cumsum(p)
    return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), n - 1))


def selection_distribution(expected: np.ndarray) -> np.ndarray:
    """Exact probability of each candidate under ``choose_action(mode="sample")``."""
    expected = np.asarray(expected)
    _, p = select_horizon(expected)
    n = expected.shape[-1]
    return np.full(n, 1.0 / n) if p is None else p


# -- online update -------------------------------------------------------------

def training_update(module, opt_state: OptimizerState, opt_cfg: OptimizerConfig,
                    current: Experience, reward: float, previous: Experience | None = None,
                    frozen: Sequence[str] = ()) -> float:
    """One ADAM step on the horizon-1 loss of ``current`` plus the horizon-2
    loss of ``previous``, both against the reward that followed ``current``."""
    rows = [(current, 1, reward)]
    if previous is not None:
        rows.append((previous, 2, reward))
    loss, grad = module.loss_and_grad(rows)
    if not np.isfinite(loss):
        raise NumericalError(f"non-finite training loss {loss}")
    active = module.params.active_slices(frozen) if frozen else None
    adam_step(module.params.flat, grad, opt_state, opt_cfg, active)
    return loss


# -- checkpoints -------------------------------------------------------------

CKPT_MAGIC = b"TSCK"
CKPT_VERSION = 1


class CheckpointError(IOError):
    pass


def save_checkpoint(path: str, module, context: dict | None = None) -> None:
    """Spec JSON (with optional run context) followed by float32 tensors in canonical order."""
    meta = module.spec.to_json()
    meta["vocab"] = [float(v) for v in module.vocab]
    if context:
        meta["context"] = context
    blob = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(blob)) + blob)
        for name, shape in module.params.shapes:
            arr = np.ascontiguousarray(module.params[name], dtype="<f4")
            nb = name.encode()
            fh.write(struct.pack("<I", len(nb)) + nb + struct.pack("<I", len(shape)))
            fh.write(struct.pack(f"<{len(shape)}I", *shape))
            fh.write(arr.tobytes())


def load_checkpoint(path: str, dtype=np.float32):
    """Returns ``(module, context)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {data[:4]!r})")
    try:
        version, n = struct.unpack_from("<II", data, 4)
        if version != CKPT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        pos = 12
        meta = json.loads(data[pos:pos + n])
        pos += n
        spec = ModuleSpec.from_json(meta)
        params = ModuleParams.zeros(spec.tensor_shapes(), dtype)
        for name, shape in params.shapes:
            (ln,) = struct.unpack_from("<I", data, pos)
            pos += 4
            got = data[pos:pos + ln].decode()
            pos += ln
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            if got != name or tuple(dims) != tuple(shape):
                raise CheckpointError(f"{path}: expected tensor {name}{shape}, found {got}{dims}")
            count = int(np.prod(dims))
            if pos + 4 * count > len(data):
                raise CheckpointError(f"{path}: truncated tensor {name}")
            params[name][:] = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(dims)
            pos += 4 * count
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return make_module(spec, params, meta["vocab"]), meta.get("context", {})
