"""Online training, validation and task switching."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..backbone import BackboneConfig, CachedFeatures, make_backbone
from ..environment import TaskSpec, TouchstreamEnv
from ..imagery import Dataset
from ..modules import (
    Experience,
    SpecError,
    build_module,
    choose_action,
    save_checkpoint,
    training_update,
)
from ..numerics import NumericalError, OptimizerConfig, OptimizerState
from .config import ConfigError, RunConfig

log = logging.getLogger(__name__)

_DATASETS: dict = {}
_FEATURES: dict = {}
CALIBRATION_IMAGES = 256


def dataset_for(task: TaskSpec) -> Dataset:
    key = (task.kind, task.size, task.train_per_class, task.val_per_class,
           task.loc_train, task.loc_val, task.dataset_seed)
    ds = _DATASETS.get(key)
    if ds is None:
        ds = task.build_dataset()
        _DATASETS[key] = ds
    return ds


def features_for(cfg: BackboneConfig, task: TaskSpec) -> CachedFeatures:
    """Shared, memoised encoder. The random convnet is calibrated on train images."""
    ds = dataset_for(task)
    key = (cfg, task.kind, id(ds))
    feats = _FEATURES.get(key)
    if feats is None:
        backbone = make_backbone(cfg)
        if cfg.kind == "random_conv":
            train = ds.split("train")
            step = max(1, len(train) // CALIBRATION_IMAGES)
            backbone.calibrate(ds.render(r) for r in train[::step][:CALIBRATION_IMAGES])
        feats = CachedFeatures(backbone)
        _FEATURES[key] = feats
    return feats


class Agent:
    """Frozen features + a module + the VarArgmax policy, with bounded history."""

    def __init__(self, module, features, size: int, candidates: int,
                 opt_cfg: OptimizerConfig | None = None, frozen: Sequence[str] = ()):
        self.module = module
        self.features = features
        self.size = size
        self.candidates = candidates
        self.opt_cfg = opt_cfg
        self.opt_state = OptimizerState.zeros_like(module.params.flat)
        self.frozen = tuple(frozen)
        self.dtype = module.params.flat.dtype
        self.reset_history()

    def reset_history(self) -> None:
        D = self.module.spec.feature_dim
        self._prev_features = np.zeros(D, dtype=self.dtype)
        self._prev_action = np.zeros(2, dtype=self.dtype)
        self._pending: Experience | None = None

    def history(self, frame) -> np.ndarray:
        current = np.asarray(self.features(frame), dtype=self.dtype)
        return np.concatenate([self._prev_features, current]), current

    def act(self, frame, rng: np.random.Generator, mode: str = "sample"):
        hist, current = self.history(frame)
        cands = rng.uniform(0.0, self.size, size=(self.candidates, 2))
        normed = (cands * (2.0 / self.size) - 1.0).astype(self.dtype)
        maps = self.module.reward_maps(hist, self._prev_action, normed)
        idx = choose_action(maps.expected, rng, mode)
        exp = Experience(hist, self._prev_action, normed[idx])
        self._prev_features = current
        self._prev_action = normed[idx]
        return cands[idx], exp

    def learn(self, exp: Experience, reward: float) -> float:
        loss = training_update(self.module, self.opt_state, self.opt_cfg, exp, reward,
                               self._pending, self.frozen)
        self._pending = exp
        return loss


@dataclass
class StreamStats:
    trials: int = 0
    reward: float = 0.0
    iou: float = 0.0
    n_iou: int = 0

    def metrics(self) -> dict[str, float]:
        out = {"reward": self.reward / max(self.trials, 1)}
        if self.n_iou:
            out["iou"] = self.iou / self.n_iou
        return out


def run_stream(agent: Agent, env: TouchstreamEnv, n_trials: int, rng: np.random.Generator,
               mode: str = "sample", learn: bool = True) -> StreamStats:
    """Advance ``env`` by ``n_trials`` complete trials."""
    stats = StreamStats()
    frame = env.frame
    while stats.trials < n_trials:
        action, exp = agent.act(frame, rng, mode)
        step = env.step(action)
        if learn:
            agent.learn(exp, step.reward)
        frame = step.frame
        if step.trial_end:
            stats.trials += 1
            stats.reward += float(step.reward)
            if "iou" in step.info:
                stats.iou += float(step.info["iou"])
                stats.n_iou += 1
    return stats


def evaluate(module, task: TaskSpec, features, n_trials: int = 500, seed=0,
             candidates: int = 256) -> dict[str, float]:
    """Greedy policy on the validation split; never touches parameters."""
    if module.spec.vocab_size != len(task.vocab):
        raise ConfigError(f"module predicts {module.spec.vocab_size} reward values, "
                          f"task {task.name} has {len(task.vocab)}")
    if module.spec.family == "obvious" and task.name != "SR:two_way":
        raise ConfigError("the obvious module only solves two-way SR")
    ss = np.random.SeedSequence(seed)
    env_ss, policy_ss = ss.spawn(2)
    env = TouchstreamEnv(task, np.random.default_rng(env_ss), "val", dataset_for(task))
    agent = Agent(module, features, task.size, candidates)
    stats = run_stream(agent, env, n_trials, np.random.default_rng(policy_ss), "greedy", learn=False)
    return stats.metrics()


@dataclass
class Curve:
    seed: int
    points: list[tuple[int, dict[str, float]]] = field(default_factory=list)
    error: str | None = None

    def values(self, metric: str = "reward") -> tuple[np.ndarray, np.ndarray]:
        t = np.array([p[0] for p in self.points], dtype=float)
        v = np.array([p[1][metric] for p in self.points], dtype=float)
        return t, v

    def final(self, metric: str = "reward") -> float:
        return self.points[-1][1][metric]


@dataclass
class SeedRun:
    curve: Curve
    module: object
    trials: int


def _seed_streams(seed: int):
    env_ss, init_ss, policy_ss, val_ss = np.random.SeedSequence([seed, 7321]).spawn(4)
    val_seed = int(val_ss.generate_state(1)[0])
    return env_ss, init_ss, policy_ss, val_seed


def train_seed(cfg: RunConfig, seed: int, module=None, trials: int | None = None,
               task: TaskSpec | None = None) -> SeedRun:
    """Train one seed, validating every ``cfg.cadence`` trials (and at trial 0)."""
    task = task or cfg.task
    trials = cfg.trials if trials is None else trials
    spec = cfg.module_spec if module is None else module.spec
    env_ss, init_ss, policy_ss, val_seed = _seed_streams(seed)
    if module is None:
        module = build_module(spec, task.vocab, np.random.default_rng(init_ss))
    features = features_for(cfg.backbone, task)
    frozen = frozen_tensors(cfg.freeze, module)
    agent = Agent(module, features, task.size, cfg.candidates, cfg.optimizer, frozen)
    env = TouchstreamEnv(task, np.random.default_rng(env_ss), "train", dataset_for(task))
    rng = np.random.default_rng(policy_ss)
    curve = Curve(seed)

    def validate(done: int):
        curve.points.append((done, evaluate(module, task, features, cfg.val_trials, val_seed,
                                            cfg.candidates)))

    done = 0
    validate(0)
    try:
        while done < trials:
            chunk = min(cfg.cadence, trials - done)
            run_stream(agent, env, chunk, rng, "sample", learn=True)
            done += chunk
            validate(done)
    except NumericalError as exc:
        curve.error = f"seed {seed}: numerical failure after {done} trials: {exc}"
        log.error(curve.error)
    return SeedRun(curve, module, done)


@dataclass
class TrainingResult:
    config: RunConfig
    runs: list[SeedRun]

    @property
    def curves(self) -> list[Curve]:
        return [r.curve for r in self.runs]

    @property
    def failed(self) -> bool:
        return any(c.error for c in self.curves)


def run_training(cfg: RunConfig, out_dir: str | None = None,
                 seeds: Sequence[int] | None = None) -> TrainingResult:
    runs = [train_seed(cfg, s) for s in (cfg.seeds if seeds is None else seeds)]
    result = TrainingResult(cfg, runs)
    if out_dir is not None:
        write_run(result, out_dir)
    return result


# -- task switching ------------------------------------------------------------

def frozen_tensors(preset: str, module) -> tuple[str, ...]:
    names = module.params.names
    family = module.spec.family
    if preset == "none":
        return ()
    if family == "obvious":
        raise ConfigError(f"preset {preset!r} does not apply to the obvious module")
    heads = tuple(n for n in names if n.startswith(("H_", "c_")))
    if preset == "lrs_bottleneck_only":
        if family != "early":
            raise ConfigError("lrs_bottleneck_only needs an early-bottleneck module")
        return tuple(n for n in names if n not in ("W_0", "b_0"))
    if preset == "lbx_v1":
        return heads
    if preset == "lbx_v2":
        return heads + ("W_2", "b_2")
    raise ConfigError(f"unknown freeze preset {preset!r}")


def run_switch(base_module, new_task: TaskSpec, preset: str, cfg: RunConfig,
               seeds: Sequence[int] | None = None, out_dir: str | None = None) -> TrainingResult:
    """Warm-start copies of ``base_module`` (one module, or one per seed) on ``new_task``."""
    seeds = list(cfg.seeds if seeds is None else seeds)
    bases = base_module if isinstance(base_module, (list, tuple)) else [base_module] * len(seeds)
    cfg = cfg.with_(task=new_task, freeze=preset)
    runs = []
    for seed, base in zip(seeds, bases):
        warm = type(base)(base.spec, base.params.copy(), new_task.vocab)
        frozen_tensors(preset, warm)
        runs.append(train_seed(cfg, seed, module=warm, task=new_task))
    result = TrainingResult(cfg, runs)
    if out_dir is not None:
        write_run(result, out_dir)
    return result


# -- artifacts -----------------------------------------------------------------

CURVE_HEADER = "trial,seed,split,metric,value"


def curve_rows(curves: Sequence[Curve]):
    for c in curves:
        for trial, metrics in c.points:
            for metric in sorted(metrics):
                yield f"{trial},{c.seed},val,{metric},{metrics[metric]:.6f}"


def write_run(result: TrainingResult, out_dir: str) -> None:
    import json

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(result.config.to_json(), fh, indent=1, sort_keys=True)
    with open(os.path.join(out_dir, "curves.csv"), "w") as fh:
        fh.write(CURVE_HEADER + "\n")
        for row in curve_rows(result.curves):
            fh.write(row + "\n")
    context = {"task": result.config.task.to_json(), "backbone": result.config.backbone.to_json()}
    for run in result.runs:
        save_checkpoint(os.path.join(out_dir, f"seed{run.curve.seed}.tsck"), run.module, context)
    errors = [c.error for c in result.curves if c.error]
    if errors:
        with open(os.path.join(out_dir, "errors.jsonl"), "w") as fh:
            for e in errors:
                fh.write(json.dumps({"error": e}) + "\n")
