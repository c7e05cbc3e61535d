"""Run configuration: JSON sections task/backbone/module/optimizer/policy/run."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from ..backbone import BackboneConfig
from ..environment import TaskSpec
from ..modules import ModuleSpec, SpecError
from ..numerics import OptimizerConfig
from ..reference import default_learning_rate


class ConfigError(ValueError):
    pass


FREEZE_PRESETS = ("none", "lrs_bottleneck_only", "lbx_v1", "lbx_v2")
PRESET_ALIASES = {"lrs-bottleneck": "lrs_bottleneck_only", "lbx-v1": "lbx_v1", "lbx-v2": "lbx_v2"}

_SECTION_KEYS = {
    "task": {"kind", "variant", "size", "classes", "train_per_class", "val_per_class",
             "loc_train", "loc_val", "dataset_seed"},
    "backbone": {"kind", "dim", "seed", "path", "size", "n_classes", "noise"},
    "module": {"name", "width"},
    "optimizer": {"lr", "beta1", "beta2", "eps"},
    "policy": {"candidates"},
    "run": {"trials", "cadence", "val_trials", "seeds", "freeze"},
}


@dataclass(frozen=True)
class RunConfig:
    task: TaskSpec
    backbone: BackboneConfig
    module_name: str
    optimizer: OptimizerConfig
    width: int | None = None
    candidates: int = 256
    trials: int = 20_000
    cadence: int = 1000
    val_trials: int = 500
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    freeze: str = "none"

    def __post_init__(self):
        if self.cadence < 1 or self.trials < 0 or self.val_trials < 1 or self.candidates < 1:
            raise ConfigError("cadence, val_trials and candidates must be >= 1 and trials >= 0")
        if self.freeze not in FREEZE_PRESETS:
            raise ConfigError(f"unknown freeze preset {self.freeze!r}")
        if self.backbone.size != self.task.size:
            raise ConfigError(f"backbone size {self.backbone.size} != screen size {self.task.size}")
        self.module_spec  # validates the module name

    @property
    def module_spec(self) -> ModuleSpec:
        try:
            return ModuleSpec.named(self.module_name, self.task.kind, self.backbone.dim,
                                    len(self.task.vocab), self.width)
        except SpecError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def build(cls, task: TaskSpec, module: str, backbone: BackboneConfig | None = None,
              lr: float | None = None, **kw) -> "RunConfig":
        """Convenience constructor filling the learning rate from the reference table."""
        if backbone is None:
            backbone = BackboneConfig(size=task.size)
        spec = ModuleSpec.named(module, task.kind, backbone.dim, len(task.vocab), kw.get("width"))
        if lr is None:
            lr = default_learning_rate(task.name, spec.name)
        return cls(task, backbone, module, OptimizerConfig(lr=lr), **kw)

    def with_(self, **kw) -> "RunConfig":
        return replace(self, **kw)

    def to_json(self) -> dict:
        module = {"name": self.module_name}
        if self.width is not None:
            module["width"] = self.width
        return {
            "task": self.task.to_json(),
            "backbone": self.backbone.to_json(),
            "module": module,
            "optimizer": {"lr": self.optimizer.lr, "beta1": self.optimizer.beta1,
                          "beta2": self.optimizer.beta2, "eps": self.optimizer.eps},
            "policy": {"candidates": self.candidates},
            "run": {"trials": self.trials, "cadence": self.cadence, "val_trials": self.val_trials,
                    "seeds": list(self.seeds), "freeze": self.freeze},
        }

    @classmethod
    def from_json(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("run config must be a JSON object")
        unknown = set(d) - set(_SECTION_KEYS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        for section, keys in _SECTION_KEYS.items():
            extra = set(d.get(section, {})) - keys
            if extra:
                raise ConfigError(f"unknown keys in {section!r}: {sorted(extra)}")
        try:
            t = dict(d.get("task", {}))
            if "classes" in t and t["classes"] is not None:
                t["classes"] = tuple(t["classes"])
            task = TaskSpec(**t)
            b = dict(d.get("backbone", {}))
            b.setdefault("size", task.size)
            backbone = BackboneConfig(**b)
            m = d.get("module", {})
            if "name" not in m:
                raise ConfigError("module.name is required")
            width = m.get("width")
            spec = ModuleSpec.named(m["name"], task.kind, backbone.dim, len(task.vocab), width)
            o = dict(d.get("optimizer", {}))
            o.setdefault("lr", default_learning_rate(task.name, spec.name))
            optimizer = OptimizerConfig(**o)
            run = dict(d.get("run", {}))
            if "seeds" in run:
                run["seeds"] = tuple(int(s) for s in run["seeds"])
            if "freeze" in run:
                run["freeze"] = PRESET_ALIASES.get(run["freeze"], run["freeze"])
            policy = d.get("policy", {})
            return cls(task, backbone, m["name"], optimizer, width=width, **policy, **run)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return RunConfig.from_json(data)
