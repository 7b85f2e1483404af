"""Run configuration: defaults, validation, and JSON round-tripping."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace

from .datagen import ConfigError
from .losses import OOD_VARIANTS


@dataclass(frozen=True)
class RunConfig:
    # dataset
    num_classes: int = 20
    imbalance_ratio: float = 100.0
    max_count: int = 500
    dim: int = 16
    separation: float = 3.0
    overlap: float = 0.6
    hard_classes: tuple = (0, 1, 2, 3)
    probe_per_class: int = 20
    test_per_class: int = 100
    tau_m: int = 100
    tau_t: int = 20
    seed: int = 1
    # model
    hidden: int = 64
    # difficulty weighting
    lam: float = 1.0
    gamma: float = 1.0
    alpha: float = 0.5
    ema_beta: float = 0.9
    # objective
    ood_loss: str = "focal"
    ood_class_weighted: bool = True
    lambda_ood: float = 1.0
    focal_g: float = 2.0
    margin_m: float = 0.5
    entropy_eta: float = 0.1
    # optimiser
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 60
    batch_size: int = 64
    # ablation switches
    enable_difficulty: bool = True
    enable_moe: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hard_classes", tuple(int(c) for c in self.hard_classes))

    def problems(self):
        out = []
        if self.num_classes < 2:
            out.append("num_classes must be >= 2")
        if self.imbalance_ratio < 1:
            out.append("imbalance_ratio must be >= 1")
        if self.max_count < self.imbalance_ratio:
            out.append("max_count must be >= imbalance_ratio")
        if self.dim < 2:
            out.append("dim must be >= 2")
        if self.separation <= 0:
            out.append("separation must be > 0")
        if not 0.0 <= self.overlap < 1.0:
            out.append("overlap must lie in [0, 1)")
        if any(not 0 <= c < self.num_classes for c in self.hard_classes):
            out.append("hard_classes must index existing classes")
        if self.probe_per_class < 1 or self.test_per_class < 1:
            out.append("probe_per_class and test_per_class must be >= 1")
        if not self.tau_t < self.tau_m:
            out.append("tau_t must be < tau_m")
        if self.hidden < 1:
            out.append("hidden must be >= 1")
        if self.lam < 0:
            out.append("lam must be >= 0")
        if self.gamma <= 0:
            out.append("gamma must be > 0")
        if not 0.0 <= self.alpha <= 1.0:
            out.append("alpha must lie in [0, 1]")
        if not 0.0 <= self.ema_beta < 1.0:
            out.append("ema_beta must lie in [0, 1)")
        if self.ood_loss not in OOD_VARIANTS:
            out.append(f"ood_loss must be one of {', '.join(OOD_VARIANTS)}")
        if self.lambda_ood < 0:
            out.append("lambda_ood must be >= 0")
        if self.margin_m < 0 or self.focal_g < 0 or self.entropy_eta < 0:
            out.append("focal_g, margin_m and entropy_eta must be >= 0")
        if self.lr < 0:
            out.append("lr must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            out.append("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            out.append("weight_decay must be >= 0")
        if self.epochs < 1:
            out.append("epochs must be >= 1")
        if self.batch_size < 1:
            out.append("batch_size must be >= 1")
        return out

    def validate(self):
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self):
        d = asdict(self)
        d["hard_classes"] = list(self.hard_classes)
        return d

    @classmethod
    def from_dict(cls, data):
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError([f"unknown config key {k!r}" for k in unknown])
        problems = []
        kwargs = {}
        for key, value in data.items():
            default = known[key].default
            try:
                kwargs[key] = _coerce(value, default)
            except (TypeError, ValueError):
                problems.append(f"{key}: cannot interpret {value!r} as {type(default).__name__}")
        if problems:
            raise ConfigError(problems)
        return cls(**kwargs).validate()

    def with_overrides(self, **changes):
        return replace(self, **changes).validate()


def _coerce(value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise TypeError
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
            raise TypeError
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool):
            raise TypeError
        return float(value)
    if isinstance(default, tuple):
        return tuple(int(v) for v in value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise TypeError
        return value
    return value


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return RunConfig.from_dict(data)


def dump_config(config, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
