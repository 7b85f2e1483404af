"""Shared MLP trunk with three class-group experts (general, medium, tail).

Every expert has a full-width classifier head and a scalar confidence head
whose sigmoid output estimates whether the input's class is in the expert's
group.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .numcore import DimensionError, Tensor

NUM_EXPERTS = 3
EXPERT_NAMES = ("general", "medium", "tail")


class ConfigurationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ExpertSpec:
    index: int
    class_group: frozenset
    mask: np.ndarray | None = None

    def select(self, labels):
        return np.isin(np.asarray(labels), sorted(self.class_group))


def partition(spec, labels=None):
    """Nested class groups: everything, ``n_c < tau_m``, ``n_c < tau_t``."""
    counts = spec.counts
    groups = [
        frozenset(range(len(counts))),
        frozenset(c for c, n in enumerate(counts) if n < spec.tau_m),
        frozenset(c for c, n in enumerate(counts) if n < spec.tau_t),
    ]
    if not groups[2]:
        warnings.warn("tail expert has no classes (no count below tau_t)", ConfigurationWarning)
    if groups[1] == groups[0]:
        warnings.warn("medium expert covers every class (all counts below tau_m)", ConfigurationWarning)
    experts = []
    for k, g in enumerate(groups, start=1):
        mask = None if labels is None else np.isin(np.asarray(labels), sorted(g))
        experts.append(ExpertSpec(k, g, mask))
    return experts


def group_targets(experts, labels):
    """Binary membership targets ``[3, B]``: 1 where the label is in expert k's group."""
    return np.stack([e.select(labels) for e in experts]).astype(np.float64)


PARAM_ORDER = (
    "trunk.w1", "trunk.b1", "trunk.w2", "trunk.b2",
    *(f"expert{k}.{part}" for k in range(1, NUM_EXPERTS + 1)
      for part in ("cls.w", "cls.b", "ood.w", "ood.b")),
)


class ExpertBank:
    def __init__(self, params, dim, hidden, num_classes):
        self.params = params
        self.dim = dim
        self.hidden = hidden
        self.num_classes = num_classes

    def parameters(self):
        return [self.params[name] for name in PARAM_ORDER]

    def named_parameters(self):
        return [(name, self.params[name]) for name in PARAM_ORDER]

    def num_parameters(self):
        return int(np.sum([p.size for p in self.parameters()]))

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def copy(self):
        params = {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.params.items()}
        return ExpertBank(params, self.dim, self.hidden, self.num_classes)

    def trunk(self, x):
        p = self.params
        h1 = nc.relu(nc.add(nc.matmul(x, p["trunk.w1"]), p["trunk.b1"]))
        return nc.relu(nc.add(nc.matmul(h1, p["trunk.w2"]), p["trunk.b2"]))

    def forward(self, x, experts=range(1, NUM_EXPERTS + 1)):
        """Return ``(logits, scores)``: lists of ``[B, C]`` and ``[B]`` tensors."""
        x = nc.as_tensor(x)
        if x.data.ndim != 2 or x.shape[1] != self.dim:
            raise DimensionError(f"expected input [B, {self.dim}], got {x.shape}")
        feats = self.trunk(x)
        p = self.params
        logits, scores = [], []
        for k in experts:
            logits.append(nc.add(nc.matmul(feats, p[f"expert{k}.cls.w"]), p[f"expert{k}.cls.b"]))
            scores.append(nc.sigmoid(nc.add(nc.matmul(feats, p[f"expert{k}.ood.w"]), p[f"expert{k}.ood.b"])))
        return logits, scores

    __call__ = forward

    def to_dict(self):
        return {name: {"shape": list(t.shape), "data": [float(v) for v in t.data.ravel()]}
                for name, t in self.named_parameters()}

    @classmethod
    def from_dict(cls, blob):
        params = {}
        for name in PARAM_ORDER:
            entry = blob[name]
            arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            params[name] = Tensor(arr, requires_grad=True, name=name)
        dim, hidden = params["trunk.w1"].shape
        num_classes = params["expert1.cls.w"].shape[1]
        return cls(params, dim, hidden, num_classes)


def forward(bank, x):
    return bank.forward(x)


def init_params(seed, dim, hidden, num_classes):
    """Gaussian weights with std ``1/sqrt(fan_in)``; zero biases."""
    if min(dim, hidden, num_classes) < 1:
        raise ValueError("dimensions must be positive")
    rng = np.random.default_rng([seed, 0x1417])
    shapes = {
        "trunk.w1": (dim, hidden), "trunk.b1": (hidden,),
        "trunk.w2": (hidden, hidden), "trunk.b2": (hidden,),
    }
    for k in range(1, NUM_EXPERTS + 1):
        shapes[f"expert{k}.cls.w"] = (hidden, num_classes)
        shapes[f"expert{k}.cls.b"] = (num_classes,)
        shapes[f"expert{k}.ood.w"] = (hidden,)
        shapes[f"expert{k}.ood.b"] = ()
    params = {}
    for name in PARAM_ORDER:
        shape = shapes[name]
        if name.endswith(".b") or name.startswith("trunk.b"):
            arr = np.zeros(shape)
        else:
            arr = rng.standard_normal(shape) / np.sqrt(shape[0])
        params[name] = Tensor(arr, requires_grad=True, name=name)
    return ExpertBank(params, dim, hidden, num_classes)


def save_checkpoint(bank, config, path):
    blob = {"config": config, "params": bank.to_dict()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh)
        fh.write("\n")


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        blob = json.load(fh)
    return ExpertBank.from_dict(blob["params"]), blob.get("config", {})
