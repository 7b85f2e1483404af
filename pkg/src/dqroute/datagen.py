"""Synthetic long-tailed Gaussian-mixture datasets."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MANY_SHOT_ABOVE = 100
FEW_SHOT_BELOW = 20


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists every violated rule."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class CSVFormatError(ValueError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


@dataclass(frozen=True)
class ShotSplit:
    many: tuple
    medium: tuple
    few: tuple

    @classmethod
    def from_counts(cls, counts):
        many, medium, few = [], [], []
        for c, n in enumerate(counts):
            if n > MANY_SHOT_ABOVE:
                many.append(c)
            elif n >= FEW_SHOT_BELOW:
                medium.append(c)
            else:
                few.append(c)
        return cls(tuple(many), tuple(medium), tuple(few))

    def groups(self):
        return {"many": self.many, "med": self.medium, "few": self.few}


@dataclass(frozen=True)
class LongTailSpec:
    num_classes: int
    imbalance_ratio: float
    max_count: int
    counts: tuple
    tau_m: int
    tau_t: int

    @property
    def shot_split(self):
        return ShotSplit.from_counts(self.counts)


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    split: str = "train"
    num_classes: int | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.num_classes is None:
            self.num_classes = int(self.labels.max()) + 1 if len(self.labels) else 0

    def __len__(self):
        return len(self.labels)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.num_classes)


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def exponential_counts(num_classes, imbalance_ratio, max_count):
    if num_classes == 1:
        return (max_count,)
    counts = []
    for c in range(num_classes):
        n = max_count * imbalance_ratio ** (-c / (num_classes - 1))
        counts.append(max(1, _round_half_up(n)))
    return tuple(counts)


def make_spec(num_classes, imbalance_ratio, max_count, tau_m=100, tau_t=20):
    problems = []
    if num_classes < 2:
        problems.append(f"num_classes must be >= 2, got {num_classes}")
    if imbalance_ratio < 1:
        problems.append(f"imbalance_ratio must be >= 1, got {imbalance_ratio}")
    if max_count < imbalance_ratio:
        problems.append(f"max_count ({max_count}) must be >= imbalance_ratio ({imbalance_ratio})")
    if not tau_t < tau_m:
        problems.append(f"tau_t ({tau_t}) must be < tau_m ({tau_m})")
    if problems:
        raise ConfigError(problems)
    counts = exponential_counts(num_classes, imbalance_ratio, max_count)
    return LongTailSpec(num_classes, float(imbalance_ratio), int(max_count), counts, tau_m, tau_t)


def class_means(num_classes, dim, seed, separation=3.0, overlap=0.0, hard_classes=()):
    """Place class means on a sphere of radius ``separation``.

    Directions are seed-dependent Gaussian draws, normalised. Each class in
    ``hard_classes`` is then pulled toward its nearest neighbour so that the
    gap shrinks by the factor ``1 - overlap``.
    """
    rng = np.random.default_rng([seed, 0xC1A55])
    dirs = rng.standard_normal((num_classes, dim))
    base = separation * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    means = base.copy()
    for c in hard_classes:
        dist = np.linalg.norm(base - base[c], axis=1)
        dist[c] = np.inf
        partner = int(np.argmin(dist))
        means[c] = base[partner] + (1.0 - overlap) * (base[c] - base[partner])
    return means


def generate(spec, dim, seed, probe_per_class, test_per_class, overlap=0.0,
             hard_classes=(), separation=3.0):
    """Draw (train, probe, test) splits; unit-variance isotropic noise per class."""
    problems = []
    if dim < 2:
        problems.append(f"dim must be >= 2, got {dim}")
    if probe_per_class < 1 or test_per_class < 1:
        problems.append("probe_per_class and test_per_class must be >= 1")
    if not 0.0 <= overlap < 1.0:
        problems.append(f"overlap must lie in [0, 1), got {overlap}")
    bad = [c for c in hard_classes if not 0 <= c < spec.num_classes]
    if bad:
        problems.append(f"hard_classes out of range: {bad}")
    if problems:
        raise ConfigError(problems)

    means = class_means(spec.num_classes, dim, seed, separation, overlap, hard_classes)
    rng = np.random.default_rng([seed, 0xDA7A])

    def draw(per_class, split):
        labels = np.repeat(np.arange(spec.num_classes), per_class)
        noise = rng.standard_normal((len(labels), dim))
        return Dataset(means[labels] + noise, labels, split, spec.num_classes)

    train = draw(np.asarray(spec.counts), "train")
    probe = draw(np.full(spec.num_classes, probe_per_class), "probe")
    test = draw(np.full(spec.num_classes, test_per_class), "test")
    return train, probe, test


def write_csv(dataset, path):
    d = dataset.features.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label"] + [f"f{i}" for i in range(d)])
        for y, row in zip(dataset.labels, dataset.features):
            writer.writerow([int(y)] + [repr(float(v)) for v in row])


def load_csv(path, num_classes=None, split="train"):
    """Read a ``label,f0,...`` CSV; errors name the offending line."""
    path = Path(path)
    labels, rows = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CSVFormatError(1, "empty file") from None
        if not header or header[0] != "label":
            raise CSVFormatError(1, "header must start with 'label'")
        expected = [f"f{i}" for i in range(len(header) - 1)]
        if header[1:] != expected or not expected:
            raise CSVFormatError(1, f"feature columns must be {expected or 'f0,...'}")
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width:
                raise CSVFormatError(lineno, f"expected {width} fields, got {len(row)}")
            label = row[0].strip()
            if not label.isdigit():
                raise CSVFormatError(lineno, f"label {row[0]!r} is not a non-negative integer")
            try:
                feats = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise CSVFormatError(lineno, str(exc)) from None
            if not all(math.isfinite(v) for v in feats):
                raise CSVFormatError(lineno, "non-finite feature value")
            labels.append(int(label))
            rows.append(feats)
    if not labels:
        raise CSVFormatError(2, "no data rows")
    labels = np.asarray(labels, dtype=np.int64)
    if num_classes is not None and labels.max() >= num_classes:
        raise ConfigError(f"label {int(labels.max())} >= num_classes {num_classes}")
    return Dataset(np.asarray(rows), labels, split, num_classes)
