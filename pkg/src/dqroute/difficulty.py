"""Per-class difficulty tracking and class-weight computation.

Each epoch the trainer measures entropy and accuracy per class on a balanced
probe split, turns them into a difficulty score, applies a multiplicative
weights update, and blends the result with inverse-frequency weights.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .datagen import ConfigError

STATS_HEADER = ["epoch", "class", "n_c", "H_c", "A_c", "d_c", "w_c", "q_c", "w_blend"]


class CoverageError(ValueError):
    pass


@dataclass(frozen=True)
class ClassStats:
    counts: np.ndarray
    entropy: np.ndarray
    accuracy: np.ndarray
    difficulty: np.ndarray
    weights: np.ndarray
    quantity: np.ndarray
    blended: np.ndarray
    epoch: int = 0

    @classmethod
    def initial(cls, counts, alpha=0.5):
        counts = np.asarray(counts, dtype=np.int64)
        n = len(counts)
        w = np.full(n, 1.0 / n)
        q = quantity_weights(counts)
        zeros = np.zeros(n)
        return cls(counts, zeros, zeros, zeros, w, q, blend(w, q, alpha), 0)

    @property
    def num_classes(self):
        return len(self.counts)


def _softmax_rows(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def measure(probe_logits, probe_labels, prior, ema_beta=0.9):
    """Refresh mean entropy and EMA-smoothed accuracy from probe predictions.

    The first call (``prior.epoch == 0``) seeds the accuracy average with the
    raw per-class accuracy.
    """
    if not 0.0 <= ema_beta < 1.0:
        raise ConfigError(f"ema_beta must lie in [0, 1), got {ema_beta}")
    logits = np.asarray(probe_logits, dtype=np.float64)
    labels = np.asarray(probe_labels, dtype=np.int64)
    n_classes = prior.num_classes
    per_class = np.bincount(labels, minlength=n_classes)
    missing = np.flatnonzero(per_class == 0)
    if missing.size:
        raise CoverageError(f"probe split has no samples for classes {missing.tolist()}")

    probs = _softmax_rows(logits)
    ent = -(probs * np.log(np.maximum(probs, 1e-300))).sum(axis=1)
    # argmax ties resolve to the lowest class index
    correct = (probs.argmax(axis=1) == labels).astype(np.float64)
    H = np.bincount(labels, weights=ent, minlength=n_classes) / per_class
    raw_acc = np.bincount(labels, weights=correct, minlength=n_classes) / per_class
    if prior.epoch == 0:
        A = raw_acc
    else:
        A = ema_beta * prior.accuracy + (1.0 - ema_beta) * raw_acc
    return replace(prior, entropy=H, accuracy=A, epoch=prior.epoch + 1)


def difficulty_score(stats, lam=1.0):
    """Entropy ratio plus ``lam`` times the accuracy shortfall ratio.

    Degenerate maxima: a zero entropy maximum zeroes the entropy term, a zero
    accuracy maximum saturates the accuracy term at ``lam``.
    """
    H = np.asarray(stats.entropy, dtype=np.float64)
    A = np.asarray(stats.accuracy, dtype=np.float64)
    h_max, a_max = H.max(), A.max()
    ent_term = H / h_max if h_max > 0 else np.zeros_like(H)
    acc_term = 1.0 - A / a_max if a_max > 0 else np.ones_like(A)
    return ent_term + lam * acc_term


def update_weights(stats, d, gamma=1.0):
    d = np.asarray(d, dtype=np.float64)
    if not np.all(np.isfinite(d)):
        raise ValueError("difficulty scores must be finite")
    if np.all(d == d[0]):
        # normalised update is the identity; skip it so the fixed point is exact
        return replace(stats, difficulty=d)
    w = stats.weights * np.exp(gamma * (d - d.max()))
    return replace(stats, difficulty=d, weights=w / w.sum())


def quantity_weights(counts):
    """Normalised inverse-frequency weights."""
    if hasattr(counts, "counts"):
        counts = counts.counts
    inv = 1.0 / np.asarray(counts, dtype=np.float64)
    return inv / inv.sum()


def blend(w, q, alpha):
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha * np.asarray(w, dtype=np.float64) + (1.0 - alpha) * np.asarray(q, dtype=np.float64)


def append_stats_csv(path, stats):
    path = Path(path)
    new = not path.exists()
    with open(path, "a", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(STATS_HEADER)
        for c in range(stats.num_classes):
            writer.writerow([
                stats.epoch, c, int(stats.counts[c]),
                repr(float(stats.entropy[c])), repr(float(stats.accuracy[c])),
                repr(float(stats.difficulty[c])), repr(float(stats.weights[c])),
                repr(float(stats.quantity[c])), repr(float(stats.blended[c])),
            ])
