"""Confidence routing, expert fusion, and the training objective.

All functions take and return ``numcore`` tensors so the objective is
differentiable end to end; plain arrays are accepted and treated as
constants.
"""

from __future__ import annotations

import math

import numpy as np

from . import numcore as nc
from .datagen import ConfigError

OOD_VARIANTS = ("bce", "entropy", "focal", "margin")


def route(scores):
    """Normalise per-expert confidence scores into per-sample routing weights."""
    scores = [nc.as_tensor(s) for s in scores]
    total = scores[0]
    for s in scores[1:]:
        total = nc.add(total, s)
    return [nc.div(s, total) for s in scores]


def _column(a):
    return nc.reshape(a, a.shape + (1,))


def fuse(alpha, probs):
    """Convex combination of expert class distributions, ``[B, C]``."""
    fused = None
    for a, p in zip(alpha, probs):
        a, p = nc.as_tensor(a), nc.as_tensor(p)
        term = nc.mul(_column(a) if p.data.ndim == a.data.ndim + 1 else a, p)
        fused = term if fused is None else nc.add(fused, term)
    return fused


def _binary_entropy(s):
    inner = nc.add(nc.mul(s, nc.log(s)), nc.mul(nc.sub(1.0, s), nc.log(nc.sub(1.0, s))))
    return nc.mul(inner, -1.0)


def _bce(s, b):
    pos = nc.mul(b, nc.log(s))
    neg = nc.mul(nc.sub(1.0, b), nc.log(nc.sub(1.0, s)))
    return nc.mul(nc.add(pos, neg), -1.0)


def classifier_confidence(probs):
    """``1 - H(p) / ln C`` per sample; 1 for a one-hot prediction, 0 for uniform."""
    probs = nc.as_tensor(probs)
    n = probs.shape[-1]
    return nc.sub(1.0, nc.mul(nc.entropy(probs), 1.0 / math.log(n)))


def ood_loss_terms(variant, s, b, probs=None, focal_g=2.0, margin_m=0.5, entropy_eta=0.1):
    """Per-sample confidence-head loss for one expert."""
    s, b = nc.as_tensor(s), nc.as_tensor(b)
    if variant == "bce":
        return _bce(s, b)
    if variant == "focal":
        pos = nc.mul(nc.mul(b, nc.power(nc.sub(1.0, s), focal_g)), nc.log(s))
        neg = nc.mul(nc.mul(nc.sub(1.0, b), nc.power(s, focal_g)), nc.log(nc.sub(1.0, s)))
        return nc.mul(nc.add(pos, neg), -1.0)
    if variant == "entropy":
        if probs is not None:
            s = nc.mul(nc.add(s, classifier_confidence(probs)), 0.5)
        return nc.add(_bce(s, b), nc.mul(_binary_entropy(s), entropy_eta))
    if variant == "margin":
        signed = nc.mul(nc.sub(nc.mul(b, 2.0), 1.0), nc.sub(nc.mul(s, 2.0), 1.0))
        return nc.relu(nc.sub(margin_m, signed))
    raise ConfigError(f"unknown ood_loss variant {variant!r}; expected one of {OOD_VARIANTS}")


def ood_loss(variant, s, b, probs=None, **params):
    """Batch-mean confidence-head loss for one expert (a scalar tensor)."""
    return nc.mean(ood_loss_terms(variant, s, b, probs, **params))


def ood_objective(variant, scores, targets, probs=None, sample_weights=None, **params):
    """Sum over experts of the batch-mean confidence loss.

    ``sample_weights`` (per sample, optional) rescales each sample's term
    before the batch mean; without it every sample counts once.
    """
    total = None
    for k, s in enumerate(scores):
        p = None if probs is None else probs[k]
        terms = ood_loss_terms(variant, s, targets[k], p, **params)
        if sample_weights is not None:
            terms = nc.mul(terms, np.asarray(sample_weights, dtype=np.float64))
        term = nc.mean(terms)
        total = term if total is None else nc.add(total, term)
    return total


def cls_loss(alpha, probs, labels, class_weights, masks=None):
    """Routing- and class-weighted cross-entropy, averaged over the batch.

    Expert k contributes only for samples whose label lies in its class
    group (``masks[k]``); the divisor is always the full batch size.
    """
    labels = np.asarray(labels, dtype=np.int64)
    w = np.asarray(class_weights, dtype=np.float64)[labels]
    total = None
    for k, (a, p) in enumerate(zip(alpha, probs)):
        coef = w if masks is None else w * np.asarray(masks[k], dtype=np.float64)
        term = nc.mul(nc.mul(nc.as_tensor(a), coef), nc.cross_entropy(p, labels))
        total = term if total is None else nc.add(total, term)
    return nc.mean(total)


def total_loss(cls, ood, lambda_ood=1.0):
    if ood is None or lambda_ood == 0:
        return nc.as_tensor(cls)
    return nc.add(cls, nc.mul(ood, lambda_ood))
