"""Joint training loop: difficulty refresh, routed expert loss, SGD."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import numcore as nc
from .config import RunConfig, dump_config
from .datagen import ShotSplit, generate, make_spec
from .difficulty import ClassStats, append_stats_csv, blend, difficulty_score, measure, update_weights
from .losses import cls_loss, fuse, ood_objective, route, total_loss
from .moe import NUM_EXPERTS, ExpertBank, group_targets, init_params, partition, save_checkpoint

log = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "loss_cls", "loss_ood", "loss_total", "acc_all", "acc_many", "acc_med", "acc_few"]


class TrainingAborted(RuntimeError):
    def __init__(self, diagnostics):
        self.diagnostics = diagnostics
        super().__init__(f"non-finite loss: {diagnostics}")


@dataclass
class OptimizerState:
    lr0: float
    momentum: float
    weight_decay: float
    total_epochs: int
    velocity: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr0=0.1, momentum=0.9, weight_decay=5e-4, total_epochs=1):
        return cls(lr0, momentum, weight_decay, total_epochs, [np.zeros(p.shape) for p in params])

    def lr(self, epoch):
        return max(0.0, self.lr0 * (1.0 - epoch / self.total_epochs))


def sgd_step(params, grads, opt, epoch):
    """``v <- mu*v + g + wd*p``; ``p <- p - lr*v``. Missing gradients count as zero."""
    lr = opt.lr(epoch)
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = 0.0
        v = opt.momentum * opt.velocity[i] + g + opt.weight_decay * p.data
        opt.velocity[i] = v
        p.data = np.asarray(p.data - lr * v)  # keep 0-d parameters as arrays
    return params


@dataclass
class EpochReport:
    epoch: int
    loss_cls: float
    loss_ood: float
    loss_total: float
    acc_all: float
    acc_many: float
    acc_med: float
    acc_few: float
    per_class: np.ndarray
    routing: dict

    def metrics_row(self):
        return [self.epoch] + [repr(float(getattr(self, k))) for k in METRICS_HEADER[1:]]


def _detached(bank):
    params = {k: nc.Tensor(v.data) for k, v in bank.params.items()}
    return ExpertBank(params, bank.dim, bank.hidden, bank.num_classes)


def predict(bank, x, enable_moe=True):
    """Fused class distribution ``[B, C]`` and routing weights ``[K, B]`` (no graph)."""
    frozen = _detached(bank)
    experts = range(1, NUM_EXPERTS + 1) if enable_moe else (1,)
    logits, scores = frozen.forward(np.asarray(x), experts)
    probs = [nc.softmax(l) for l in logits]
    if not enable_moe:
        return probs[0].data, np.ones((1, len(x)))
    alpha = route(scores)
    fused = fuse(alpha, probs)
    return fused.data, np.stack([a.data for a in alpha])


def evaluate(bank, dataset, spec, enable_moe=True):
    """Accuracy on a balanced split: overall, per shot group, per class, routing means."""
    fused, alpha = predict(bank, dataset.features, enable_moe)
    return accuracy_report(fused, alpha, dataset.labels, spec)


def accuracy_report(fused, alpha, labels, spec):
    labels = np.asarray(labels)
    pred = np.argmax(fused, axis=1)  # ties -> lowest index
    correct = (pred == labels).astype(np.float64)
    n_classes = spec.num_classes
    per_count = np.bincount(labels, minlength=n_classes)
    per_class = np.bincount(labels, weights=correct, minlength=n_classes) / np.maximum(per_count, 1)
    present = per_count > 0
    out = {"acc_all": float(correct.mean()), "per_class": per_class}
    routing = {}
    for name, group in ShotSplit.from_counts(spec.counts).groups().items():
        cls_idx = [c for c in group if present[c]]
        out[f"acc_{name}"] = float(per_class[cls_idx].mean()) if cls_idx else math.nan
        in_group = np.isin(labels, group)
        routing[name] = alpha[:, in_group].mean(axis=1).tolist() if in_group.any() else [math.nan] * len(alpha)
    out["routing"] = routing
    return out


@dataclass
class TrainResult:
    config: RunConfig
    bank: ExpertBank
    stats: ClassStats
    reports: list

    @property
    def final(self):
        return self.reports[-1]


def loss_class_weights(stats, config):
    """Blended class weights rescaled to sum to the number of classes."""
    return stats.blended * config.num_classes


def batch_losses(bank, xb, yb, class_weights, experts, config):
    """Forward one minibatch and return ``(cls, ood, total)`` tensors."""
    if config.enable_moe:
        logits, scores = bank.forward(xb)
        probs = [nc.softmax(l) for l in logits]
        alpha = route(scores)
        masks = group_targets(experts, yb)
        cls = cls_loss(alpha, probs, yb, class_weights, masks)
        ood = ood_objective(
            config.ood_loss, scores, masks, probs,
            sample_weights=np.asarray(class_weights)[yb] if config.ood_class_weighted else None,
            focal_g=config.focal_g, margin_m=config.margin_m, entropy_eta=config.entropy_eta,
        )
    else:
        logits, _ = bank.forward(xb, experts=(1,))
        probs = [nc.softmax(logits[0])]
        cls = cls_loss([np.ones(len(yb))], probs, yb, class_weights)
        ood = None
    return cls, ood, total_loss(cls, ood, config.lambda_ood)


def _refresh_weights(bank, probe, stats, config):
    fused, _ = predict(bank, probe.features, config.enable_moe)
    # log-probabilities act as logits whose softmax is the fused distribution
    stats = measure(np.log(np.maximum(fused, 1e-300)), probe.labels, stats, config.ema_beta)
    d = difficulty_score(stats, config.lam)
    stats = update_weights(stats, d, config.gamma)
    alpha = config.alpha if config.enable_difficulty else 0.0
    return replace(stats, blended=blend(stats.weights, stats.quantity, alpha))


def train(config, out_dir=None, bank=None):
    """Train one run; write the run directory when ``out_dir`` is given."""
    config = config.validate()
    spec = make_spec(config.num_classes, config.imbalance_ratio, config.max_count, config.tau_m, config.tau_t)
    train_set, probe, test = generate(
        spec, config.dim, config.seed, config.probe_per_class, config.test_per_class,
        overlap=config.overlap, hard_classes=config.hard_classes, separation=config.separation,
    )
    if bank is None:
        bank = init_params(config.seed, config.dim, config.hidden, config.num_classes)
    experts = partition(spec)
    stats = ClassStats.initial(spec.counts, config.alpha if config.enable_difficulty else 0.0)
    params = bank.parameters()
    opt = OptimizerState.for_params(params, config.lr, config.momentum, config.weight_decay, config.epochs)
    rng = np.random.default_rng([config.seed, 0x5EED])

    out = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        dump_config(config, out / "config.json")
        for name in ("metrics.csv", "class_stats.csv"):
            (out / name).unlink(missing_ok=True)
        with open(out / "metrics.csv", "w", encoding="utf-8", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(METRICS_HEADER)

    reports = []
    n = len(train_set)
    for epoch in range(config.epochs):
        stats = _refresh_weights(bank, probe, stats, config)
        if out is not None:
            append_stats_csv(out / "class_stats.csv", stats)

        order = rng.permutation(n)
        sums = np.zeros(3)
        n_batches = 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            xb, yb = train_set.features[idx], train_set.labels[idx]
            bank.zero_grad()
            cls, ood, total = batch_losses(bank, xb, yb, loss_class_weights(stats, config), experts, config)
            values = (cls.item(), 0.0 if ood is None else ood.item(), total.item())
            if not all(math.isfinite(v) for v in values):
                diag = {"epoch": epoch, "batch": b, "loss_cls": values[0], "loss_ood": values[1],
                        "loss_total": values[2]}
                if out is not None:
                    with open(out / "diagnostics.json", "w", encoding="utf-8") as fh:
                        json.dump(diag, fh, indent=2)
                raise TrainingAborted(diag)
            total.backward()
            sgd_step(params, [p.grad for p in params], opt, epoch)
            sums += values
            n_batches += 1

        acc = evaluate(bank, test, spec, config.enable_moe)
        loss_cls, loss_ood, loss_tot = sums / n_batches
        report = EpochReport(epoch, loss_cls, loss_ood, loss_tot, acc["acc_all"], acc["acc_many"],
                             acc["acc_med"], acc["acc_few"], acc["per_class"], acc["routing"])
        reports.append(report)
        log.info("epoch %d loss %.4f acc %.3f (many %.3f med %.3f few %.3f)", epoch, loss_tot,
                 report.acc_all, report.acc_many, report.acc_med, report.acc_few)
        if out is not None:
            with open(out / "metrics.csv", "a", encoding="utf-8", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(report.metrics_row())

    if out is not None:
        save_checkpoint(bank, config.to_dict(), out / "model.json")
    return TrainResult(config, bank, stats, reports)
