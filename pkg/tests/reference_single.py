"""Plain-numpy weighted cross-entropy MLP trainer with hand-written backprop.

Shares nothing with the package's autodiff path: it exists to cross-check
the trainer when routing and difficulty weighting are switched off. Only
the data, the initial weights and the shuffle stream are taken as inputs.
"""

import numpy as np

from dqroute import train
from dqroute.datagen import generate, make_spec
from dqroute.moe import init_params


def train_reference(features, labels, counts, params, *, epochs, batch_size, lr0, momentum, weight_decay,
                    shuffle_seed):
    counts = np.asarray(counts, dtype=np.float64)
    C = len(counts)
    inv = 1.0 / counts
    class_w = C * inv / inv.sum()

    names = ["w1", "b1", "w2", "b2", "wc", "bc"]
    p = {k: np.array(v, dtype=np.float64, copy=True) for k, v in zip(names, params)}
    vel = {k: np.zeros_like(v) for k, v in p.items()}
    rng = np.random.default_rng(shuffle_seed)
    n = len(labels)
    epoch_losses = []
    for epoch in range(epochs):
        lr = lr0 * (1.0 - epoch / epochs)
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            x, y = features[idx], labels[idx]
            B = len(y)
            z1 = x @ p["w1"] + p["b1"]
            h1 = np.maximum(z1, 0)
            z2 = h1 @ p["w2"] + p["b2"]
            h2 = np.maximum(z2, 0)
            logits = h2 @ p["wc"] + p["bc"]
            shifted = logits - logits.max(axis=1, keepdims=True)
            prob = np.exp(shifted)
            prob /= prob.sum(axis=1, keepdims=True)
            picked = prob[np.arange(B), y]
            w = class_w[y]
            batch_losses.append(float(np.mean(w * -np.log(np.maximum(picked, 1e-12)))))

            onehot = np.zeros_like(prob)
            onehot[np.arange(B), y] = 1.0
            dlogits = (prob - onehot) * (w / B)[:, None]
            g = {"wc": h2.T @ dlogits, "bc": dlogits.sum(axis=0)}
            dz2 = (dlogits @ p["wc"].T) * (z2 > 0)
            g["w2"] = h1.T @ dz2
            g["b2"] = dz2.sum(axis=0)
            dz1 = (dz2 @ p["w2"].T) * (z1 > 0)
            g["w1"] = x.T @ dz1
            g["b1"] = dz1.sum(axis=0)
            for k in names:
                vel[k] = momentum * vel[k] + g[k] + weight_decay * p[k]
                p[k] = p[k] - lr * vel[k]
        epoch_losses.append(float(np.mean(batch_losses)))
    return epoch_losses


def reduction_check(config):
    """Per-epoch losses of the system vs the hand-written reference."""
    spec = make_spec(config.num_classes, config.imbalance_ratio, config.max_count, config.tau_m, config.tau_t)
    train_set, _, _ = generate(spec, config.dim, config.seed, config.probe_per_class, config.test_per_class,
                               overlap=config.overlap, hard_classes=config.hard_classes,
                               separation=config.separation)
    init = init_params(config.seed, config.dim, config.hidden, config.num_classes)
    params = [init.params[k].data for k in ("trunk.w1", "trunk.b1", "trunk.w2", "trunk.b2",
                                            "expert1.cls.w", "expert1.cls.b")]
    expected = train_reference(train_set.features, train_set.labels, spec.counts, params,
                               epochs=config.epochs, batch_size=config.batch_size, lr0=config.lr,
                               momentum=config.momentum, weight_decay=config.weight_decay,
                               shuffle_seed=[config.seed, 0x5EED])
    got = [r.loss_total for r in train(config).reports]
    return got, expected
