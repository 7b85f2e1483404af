import json

import numpy as np
import pytest

from dqroute import RunConfig, train
from dqroute.datagen import generate, make_spec
from dqroute.moe import init_params
from dqroute.trainer import (
    OptimizerState,
    TrainingAborted,
    accuracy_report,
    evaluate,
    sgd_step,
)
from dqroute.numcore import Tensor

from reference_single import reduction_check

SMALL = dict(num_classes=5, imbalance_ratio=10, max_count=60, dim=6, hidden=12, probe_per_class=5,
             test_per_class=10, tau_m=40, tau_t=10, hard_classes=(0,), epochs=3, batch_size=16)


class TestSGD:
    def test_plain_gradient_step(self):
        p = Tensor([1.0, -2.0])
        opt = OptimizerState.for_params([p], lr0=0.5, momentum=0.0, weight_decay=0.0, total_epochs=10)
        sgd_step([p], [np.array([0.2, 0.4])], opt, 0)
        np.testing.assert_allclose(p.data, [0.9, -2.2], rtol=0, atol=1e-15)

    def test_momentum_step(self):
        p = Tensor([1.0])
        opt = OptimizerState.for_params([p], lr0=0.1, momentum=0.9, weight_decay=0.0, total_epochs=5)
        sgd_step([p], [np.array([1.0])], opt, 0)
        assert opt.velocity[0][0] == 1.0
        assert p.data[0] == pytest.approx(0.9, abs=1e-15)
        sgd_step([p], [np.array([1.0])], opt, 0)
        assert opt.velocity[0][0] == pytest.approx(1.9)
        assert p.data[0] == pytest.approx(0.9 - 0.19)

    def test_pure_decay_shrinks(self):
        p = Tensor([3.0, -3.0])
        opt = OptimizerState.for_params([p], lr0=0.1, momentum=0.9, weight_decay=0.01, total_epochs=5)
        for _ in range(3):
            before = np.abs(p.data).copy()
            sgd_step([p], [np.zeros(2)], opt, 0)
            assert np.all(np.abs(p.data) < before)

    def test_scalar_parameter_stays_array(self):
        p = Tensor(np.zeros(()))
        opt = OptimizerState.for_params([p], lr0=0.1, total_epochs=5)
        sgd_step([p], [np.array(1.0)], opt, 0)
        assert isinstance(p.data, np.ndarray) and p.data.shape == ()

    def test_linear_schedule(self):
        opt = OptimizerState.for_params([], lr0=0.1, total_epochs=4)
        lrs = [opt.lr(e) for e in range(5)]
        assert lrs == pytest.approx([0.1, 0.075, 0.05, 0.025, 0.0])
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))


class TestEvaluate:
    def test_uniform_predictions_pick_class_zero(self):
        spec = make_spec(4, 4, 40)
        bank = init_params(0, 3, 5, 4)
        for name, t in bank.named_parameters():
            if name.startswith("expert"):
                t.data = np.zeros(t.shape)
        _, _, test = generate(spec, 3, 0, 2, 5)
        out = evaluate(bank, test, spec)
        assert out["acc_all"] == 0.25
        np.testing.assert_array_equal(out["per_class"], [1, 0, 0, 0])

    def test_hand_counted(self):
        spec = make_spec(2, 1, 150)
        fused = np.array([[0.9, 0.1], [0.4, 0.6], [0.5, 0.5], [0.2, 0.8], [0.3, 0.7]])
        labels = np.array([0, 0, 1, 1, 1])
        out = accuracy_report(fused, np.ones((1, 5)), labels, spec)
        # predictions: 0, 1, 0 (tie), 1, 1
        assert out["acc_all"] == pytest.approx(3 / 5)
        np.testing.assert_allclose(out["per_class"], [0.5, 2 / 3])
        assert out["acc_many"] == pytest.approx((0.5 + 2 / 3) / 2)

    def test_groups_recombine(self):
        spec = make_spec(20, 100, 500)
        rng = np.random.default_rng(0)
        labels = np.repeat(np.arange(20), 10)
        fused = rng.dirichlet(np.ones(20), len(labels))
        out = accuracy_report(fused, np.ones((1, len(labels))), labels, spec)
        split = spec.shot_split
        recombined = (len(split.many) * out["acc_many"] + len(split.medium) * out["acc_med"]
                      + len(split.few) * out["acc_few"]) / 20
        assert recombined == pytest.approx(out["acc_all"], abs=1e-12)


class TestTrain:
    def test_zero_lr_keeps_parameters(self):
        cfg = RunConfig(**{**SMALL, "lr": 0.0})
        before = init_params(cfg.seed, cfg.dim, cfg.hidden, cfg.num_classes)
        result = train(cfg)
        for (_, a), (_, b) in zip(before.named_parameters(), result.bank.named_parameters()):
            assert a.data.tobytes() == b.data.tobytes()

    @pytest.mark.parametrize("moe", [True, False])
    def test_single_batch_overfit(self, moe):
        cfg = RunConfig(num_classes=3, imbalance_ratio=1, max_count=10, dim=8, hidden=32, overlap=0.0,
                        hard_classes=(), tau_m=100, tau_t=20, epochs=200, batch_size=64, enable_moe=moe)
        with pytest.warns(UserWarning):
            result = train(cfg)
        spec = make_spec(3, 1, 10)
        train_set, _, _ = generate(spec, 8, cfg.seed, 1, 1, separation=cfg.separation)
        assert evaluate(result.bank, train_set, spec, moe)["acc_all"] == 1.0

    def test_deterministic_reports(self):
        a = train(RunConfig(**SMALL)).reports
        b = train(RunConfig(**SMALL)).reports
        assert [r.metrics_row() for r in a] == [r.metrics_row() for r in b]

    def test_linear_separable_data(self):
        cfg = RunConfig(num_classes=4, imbalance_ratio=1, max_count=50, dim=8, hidden=16, overlap=0.0,
                        hard_classes=(), separation=6.0, tau_m=10, tau_t=5, epochs=20, batch_size=32,
                        test_per_class=100, enable_moe=False, enable_difficulty=False)
        with pytest.warns(UserWarning):
            result = train(cfg)
        assert result.final.acc_all > 0.95

    def test_run_directory(self, tmp_path):
        cfg = RunConfig(**SMALL)
        train(cfg, tmp_path)
        assert sorted(p.name for p in tmp_path.iterdir()) == [
            "class_stats.csv", "config.json", "metrics.csv", "model.json"]
        metrics = (tmp_path / "metrics.csv").read_text().splitlines()
        assert metrics[0] == "epoch,loss_cls,loss_ood,loss_total,acc_all,acc_many,acc_med,acc_few"
        assert len(metrics) == 1 + cfg.epochs
        stats = (tmp_path / "class_stats.csv").read_text().splitlines()[1:]
        # one refresh per epoch, before training on it
        assert [int(r.split(",")[0]) for r in stats] == [e for e in range(1, 4) for _ in range(5)]
        assert json.loads((tmp_path / "config.json").read_text()) == cfg.to_dict()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_loss_aborts(self, tmp_path):
        cfg = RunConfig(**{**SMALL, "lr": 1e300, "momentum": 0.0})
        with pytest.raises(TrainingAborted) as info:
            train(cfg, tmp_path)
        diag = json.loads((tmp_path / "diagnostics.json").read_text())
        assert set(diag) == {"epoch", "batch", "loss_cls", "loss_ood", "loss_total"}
        assert {k: diag[k] for k in ("epoch", "batch")} == {k: info.value.diagnostics[k] for k in ("epoch", "batch")}
        assert not np.isfinite(diag["loss_total"])

    def test_losses_finite(self):
        for r in train(RunConfig(**SMALL)).reports:
            assert np.isfinite([r.loss_cls, r.loss_ood, r.loss_total]).all()


def test_reduction_to_weighted_ce_small():
    cfg = RunConfig(**{**SMALL, "enable_moe": False, "enable_difficulty": False})
    got, expected = reduction_check(cfg)
    np.testing.assert_allclose(got, expected, rtol=0, atol=1e-9)
