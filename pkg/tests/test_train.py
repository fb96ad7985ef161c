import math

import numpy as np
import pytest

from ovofusion.autograd import Parameter
from ovofusion.fusion import FusionConfig, FusionModel
from ovofusion.simdata import SimConfig, SimDataset, generate, split
from ovofusion.train import (AdamState, NonFiniteLossError, TrainConfig, adam_step, aggregate, evaluate_predictions,
                             fit, format_mean_std, grid_search, mean_std, multi_seed, run_seed, t_test)


@pytest.fixture(scope="module")
def small_splits():
    return split(generate(SimConfig(k=3, vec_len=5, samples=200, seed=1)))


def small_model(scheme="ovo", seed=0, h=1):
    return FusionModel.from_seed(FusionConfig(scheme=scheme, k=3, raw_dim=5, n=2, d=4, h=h), seed)


class ConstantModel:
    """Stands in for a model whose predictions never change."""

    def __init__(self, inner):
        self.inner = inner
        self.config = inner.config

    def __getattr__(self, name):
        return getattr(self.inner, name)

    def predict(self, raw):
        return np.zeros(len(raw), dtype=int)


class TestAdam:
    def test_first_step(self):
        p = Parameter(np.zeros((2, 3)), "p")
        adam_step([p], [np.ones((2, 3))], AdamState(), lr=0.01)
        np.testing.assert_allclose(p.value, -0.01 / (1 + 1e-8), rtol=1e-12)

    def test_zero_gradients(self, rng):
        v = rng.standard_normal((3, 3))
        p = Parameter(v, "p")
        state = AdamState()
        for _ in range(5):
            adam_step([p], [np.zeros((3, 3))], state, lr=0.1)
        np.testing.assert_array_equal(p.value, v)

    def test_reference_trajectory(self, rng):
        grads = [rng.standard_normal(4) for _ in range(6)]
        p = Parameter(np.ones(4), "p")
        state = AdamState()
        theta, m, v = np.ones(4), np.zeros(4), np.zeros(4)
        for t, g in enumerate(grads, start=1):
            adam_step([p], [g], state, lr=0.05)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g ** 2
            theta = theta - 0.05 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        np.testing.assert_allclose(p.value, theta, rtol=1e-13)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step([Parameter(np.zeros(2), "p")], [np.zeros(3)], AdamState(), lr=0.1)


class TestEvaluate:
    def test_perfect(self):
        assert evaluate_predictions([0, 1, 1, 0], [0, 1, 1, 0]) == (1.0, 1.0)

    def test_constant_predictor(self):
        acc, f1 = evaluate_predictions([0, 1] * 50, [0] * 100)
        assert acc == 0.5
        assert abs(f1 - (2 * 0.5 * 1 / 1.5 + 0) / 2) < 1e-15
        assert abs(f1 - 1 / 3) < 1e-15

    def test_missing_class_scores_zero(self):
        _, f1 = evaluate_predictions([0, 1, 2], [0, 1, 1], classes=3)
        assert abs(f1 - (1 + 2 / 3 + 0) / 3) < 1e-15

    def test_empty(self):
        with pytest.raises(ValueError):
            evaluate_predictions([], [])


class TestFit:
    def test_constant_validation_stops_at_two(self, small_splits):
        train, val, _ = small_splits
        res = fit(ConstantModel(small_model()), train, val, TrainConfig(patience=1, max_epochs=50))
        assert res.epochs_run == 2 and res.best_epoch == 1

    def test_zero_epochs(self, small_splits):
        train, val, _ = small_splits
        m = small_model()
        before = m.state_dict()
        res = fit(m, train, val, TrainConfig(max_epochs=0))
        assert res.epochs_run == 0 and res.train_loss == []
        for name, value in m.state_dict().items():
            np.testing.assert_array_equal(value, before[name])

    def test_restores_best(self, small_splits):
        train, val, test = small_splits
        m = small_model()
        res = fit(m, train, val, TrainConfig(learning_rate=1e-2, batch_size=16, max_epochs=30, patience=3), test)
        acc = float(np.mean(m.predict(val.X) == val.y))
        assert acc == res.best_val_accuracy == max(res.val_accuracy)
        assert res.epochs_run <= 30
        stale = res.epochs_run - res.best_epoch
        assert stale == 3 or res.epochs_run == 30
        assert res.train_flops > 0 and res.test_accuracy is not None

    def test_deterministic(self, small_splits):
        train, val, test = small_splits
        cfg = TrainConfig(learning_rate=1e-2, max_epochs=4, patience=10, seed=3)
        a = fit(small_model(seed=2), train, val, cfg, test)
        b = fit(small_model(seed=2), train, val, cfg, test)
        assert a.train_loss == b.train_loss and a.val_accuracy == b.val_accuracy
        assert (a.test_accuracy, a.test_f1, a.train_flops) == (b.test_accuracy, b.test_f1, b.train_flops)

    @pytest.mark.parametrize("scheme", ["concat", "early-self", "cross-pairwise", "ovo"])
    def test_loss_decreases(self, small_splits, scheme):
        train, val, _ = small_splits
        res = fit(small_model(scheme, h=2), train, val, TrainConfig(learning_rate=1e-2, max_epochs=3, patience=5))
        assert res.train_loss[-1] < res.train_loss[0]

    def test_non_finite_loss(self, small_splits):
        train, val, _ = small_splits
        m = small_model()
        m.params["classifier.weight"].value[...] = np.nan
        with pytest.raises(NonFiniteLossError, match="epoch 1, batch 0"):
            fit(m, train, val, TrainConfig(max_epochs=2))

    def test_empty(self, small_splits):
        train, _, _ = small_splits
        empty = SimDataset(np.zeros((0, 3, 5)), np.zeros(0, dtype=int))
        with pytest.raises(ValueError):
            fit(small_model(), train, empty, TrainConfig())

    @pytest.mark.parametrize("kw", [dict(patience=0), dict(batch_size=0), dict(max_epochs=-1),
                                    dict(learning_rate=0.0)])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestProtocol:
    def test_mean_std(self):
        mean, std = mean_std([0.8, 0.9, 1.0])
        assert abs(mean - 0.9) < 1e-15 and abs(std - 0.1) < 1e-12
        assert mean_std([0.7]) == (0.7, 0.0)
        assert format_mean_std(0.836, 0.011) == "83.6 ± 1.1"

    def test_repeated_seed_has_zero_std(self, small_splits):
        cfg = TrainConfig(learning_rate=1e-2, max_epochs=2)
        config = FusionConfig(scheme="ovo", k=3, raw_dim=5, n=2, d=4)
        _, summary = multi_seed(config, small_splits, cfg, [4, 4, 4])
        assert summary["accuracy"]["std"] == 0.0 and summary["f1"]["std"] == 0.0

    def test_seed_order_irrelevant(self, small_splits):
        cfg = TrainConfig(learning_rate=1e-2, max_epochs=2)
        config = FusionConfig(scheme="concat", k=3, raw_dim=5, n=2, d=4)
        runs = [run_seed(config, small_splits, cfg, s) for s in (0, 1, 2)]
        assert aggregate(runs) == aggregate(runs[::-1])
        with pytest.raises(ValueError):
            multi_seed(config, small_splits, cfg, [])


class TestTTest:
    def test_identical_groups(self):
        assert t_test([0.5] * 10, [0.5] * 10) == (0.0, 1.0)
        t, p = t_test([0.1, 0.2, 0.3], [0.1, 0.2, 0.3])
        assert t == 0.0 and abs(p - 1.0) < 1e-12

    def test_separated(self, rng):
        a = 0.8 + 1e-3 * rng.standard_normal(10)
        b = 0.6 + 1e-3 * rng.standard_normal(10)
        assert t_test(a, b)[1] < 0.01
        t, p = t_test([0.8] * 10, [0.6] * 10)
        assert math.isinf(t) and t > 0 and p == 0.0

    def test_tabulated_critical_value(self):
        # equal sizes and variances give 18 Welch dof; scale the gap so |t| = 2.101
        base = np.array([-1.0, 1.0] * 5)
        gap = 2.101 * math.sqrt(2 * base.var(ddof=1) / 10)
        t, p = t_test(base + gap, base)
        assert abs(t - 2.101) < 1e-9
        assert abs(p - 0.05) < 1e-3

    def test_needs_two(self):
        with pytest.raises(ValueError):
            t_test([1.0], [1.0, 2.0])


class TestGrid:
    def test_singleton(self, small_splits):
        config = FusionConfig(scheme="ovo", k=3, raw_dim=5, n=2, d=4)
        res = grid_search(config, small_splits, {"learning_rate": (1e-2,), "batch_size": (16,), "heads": (2,)},
                          max_epochs=2)
        assert (res.best.learning_rate, res.best.batch_size, res.heads) == (1e-2, 16, 2)
        assert len(res.rows) == 1

    def test_deterministic_and_tie_break(self, small_splits):
        config = FusionConfig(scheme="ovo", k=3, raw_dim=5, n=2, d=4)
        grid = {"learning_rate": (1e-2, 1e-3), "batch_size": (32,), "heads": (1, 2)}
        a = grid_search(config, small_splits, grid, max_epochs=0)
        b = grid_search(config, small_splits, grid, max_epochs=0)
        assert a.best == b.best and a.heads == b.heads
        # without training every head count ties on accuracy per seed; cheaper ΔFLOPs then lower lr win
        rows = [r for r in a.rows if r["val_accuracy"] == max(x["val_accuracy"] for x in a.rows)]
        cheapest = min(rows, key=lambda r: (r["delta_flops"], r["learning_rate"]))
        assert (a.heads, a.best.learning_rate) == (cheapest["heads"], cheapest["learning_rate"])
        assert a.best.learning_rate == 1e-3
