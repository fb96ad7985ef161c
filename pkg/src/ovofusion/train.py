"""Training, evaluation and the multi-seed / significance-testing protocol."""

from __future__ import annotations

import itertools
import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy import stats
from sklearn.metrics import accuracy_score, f1_score

from . import autograd as ag
from .fusion import FusionConfig, FusionModel
from .flops import FlopCounter, delta_flops
from .simdata import SimDataset

log = logging.getLogger(__name__)

DEFAULT_GRID = {
    "learning_rate": (1e-2, 1e-3, 1e-4),
    "batch_size": (16, 32),
    "heads": (1, 2, 4),
}


class NonFiniteLossError(FloatingPointError):
    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite training loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be nonnegative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class RunResult:
    train_loss: List[float] = field(default_factory=list)
    val_accuracy: List[float] = field(default_factory=list)
    best_epoch: int = 0
    best_val_accuracy: float = float("nan")
    epochs_run: int = 0
    test_accuracy: float | None = None
    test_f1: float | None = None
    train_flops: int = 0
    wall_time_s: float = 0.0

    def metrics(self) -> Dict[str, float]:
        return {"accuracy": self.test_accuracy, "f1": self.test_f1}


# -- optimisation --------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)


def adam_step(params, grads, state: AdamState, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, applied to ``params[i].value`` in place."""
    params, grads = list(params), list(grads)
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p.value) for p in params]
        state.v = [np.zeros_like(p.value) for p in params]
    if len(state.m) != len(params):
        raise ValueError("optimizer state does not match parameters")
    state.step += 1
    t = state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.value.shape or m.shape != p.value.shape:
            raise ValueError(f"shape mismatch for {getattr(p, 'name', '?')}: {g.shape} vs {p.value.shape}")
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)


# -- evaluation ----------------------------------------------------------------


def evaluate_predictions(y_true, y_pred, classes: int = 2) -> Tuple[float, float]:
    """Accuracy and macro-F1; a class that is never predicted scores F1 = 0."""
    y_true = np.asarray(y_true)
    if y_true.size == 0:
        raise ValueError("cannot evaluate on an empty set")
    acc = accuracy_score(y_true, y_pred)
    f1 = f1_score(y_true, y_pred, labels=list(range(classes)), average="macro", zero_division=0)
    return float(acc), float(f1)


def evaluate(model: FusionModel, data: SimDataset) -> Tuple[float, float]:
    return evaluate_predictions(data.y, model.predict(data.X), model.config.classes)


def _accuracy(model: FusionModel, data: SimDataset) -> float:
    return float(np.mean(model.predict(data.X) == data.y))


# -- fitting -------------------------------------------------------------------


def fit(model: FusionModel, train: SimDataset, val: SimDataset, cfg: TrainConfig,
        test: SimDataset | None = None) -> RunResult:
    """Mini-batch Adam with early stopping on validation accuracy.

    Training stops once ``cfg.patience`` epochs pass without a strict
    improvement; the best-epoch weights are restored before returning.
    """
    if len(train) == 0 or len(val) == 0:
        raise ValueError("train and validation sets must be nonempty")
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    state = AdamState()
    counter = FlopCounter()
    result = RunResult()
    best_acc = -math.inf
    best_state = model.state_dict()
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train))
        losses = []
        for b, lo in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[lo:lo + cfg.batch_size]
            loss = model.loss(train.X[idx], train.y[idx], counter)
            value = float(loss.value)
            if not math.isfinite(value):
                raise NonFiniteLossError(epoch, b)
            ag.backward(loss)
            adam_step(params, [p.grad for p in params], state, cfg.learning_rate)
            losses.append(value * len(idx))
        result.train_loss.append(sum(losses) / len(train))
        acc = _accuracy(model, val)
        result.val_accuracy.append(acc)
        result.epochs_run = epoch
        if acc > best_acc:
            best_acc, best_state, result.best_epoch = acc, model.state_dict(), epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_state_dict(best_state)
    if result.epochs_run == 0:
        best_acc = _accuracy(model, val)
    result.best_val_accuracy = best_acc
    result.train_flops = counter.total
    if test is not None:
        result.test_accuracy, result.test_f1 = evaluate(model, test)
    result.wall_time_s = time.perf_counter() - start
    log.debug("fit done: %d epochs, best val %.4f at epoch %d", result.epochs_run, best_acc, result.best_epoch)
    return result


# -- protocol ------------------------------------------------------------------


def mean_std(values: Sequence[float]) -> Tuple[float, float]:
    """Sample mean and sample (ddof=1) standard deviation; std is 0 for one value."""
    a = np.asarray(values, dtype=np.float64)
    if a.size == 0:
        raise ValueError("no values to aggregate")
    if a.size == 1 or np.ptp(a) == 0:
        # exact zero; the two-pass formula can leave rounding residue
        return float(a.mean()), 0.0
    return float(a.mean()), float(a.std(ddof=1))


def format_mean_std(mean: float, std: float, scale: float = 100.0, digits: int = 1) -> str:
    return f"{mean * scale:.{digits}f} ± {std * scale:.{digits}f}"


@dataclass
class SeedRun:
    seed: int
    model: FusionModel
    result: RunResult


def run_seed(config: FusionConfig, splits, cfg: TrainConfig, seed: int) -> SeedRun:
    train, val, test = splits
    model = FusionModel.from_seed(config, seed)
    return SeedRun(seed, model, fit(model, train, val, replace(cfg, seed=seed), test))


def aggregate(runs: Sequence[SeedRun]) -> Dict[str, Dict[str, float]]:
    runs = sorted(runs, key=lambda r: r.seed)
    out = {}
    for metric in ("accuracy", "f1"):
        mean, std = mean_std([r.result.metrics()[metric] for r in runs])
        out[metric] = {"mean": mean, "std": std}
    return out


def multi_seed(config: FusionConfig, splits, cfg: TrainConfig, seeds: Sequence[int]):
    """Independent runs per seed; returns ``(runs, {metric: {mean, std}})``."""
    if len(seeds) == 0:
        raise ValueError("need at least one seed")
    runs = [run_seed(config, splits, cfg, s) for s in seeds]
    return runs, aggregate(runs)


def t_test(group_a: Sequence[float], group_b: Sequence[float]) -> Tuple[float, float]:
    """Two-sided Welch t-test; two constant groups with equal means give ``(0, 1)``."""
    a = np.asarray(group_a, dtype=np.float64)
    b = np.asarray(group_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("each group needs at least two values")
    if np.ptp(a) == 0 and np.ptp(b) == 0:
        if a[0] == b[0]:
            return 0.0, 1.0
        return math.copysign(math.inf, a[0] - b[0]), 0.0
    with warnings.catch_warnings():
        # near-constant groups trigger a precision warning; the statistic is still right
        warnings.simplefilter("ignore", RuntimeWarning)
        res = stats.ttest_ind(a, b, equal_var=False)
    return float(res.statistic), float(res.pvalue)


@dataclass
class GridResult:
    best: TrainConfig
    heads: int
    rows: List[Dict]


def grid_search(config: FusionConfig, splits, grid: Dict[str, Sequence] | None = None,
                max_epochs: int = 200, patience: int = 5, seed: int = 0) -> GridResult:
    """Train one model per grid point and keep the best by validation accuracy.

    Ties go to the lower integration ΔFLOPs, then to the lower learning rate.
    """
    grid = {**DEFAULT_GRID, **(grid or {})}
    points = list(itertools.product(grid["learning_rate"], grid["batch_size"], grid["heads"]))
    if not points:
        raise ValueError("empty hyperparameter grid")
    train, val, _ = splits
    rows = []
    for lr, batch, heads in points:
        cfg_h = replace(config, h=heads)
        cfg = TrainConfig(learning_rate=lr, batch_size=batch, max_epochs=max_epochs, patience=patience, seed=seed)
        model = FusionModel.from_seed(cfg_h, seed)
        res = fit(model, train, val, cfg)
        dflops = delta_flops(cfg_h.scheme, cfg_h.k, cfg_h.n, cfg_h.d, heads)
        rows.append({"learning_rate": lr, "batch_size": batch, "heads": heads,
                     "val_accuracy": res.best_val_accuracy, "delta_flops": dflops,
                     "epochs_run": res.epochs_run})
        log.info("grid lr=%g batch=%d h=%d -> val %.4f (%d epochs)", lr, batch, heads,
                 res.best_val_accuracy, res.epochs_run)
    best = min(rows, key=lambda r: (-r["val_accuracy"], r["delta_flops"], r["learning_rate"]))
    cfg = TrainConfig(learning_rate=best["learning_rate"], batch_size=best["batch_size"],
                      max_epochs=max_epochs, patience=patience, seed=seed)
    return GridResult(cfg, best["heads"], rows)


def config_dict(cfg: TrainConfig) -> Dict:
    return asdict(cfg)
