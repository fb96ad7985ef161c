"""End-to-end acceptance checks; each prints one PASS/FAIL line.

Run directly (``python tests/test_acceptance.py``) or under pytest, where the
lines are also repeated in the terminal summary.
"""

import itertools
import json
import time

import numpy as np
import pytest

from ovofusion import attention as at
from ovofusion.bench import time_fuse
from ovofusion.cli import main
from ovofusion.flops import SCHEMES, analytic_flops, delta_flops
from ovofusion.fusion import FusionConfig, FusionModel, grad_check
from ovofusion.simdata import SimConfig, generate, split
from ovofusion.train import TrainConfig, evaluate, fit, grid_search

RESULTS = {}


def verdict(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[number] = line
    print(line)
    assert ok, line


def test_criterion_01_scaling_slopes(tmp_path):
    out = tmp_path / "bench.csv"
    start = time.perf_counter()
    code = main(["bench", "--k-list", "2,5,10,15,20", "--n", "4", "--d", "16", "--h", "2", "--out", str(out)])
    elapsed = time.perf_counter() - start
    slopes = json.loads((tmp_path / "bench.summary.json").read_text())["slopes"]
    checks = {
        "ovo": 0.9 <= slopes["ovo"] <= 1.1,
        "early-self": 1.8 <= slopes["early-self"] <= 2.05,
        "cross-pairwise": 1.7 <= slopes["cross-pairwise"] <= 2.05,
    }
    ok = code == 0 and all(checks.values()) and elapsed < 60
    detail = ", ".join(f"{s} {slopes[s]:.3f} ({'in' if c else 'outside'} window)" for s, c in checks.items())
    verdict(1, ok, f"{detail}; {elapsed:.1f}s")


def test_criterion_02_counter_equals_closed_form():
    mismatches, cells = [], 0
    for scheme in SCHEMES:
        for k, n, d, h in itertools.product((2, 3, 5), (1, 2, 4), (8, 16), (1, 2)):
            model = FusionModel.from_seed(FusionConfig(scheme=scheme, k=k, raw_dim=1, n=n, d=d, h=h), 0)
            measured = sum(model.integration_flops().values())
            cells += 1
            if measured != analytic_flops(scheme, k, n, d, h):
                mismatches.append((scheme, k, n, d, h))
    # 3 * 3 * 2 * 2 = 36 cells per scheme
    verdict(2, not mismatches and cells == 4 * 36, f"{cells} cells, {len(mismatches)} mismatches")


def test_criterion_03_two_modality_reduction():
    rng = np.random.default_rng(3)
    exact = 0
    for _ in range(100):
        n, d = rng.integers(1, 5), rng.integers(1, 17)
        m1, m2, w = rng.standard_normal((n, d)), rng.standard_normal((n, d)), rng.standard_normal((d, d))
        exact += np.array_equal(at.ovo_score(m1, [m2], w).value, m1 @ w @ m2.T)
    verdict(3, exact == 100, f"{exact}/100 bit-exact")


def test_criterion_04_permutation_invariance():
    rng = np.random.default_rng(4)
    worst, argmax_ok = 0.0, True
    for t in range(100):
        k = (3, 5, 8)[t % 3]
        n, d = rng.integers(1, 5), rng.integers(1, 17)
        ms = [rng.standard_normal((n, d)) for _ in range(k)]
        w = rng.standard_normal((d, d))
        others = ms[1:]
        shuffled = [others[j] for j in rng.permutation(len(others))]
        a, b = at.ovo_context(ms[0], others, w).value, at.ovo_context(ms[0], shuffled, w).value
        worst = max(worst, float(np.max(np.abs(a - b))))
        sa, sb = at.ovo_score(ms[0], others, w).value, at.ovo_score(ms[0], shuffled, w).value
        argmax_ok &= np.array_equal(np.argmax(sa, axis=1), np.argmax(sb, axis=1))
    verdict(4, worst < 1e-12 and argmax_ok, f"max |diff| {worst:.2e}, argmax invariant: {argmax_ok}")


def test_criterion_05_gradient_fidelity():
    rng = np.random.default_rng(5)
    raw = rng.standard_normal((4, 3, 4))
    labels = np.array([0, 1, 1, 0])
    errors = {}
    for scheme in SCHEMES:
        model = FusionModel.from_seed(FusionConfig(scheme=scheme, k=3, raw_dim=4, n=2, d=8, h=2), 0)
        errors[scheme] = grad_check(model, raw, labels)[0]
    detail = ", ".join(f"{s} {e:.1e}" for s, e in errors.items())
    verdict(5, all(e < 1e-4 for e in errors.values()), detail)


def test_criterion_06_cost_ordering():
    bad = []
    for n, d, h in [(1, 2, 1), (1, 8, 1), (2, 8, 2), (4, 16, 2), (4, 16, 4), (16, 64, 8), (32, 16, 2)]:
        for k in range(2, 65):
            ovo, cross, self_ = (delta_flops(s, k, n, d, h) for s in ("ovo", "cross-pairwise", "early-self"))
            if not ovo < cross <= self_:
                bad.append((k, n, d, h))
    verdict(6, not bad, f"{7 * 63} configurations, {len(bad)} violations")


def test_criterion_07_wall_clock():
    rng = np.random.default_rng(7)
    embeddings = rng.standard_normal((1, 20, 4, 16))
    times = {}
    for scheme in ("ovo", "cross-pairwise"):
        model = FusionModel.from_seed(FusionConfig(scheme=scheme, k=20, raw_dim=1, n=4, d=16, h=2), 0)
        times[scheme] = time_fuse(model, embeddings, repeats=15)
    ratio = times["cross-pairwise"] / times["ovo"]
    verdict(7, ratio >= 3.0, f"cross/ovo per-pass time ratio {ratio:.1f}x "
                             f"(ovo {times['ovo'] / 1e6:.2f} ms, cross {times['cross-pairwise'] / 1e6:.2f} ms)")


def test_criterion_08_simulation_integrity():
    data = generate(SimConfig())
    sums_ok = np.all(np.abs(data.base[data.y == 0].sum(axis=1) - 1.0) <= 1e-9)
    bound_ok = np.all(data.base[data.y == 1] < 0.15)
    parts = split(data)
    sizes = [len(p) for p in parts]
    balance = max(abs(int(np.sum(p.y == 0)) - int(np.sum(p.y == 1))) for p in parts)
    ok = bool(sums_ok and bound_ok and sizes == [1600, 200, 200] and balance <= 1)
    verdict(8, ok, f"class rules {bool(sums_ok and bound_ok)}, split {sizes}, max imbalance {balance}")


def _tree_bytes(root):
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            text = path.read_text()
            if path.name == "result.json":
                payload = json.loads(text)
                payload.pop("wall_time_s")
                text = json.dumps(payload, sort_keys=True)
            out[str(path.relative_to(root))] = text
    return out


def test_criterion_09_protocol(tmp_path):
    data = tmp_path / "sim.csv"
    assert main(["gen-data", "--k", "3", "--samples", "200", "--out", str(data)]) == 0
    args = ["train", "--scheme", "ovo,concat", "--data", str(data), "--seeds", "0-9", "--max-epochs", "5"]
    codes = [main(args + ["--out", str(tmp_path / name)]) for name in ("a", "b")]
    agg = json.loads((tmp_path / "a" / "aggregate.json").read_text())
    has_stats = all("±" in agg["schemes"][s]["formatted"]["accuracy"] for s in ("ovo", "concat"))
    tests = agg.get("t_test", [])
    has_verdict = bool(tests) and all("significant" in r for r in tests) and agg["alpha"] == 0.01
    identical = _tree_bytes(tmp_path / "a") == _tree_bytes(tmp_path / "b")
    ok = codes == [0, 0] and has_stats and has_verdict and identical and len(agg["seeds"]) == 10
    verdict(9, ok, f"10 seeds, mean ± std: {has_stats}, Welch verdict at 0.01: {has_verdict}, "
                   f"reruns identical: {identical}")


@pytest.mark.slow
def test_criterion_10_learnability():
    start = time.perf_counter()
    splits = split(generate(SimConfig(k=5)))
    config = FusionConfig(scheme="ovo", k=5, raw_dim=20, n=2, d=8)
    found = grid_search(config, splits)
    model = FusionModel.from_seed(FusionConfig(scheme="ovo", k=5, raw_dim=20, n=2, d=8, h=found.heads), 0)
    fit(model, splits[0], splits[1], found.best)
    acc, f1 = evaluate(model, splits[2])
    elapsed = time.perf_counter() - start
    verdict(10, acc > 0.75 and elapsed < 300,
            f"test accuracy {acc:.3f} (F1 {f1:.3f}) with lr={found.best.learning_rate:g}, "
            f"batch={found.best.batch_size}, h={found.heads}; {elapsed:.0f}s")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
