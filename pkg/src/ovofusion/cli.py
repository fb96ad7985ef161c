"""``ovofusion`` command line: gen-data, train, bench, complexity, grad-check, report.

Exit codes: 0 success, 2 invalid configuration, 3 I/O failure, 4 numeric
abort, 5 failed check. Every option can also come from ``--config FILE.json``
(keys are the long option names with dashes or underscores); explicit flags win.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from typing import Dict, List, Sequence

import numpy as np

from . import bench as bm
from . import simdata
from .flops import (PHASE_LABELS, PHASES, analytic_breakdown, analytic_flops, canonical_scheme,
                    format_leading_term, leading_term, pair_multiplicity)
from .fusion import FusionConfig, FusionModel, atomic_write_text, grad_check, save_checkpoint
from .train import (DEFAULT_GRID, TrainConfig, aggregate, config_dict, format_mean_std, grid_search,
                    run_seed, t_test)

log = logging.getLogger("ovofusion")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4, 5
ALPHA = 0.01
GRAD_TOLERANCE = 1e-4


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "gen-data": {"k": 20, "vec_len": 20, "samples": 2000, "threshold": 0.15, "noise": 0.01, "seed": 0,
                 "out": "sim.csv"},
    "bench": {"schemes": "early-self,cross-pairwise,ovo", "k_list": "2,5,10,15,20", "n": 4, "d": 16, "h": 2,
              "seed": 0, "repeats": 5, "out": "bench.csv"},
    "train": {"scheme": "ovo", "data": None, "grid": False, "seeds": "0-9", "out": "runs", "n": 2, "d": 8,
              "h": 1, "lr": 1e-3, "batch_size": 32, "max_epochs": 200, "patience": 5, "split_seed": 0,
              "grid_seed": 0},
    "complexity": {"scheme": "ovo", "k": 2, "n": 4, "d": 16, "h": 2, "json": False},
    "grad-check": {"scheme": "ovo", "k": 3, "n": 2, "d": 8, "h": 2, "eps": 1e-5, "raw_dim": 4, "batch": 3,
                   "seed": 0},
    "report": {"bench_csv": None, "aggregate": None, "out": "report"},
}


# -- parsing -------------------------------------------------------------------


def _int_list(text) -> List[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    if isinstance(text, int):
        return [text]
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise ConfigError(f"empty integer list {text!r}")
    return out


def _str_list(text) -> List[str]:
    if isinstance(text, (list, tuple)):
        return [str(v) for v in text]
    return [s.strip() for s in str(text).split(",") if s.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ovofusion", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_, argument_default=None)
        p.add_argument("--config", help="JSON file of option values; explicit flags take precedence")
        return p

    p = add("gen-data", "generate the synthetic multimodal dataset (CSV + JSON sidecar)")
    p.add_argument("--k", type=int, help="number of modalities [20]")
    p.add_argument("--vec-len", type=int, help="features per modality [20]")
    p.add_argument("--samples", type=int, help="total samples, even [2000]")
    p.add_argument("--threshold", type=float, help="class-1 upper bound [0.15]")
    p.add_argument("--noise", type=float, help="half-width of the per-feature noise [0.01]")
    p.add_argument("--seed", type=int, help="[0]")
    p.add_argument("--out", help="CSV path [sim.csv]")

    p = add("bench", "FLOP and wall-time benchmark across modality counts")
    p.add_argument("--schemes", help="comma list [early-self,cross-pairwise,ovo]")
    p.add_argument("--k-list", help="comma list of modality counts [2,5,10,15,20]")
    p.add_argument("--n", type=int, help="tokens per modality [4]")
    p.add_argument("--d", type=int, help="model width [16]")
    p.add_argument("--h", type=int, help="heads [2]")
    p.add_argument("--seed", type=int, help="[0]")
    p.add_argument("--repeats", type=int, help="timing repeats per cell, best kept [5]")
    p.add_argument("--out", help="CSV path; the summary goes to <stem>.summary.json [bench.csv]")

    p = add("train", "train one or more schemes over several seeds")
    p.add_argument("--scheme", help="scheme or comma list of schemes [ovo]")
    p.add_argument("--data", help="dataset CSV written by gen-data (required)")
    p.add_argument("--grid", action="store_true", default=None, help="select lr/batch/heads by grid search")
    p.add_argument("--seeds", help="comma list and/or ranges, e.g. 0-9 or 1,5,7 [0-9]")
    p.add_argument("--out", help="output directory [runs]")
    p.add_argument("--n", type=int, help="[2]")
    p.add_argument("--d", type=int, help="[8]")
    p.add_argument("--h", type=int, help="heads when not grid searching [1]")
    p.add_argument("--lr", type=float, help="[1e-3]")
    p.add_argument("--batch-size", type=int, help="[32]")
    p.add_argument("--max-epochs", type=int, help="[200]")
    p.add_argument("--patience", type=int, help="[5]")
    p.add_argument("--split-seed", type=int, help="seed of the 80/10/10 split [0]")
    p.add_argument("--grid-seed", type=int, help="seed used for every grid point [0]")

    p = add("complexity", "closed-form FLOPs, per-phase breakdown and leading term")
    p.add_argument("--scheme", help="[ovo]")
    for name, default in (("k", 2), ("n", 4), ("d", 16), ("h", 2)):
        p.add_argument(f"--{name}", type=int, help=f"[{default}]")
    p.add_argument("--json", action="store_true", default=None, help="emit JSON instead of text")

    p = add("grad-check", "compare autograd against central finite differences")
    p.add_argument("--scheme", help="[ovo]")
    for name, default in (("k", 3), ("n", 2), ("d", 8), ("h", 2), ("raw-dim", 4), ("batch", 3), ("seed", 0)):
        p.add_argument(f"--{name}", type=int, help=f"[{default}]")
    p.add_argument("--eps", type=float, help="finite-difference step [1e-5]")

    p = add("report", "long-format CSV and Markdown summary from a bench CSV")
    p.add_argument("--bench-csv", help="bench output (required)")
    p.add_argument("--aggregate", help="optional aggregate.json from train, adds a metrics table")
    p.add_argument("--out", help="output directory [report]")
    return parser


def resolve(command: str, args: argparse.Namespace) -> Dict:
    """Defaults, overlaid by the JSON config file, overlaid by explicit flags."""
    defaults = DEFAULTS[command]
    values = dict(defaults)
    if args.config:
        try:
            with open(args.config) as fh:
                from_file = json.load(fh)
        except ValueError as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
        if not isinstance(from_file, dict):
            raise ConfigError(f"{args.config} must hold a JSON object")
        for key, value in from_file.items():
            key = key.replace("-", "_")
            if key not in defaults:
                raise ConfigError(f"unknown option {key!r} in {args.config}")
            values[key] = value
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            values[key] = value
    return values


def write_json(path, payload) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


# -- subcommands ---------------------------------------------------------------


def cmd_gen_data(o: Dict) -> int:
    cfg = simdata.SimConfig(k=o["k"], vec_len=o["vec_len"], samples=o["samples"], threshold=o["threshold"],
                            noise_halfwidth=o["noise"], seed=o["seed"])
    dataset = simdata.generate(cfg)
    simdata.save(dataset, o["out"])
    print(f"wrote {len(dataset)} samples ({int(np.sum(dataset.y == 0))} class 0) to {o['out']}")
    return EXIT_OK


def cmd_bench(o: Dict) -> int:
    schemes = [canonical_scheme(s) for s in _str_list(o["schemes"])]
    ks = _int_list(o["k_list"])
    if o["repeats"] < 1:
        raise ConfigError("repeats must be at least 1")
    rows = bm.run_bench(schemes, ks, o["n"], o["d"], o["h"], o["seed"], o["repeats"])
    atomic_write_text(o["out"], bm.bench_csv(rows))
    info = bm.summary(rows)
    info["config"] = {**o, "schemes": schemes, "k_list": ks}
    stem, _ = os.path.splitext(o["out"])
    write_json(stem + ".summary.json", info)
    for scheme, slope in info["slopes"].items():
        print(f"{scheme:>15}: log-log slope {slope:.3f}")
    return EXIT_OK


def cmd_complexity(o: Dict) -> int:
    scheme = canonical_scheme(o["scheme"])
    k, n, d, h = o["k"], o["n"], o["d"], o["h"]
    parts = analytic_breakdown(scheme, k, n, d, h)
    info = {"scheme": scheme, "k": k, "n": n, "d": d, "h": h, "total": analytic_flops(scheme, k, n, d, h),
            "breakdown": {PHASE_LABELS[p]: parts[p] for p in PHASES}}
    if scheme != "concat":
        info["leading_term"] = list(leading_term(scheme))
    if scheme == "cross-pairwise":
        info["pair_multiplicity"] = pair_multiplicity(k)
    if o["json"]:
        print(json.dumps(info, indent=2))
        return EXIT_OK
    print(f"scheme: {scheme}  (k={k}, n={n}, d={d}, h={h})")
    print(f"total FLOPs per sample: {info['total']}")
    for label, count in info["breakdown"].items():
        print(f"  {label:<48} {count}")
    if "pair_multiplicity" in info:
        print(f"directional pairs k(k-1): {info['pair_multiplicity']}")
    if scheme != "concat":
        print(f"leading term: {format_leading_term(scheme)}  exponents (k, n, d) = {tuple(info['leading_term'])}")
    return EXIT_OK


def cmd_grad_check(o: Dict) -> int:
    if not o["eps"] > 0:
        raise ConfigError("--eps must be positive")
    if o["batch"] < 1:
        raise ConfigError("--batch must be at least 1")
    config = FusionConfig(scheme=o["scheme"], k=o["k"], raw_dim=o["raw_dim"], n=o["n"], d=o["d"], h=o["h"])
    model = FusionModel.from_seed(config, o["seed"])
    rng = np.random.default_rng(o["seed"])
    raw = rng.standard_normal((o["batch"], config.k, config.raw_dim))
    labels = rng.integers(0, config.classes, size=o["batch"])
    err, worst = grad_check(model, raw, labels, o["eps"])
    print(f"{config.scheme}: max relative error {err:.3e} (worst parameter: {worst or '-'})")
    if err < GRAD_TOLERANCE:
        return EXIT_OK
    print(f"FAIL: {worst} exceeds {GRAD_TOLERANCE:g}", file=sys.stderr)
    return EXIT_CHECK


def _metrics_csv(result) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("epoch", "train_loss", "val_accuracy"))
    for epoch, (loss, acc) in enumerate(zip(result.train_loss, result.val_accuracy), start=1):
        writer.writerow((epoch, repr(loss), repr(acc)))
    return buf.getvalue()


def ttest_rows(per_scheme: Dict[str, Dict[str, List[float]]], alpha: float = ALPHA) -> List[Dict]:
    rows = []
    for a, b in itertools.combinations(per_scheme, 2):
        for metric in ("accuracy", "f1"):
            t, p = t_test(per_scheme[a][metric], per_scheme[b][metric])
            rows.append({"scheme_a": a, "scheme_b": b, "metric": metric, "t": t, "p": p,
                         "significant": bool(p < alpha)})
    return rows


def ttest_csv(rows: Sequence[Dict], alpha: float = ALPHA) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("scheme_a", "scheme_b", "metric", "t", "p", f"significant_at_{alpha:g}"))
    for r in rows:
        writer.writerow((r["scheme_a"], r["scheme_b"], r["metric"], repr(r["t"]), repr(r["p"]),
                         "yes" if r["significant"] else "no"))
    return buf.getvalue()


def cmd_train(o: Dict) -> int:
    if not o["data"]:
        raise ConfigError("--data is required")
    schemes = [canonical_scheme(s) for s in _str_list(o["scheme"])]
    seeds = _int_list(o["seeds"])
    if len(set(seeds)) != len(seeds):
        log.warning("repeated seeds give identical runs")
    dataset = simdata.load(o["data"])
    splits = simdata.split(dataset, seed=o["split_seed"])
    os.makedirs(o["out"], exist_ok=True)
    summary = {"data": os.path.abspath(o["data"]), "seeds": seeds, "alpha": ALPHA, "schemes": {}}
    per_scheme = {}
    for scheme in schemes:
        base = FusionConfig(scheme=scheme, k=dataset.k, raw_dim=dataset.X.shape[2], n=o["n"], d=o["d"], h=o["h"])
        if o["grid"]:
            found = grid_search(base, splits, DEFAULT_GRID, o["max_epochs"], o["patience"], o["grid_seed"])
            cfg, heads, grid_rows = found.best, found.heads, found.rows
        else:
            cfg = TrainConfig(learning_rate=o["lr"], batch_size=o["batch_size"], max_epochs=o["max_epochs"],
                              patience=o["patience"])
            heads, grid_rows = o["h"], None
        config = replace(base, h=heads)
        runs = []
        for seed in seeds:
            run = run_seed(config, splits, cfg, seed)
            runs.append(run)
            run_dir = os.path.join(o["out"], scheme, f"seed-{seed}")
            os.makedirs(run_dir, exist_ok=True)
            write_json(os.path.join(run_dir, "config.json"), {
                "model": asdict(config), "train": config_dict(replace(cfg, seed=seed)), "split_seed": o["split_seed"],
                "data": summary["data"], "optimizer": "adam(beta1=0.9, beta2=0.999, eps=1e-8)",
                "loss": "cross-entropy", "init": "uniform(+-1/sqrt(fan_in)), zero bias"})
            atomic_write_text(os.path.join(run_dir, "metrics.csv"), _metrics_csv(run.result))
            write_json(os.path.join(run_dir, "result.json"), {
                "test_accuracy": run.result.test_accuracy, "test_f1": run.result.test_f1,
                "best_epoch": run.result.best_epoch, "best_val_accuracy": run.result.best_val_accuracy,
                "epochs_run": run.result.epochs_run, "train_flops": run.result.train_flops,
                "integration_flops_per_sample": analytic_flops(scheme, config.k, config.n, config.d, config.h),
                "wall_time_s": run.result.wall_time_s})
            save_checkpoint(run.model, os.path.join(run_dir, "checkpoint.json"))
            log.info("%s seed %d: test acc %.4f", scheme, seed, run.result.test_accuracy)
        agg = aggregate(runs)
        per_scheme[scheme] = {m: [r.result.metrics()[m] for r in sorted(runs, key=lambda r: r.seed)]
                              for m in ("accuracy", "f1")}
        summary["schemes"][scheme] = {
            "aggregate": agg,
            "formatted": {m: format_mean_std(agg[m]["mean"], agg[m]["std"]) for m in agg},
            "resolved": {"learning_rate": cfg.learning_rate, "batch_size": cfg.batch_size, "heads": heads,
                         "max_epochs": cfg.max_epochs, "patience": cfg.patience},
            "grid_winner": None if grid_rows is None else {"learning_rate": cfg.learning_rate,
                                                           "batch_size": cfg.batch_size, "heads": heads},
            "grid": grid_rows,
            "per_seed": per_scheme[scheme],
        }
        print(f"{scheme:>15}: accuracy {summary['schemes'][scheme]['formatted']['accuracy']}"
              f"  F1 {summary['schemes'][scheme]['formatted']['f1']}")
    if len(schemes) > 1:
        if len(seeds) < 2:
            log.warning("t-test skipped: needs at least two seeds per scheme")
        else:
            rows = ttest_rows(per_scheme)
            summary["t_test"] = rows
            atomic_write_text(os.path.join(o["out"], "ttest.csv"), ttest_csv(rows))
            for r in rows:
                verdict = "significant" if r["significant"] else "not significant"
                print(f"{r['scheme_a']} vs {r['scheme_b']} ({r['metric']}): t={r['t']:.3f} p={r['p']:.4g} "
                      f"-> {verdict} at alpha={ALPHA:g}")
    write_json(os.path.join(o["out"], "aggregate.json"), summary)
    return EXIT_OK


def cmd_report(o: Dict) -> int:
    if not o["bench_csv"]:
        raise ConfigError("--bench-csv is required")
    with open(o["bench_csv"]) as fh:
        rows = bm.read_bench_csv(fh.read())
    aggregate_ = None
    if o["aggregate"]:
        with open(o["aggregate"]) as fh:
            aggregate_ = {s: v["aggregate"] for s, v in json.load(fh)["schemes"].items()}
    os.makedirs(o["out"], exist_ok=True)
    atomic_write_text(os.path.join(o["out"], "delta_flops_long.csv"), bm.long_csv(rows))
    atomic_write_text(os.path.join(o["out"], "report.md"), bm.markdown_report(rows, aggregate_))
    print(f"wrote {len(rows)} rows to {o['out']}")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "bench": cmd_bench,
    "train": cmd_train,
    "complexity": cmd_complexity,
    "grad-check": cmd_grad_check,
    "report": cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        options = resolve(args.command, args)
        return COMMANDS[args.command](options)
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TypeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
