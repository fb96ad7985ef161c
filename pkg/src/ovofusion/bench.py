"""FLOP/wall-time benchmark over modality counts, and its reports."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from .flops import FlopCounter, analytic_flops, canonical_scheme, delta_flops, loglog_slope
from .fusion import FusionConfig, FusionModel
from .train import format_mean_std

BENCH_HEADER = ("scheme", "k", "n", "d", "h", "flops_analytic", "flops_measured", "delta_flops", "wall_ns")
DEFAULT_K_LIST = (2, 5, 10, 15, 20)
DEFAULT_SCHEMES = ("early-self", "cross-pairwise", "ovo")


@dataclass
class BenchRow:
    scheme: str
    k: int
    n: int
    d: int
    h: int
    flops_analytic: int
    flops_measured: int
    delta_flops: int
    wall_ns: int

    def as_tuple(self):
        return tuple(getattr(self, f) for f in BENCH_HEADER)


def time_fuse(model: FusionModel, embeddings: np.ndarray, repeats: int = 5) -> int:
    """Best-of-``repeats`` wall time of one untracked ``fuse`` call, in ns."""
    best = None
    for _ in range(max(1, repeats)):
        start = time.perf_counter_ns()
        model.fuse(embeddings)
        elapsed = time.perf_counter_ns() - start
        best = elapsed if best is None else min(best, elapsed)
    return best


def bench_cell(scheme: str, k: int, n: int, d: int, h: int, seed: int = 0, repeats: int = 5) -> BenchRow:
    config = FusionConfig(scheme=scheme, k=k, raw_dim=1, n=n, d=d, h=h)
    model = FusionModel.from_seed(config, seed)
    embeddings = np.random.default_rng(seed).standard_normal((1, k, n, d))
    counter = FlopCounter()
    model.fuse(embeddings, counter)
    return BenchRow(config.scheme, k, n, d, h, analytic_flops(config.scheme, k, n, d, h), counter.total,
                    delta_flops(config.scheme, k, n, d, h), time_fuse(model, embeddings, repeats))


def run_bench(schemes: Sequence[str] = DEFAULT_SCHEMES, k_list: Sequence[int] = DEFAULT_K_LIST,
              n: int = 4, d: int = 16, h: int = 2, seed: int = 0, repeats: int = 5) -> List[BenchRow]:
    return [bench_cell(canonical_scheme(s), k, n, d, h, seed, repeats) for s in schemes for k in k_list]


def bench_csv(rows: Sequence[BenchRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(BENCH_HEADER)
    for row in rows:
        writer.writerow(row.as_tuple())
    return buf.getvalue()


def read_bench_csv(text: str) -> List[BenchRow]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != BENCH_HEADER:
        raise ValueError(f"unexpected bench header {reader.fieldnames}")
    return [BenchRow(r["scheme"], *(int(r[f]) for f in BENCH_HEADER[1:])) for r in reader]


def slopes(rows: Sequence[BenchRow]) -> Dict[str, float]:
    """log-log slope of ΔFLOPs against k, per scheme (schemes with ΔFLOPs = 0 skipped)."""
    out = {}
    for scheme in dict.fromkeys(r.scheme for r in rows):
        pts = sorted((r.k, r.delta_flops) for r in rows if r.scheme == scheme)
        if len(pts) >= 2 and all(v > 0 for _, v in pts):
            out[scheme] = loglog_slope([p[0] for p in pts], [p[1] for p in pts])
    return out


def summary(rows: Sequence[BenchRow]) -> Dict:
    return {
        "slopes": slopes(rows),
        "analytic_matches_measured": all(r.flops_analytic == r.flops_measured for r in rows),
        "cells": len(rows),
    }


def long_csv(rows: Sequence[BenchRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("scheme", "k", "delta_flops"))
    for r in rows:
        writer.writerow((r.scheme, r.k, r.delta_flops))
    return buf.getvalue()


def markdown_report(rows: Sequence[BenchRow], aggregate: Dict | None = None) -> str:
    """Slope table, ΔFLOPs table and (optionally) a mean ± std metrics table."""
    lines = ["# Integration cost vs number of modalities", "",
             "| scheme | log-log slope of ΔFLOPs vs k |", "|---|---|"]
    for scheme, slope in slopes(rows).items():
        lines.append(f"| {scheme} | {slope:.3f} |")
    ks = sorted({r.k for r in rows})
    schemes = list(dict.fromkeys(r.scheme for r in rows))
    table = {(r.scheme, r.k): r.delta_flops for r in rows}
    lines += ["", "| scheme | " + " | ".join(f"k={k}" for k in ks) + " |",
              "|---|" + "---|" * len(ks)]
    for s in schemes:
        lines.append(f"| {s} | " + " | ".join(f"{table[(s, k)]:,}" if (s, k) in table else "" for k in ks) + " |")
    if aggregate:
        lines += ["", "| scheme | accuracy | F1 |", "|---|---|---|"]
        for scheme, stats in aggregate.items():
            acc, f1 = stats["accuracy"], stats["f1"]
            lines.append(f"| {scheme} | {format_mean_std(acc['mean'], acc['std'])} "
                         f"| {format_mean_std(f1['mean'], f1['std'])} |")
    return "\n".join(lines) + "\n"
