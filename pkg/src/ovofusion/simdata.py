"""Synthetic multimodal benchmark whose label needs every modality.

Class 0: ``k`` base values drawn uniform on (0, 1) and normalised to sum to 1.
Class 1: ``k`` base values drawn uniform on [0, threshold).
Each base value becomes one modality: ``vec_len`` draws uniform within
``noise_halfwidth`` of it.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Tuple

import numpy as np

from .fusion import atomic_write_text


@dataclass(frozen=True)
class SimConfig:
    k: int = 20
    vec_len: int = 20
    samples: int = 2000
    threshold: float = 0.15
    noise_halfwidth: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.vec_len < 1:
            raise ValueError("k and vec_len must be positive")
        if self.samples < 2 or self.samples % 2:
            raise ValueError(f"samples must be a positive even number (got {self.samples})")
        if not 0 < self.threshold < 1:
            raise ValueError(f"threshold must lie in (0, 1) (got {self.threshold})")
        if self.noise_halfwidth < 0:
            raise ValueError("noise_halfwidth must be nonnegative")


@dataclass
class SimDataset:
    """``X`` is ``(samples, k, vec_len)``; ``base`` is ``(samples, k)``."""

    X: np.ndarray
    y: np.ndarray
    base: np.ndarray | None = None
    config: SimConfig | None = field(default=None)

    def __len__(self) -> int:
        return len(self.y)

    @property
    def k(self) -> int:
        return self.X.shape[1]

    def subset(self, idx: np.ndarray) -> "SimDataset":
        base = None if self.base is None else self.base[idx]
        return SimDataset(self.X[idx], self.y[idx], base, self.config)

    def flat(self) -> np.ndarray:
        return self.X.reshape(len(self), -1)


def generate(cfg: SimConfig) -> SimDataset:
    rng = np.random.default_rng(cfg.seed)
    half = cfg.samples // 2
    draws = rng.uniform(0.0, 1.0, size=(half, cfg.k))
    # uniform() is half-open at 0; nudge exact zeros into (0, 1)
    draws = np.where(draws == 0.0, np.nextafter(0.0, 1.0), draws)
    sum_to_one = draws / draws.sum(axis=1, keepdims=True)
    below = rng.uniform(0.0, cfg.threshold, size=(half, cfg.k))
    base = np.concatenate([sum_to_one, below])
    y = np.concatenate([np.zeros(half, dtype=np.int64), np.ones(half, dtype=np.int64)])
    if cfg.noise_halfwidth > 0:
        noise = rng.uniform(-cfg.noise_halfwidth, cfg.noise_halfwidth, size=(cfg.samples, cfg.k, cfg.vec_len))
        X = base[:, :, None] + noise
    else:
        X = np.repeat(base[:, :, None], cfg.vec_len, axis=2)
    order = rng.permutation(cfg.samples)
    return SimDataset(X[order], y[order], base[order], cfg)


def split(
    dataset: SimDataset, ratios: Tuple[int, int, int] = (80, 10, 10), seed: int = 0
) -> Tuple[SimDataset, SimDataset, SimDataset]:
    """Stratified shuffled train/validation/test split (ratios in percent)."""
    if len(ratios) != 3 or sum(ratios) != 100 or min(ratios) < 0:
        raise ValueError(f"ratios must be three nonnegative percentages summing to 100 (got {ratios})")
    rng = np.random.default_rng(seed)
    parts = [[], [], []]
    for label in np.unique(dataset.y):
        idx = rng.permutation(np.flatnonzero(dataset.y == label))
        n_train = round(len(idx) * ratios[0] / 100)
        n_val = round(len(idx) * ratios[1] / 100)
        parts[0].append(idx[:n_train])
        parts[1].append(idx[n_train:n_train + n_val])
        parts[2].append(idx[n_train + n_val:])
    out = []
    for chunks in parts:
        idx = np.concatenate(chunks)
        out.append(dataset.subset(rng.permutation(idx)))
    return tuple(out)


# -- files ---------------------------------------------------------------------


def csv_header(k: int, vec_len: int) -> list:
    return ["label"] + [f"m{j}_f{t}" for j in range(k) for t in range(vec_len)]


def to_csv_text(dataset: SimDataset) -> str:
    buf = io.StringIO()
    k, vec_len = dataset.X.shape[1:]
    buf.write(",".join(csv_header(k, vec_len)) + "\n")
    flat = dataset.flat()
    for label, row in zip(dataset.y, flat):
        buf.write(str(int(label)) + "," + ",".join(format(v, ".17g") for v in row) + "\n")
    return buf.getvalue()


def sidecar_path(csv_path) -> str:
    root, _ = os.path.splitext(os.fspath(csv_path))
    return root + ".json"


def save(dataset: SimDataset, path) -> None:
    """Write the CSV and a JSON sidecar holding the generation config."""
    atomic_write_text(path, to_csv_text(dataset))
    meta = {"k": dataset.X.shape[1], "vec_len": dataset.X.shape[2], "samples": len(dataset)}
    if dataset.config is not None:
        meta = {**meta, **asdict(dataset.config)}
    atomic_write_text(sidecar_path(path), json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load(path) -> SimDataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [list(map(float, r)) for r in reader if r]
    cols = header[1:]
    k = len({c.split("_")[0] for c in cols})
    if header[0] != "label" or not cols or len(cols) % k:
        raise ValueError(f"{path} does not look like a simulation CSV")
    vec_len = len(cols) // k
    if header != csv_header(k, vec_len):
        raise ValueError(f"unexpected column layout in {path}")
    data = np.asarray(rows, dtype=np.float64)
    config = None
    meta_path = sidecar_path(path)
    if os.path.exists(meta_path):
        with open(meta_path) as fh:
            meta = json.load(fh)
        fields = SimConfig.__dataclass_fields__
        config = SimConfig(**{key: meta[key] for key in fields if key in meta})
    return SimDataset(data[:, 1:].reshape(len(data), k, vec_len), data[:, 0].astype(np.int64), None, config)
