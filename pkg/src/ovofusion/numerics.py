"""Dense float64 kernels with optional FLOP instrumentation.

Matrices are plain ``numpy.ndarray`` values of dtype float64. Every kernel
also accepts leading batch axes (``(..., rows, cols)``) and charges the
counter for the full batch.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .flops import FlopCounter


def as_matrix(values, *, ndim: int | None = None) -> np.ndarray:
    """Coerce to a finite float64 array."""
    a = np.asarray(values, dtype=np.float64)
    if ndim is not None and a.ndim != ndim:
        raise ValueError(f"expected a {ndim}-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains NaN or Inf")
    return a


def _charge(counter: FlopCounter | None, flops: int) -> None:
    if counter is not None:
        counter.add(flops)


def matmul_flops(a_shape: Sequence[int], b_shape: Sequence[int]) -> int:
    batch = np.broadcast_shapes(tuple(a_shape[:-2]), tuple(b_shape[:-2]))
    m, p = a_shape[-2], a_shape[-1]
    q = b_shape[-1]
    return 2 * int(np.prod(batch, dtype=np.int64)) * m * p * q


def matmul(a: np.ndarray, b: np.ndarray, counter: FlopCounter | None = None) -> np.ndarray:
    """Matrix product; charges ``2*m*p*q`` per batch element."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a @ b
    _charge(counter, matmul_flops(a.shape, b.shape))
    return out


def softmax_rows(m: np.ndarray, counter: FlopCounter | None = None) -> np.ndarray:
    """Softmax along the last axis, max-shifted for stability (4 FLOPs/element)."""
    m = np.asarray(m, dtype=np.float64)
    shifted = m - m.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)
    _charge(counter, 4 * m.size)
    return out


def concat_rows(ms: Sequence[np.ndarray]) -> np.ndarray:
    """Stack matrices vertically in list order."""
    if not ms:
        raise ValueError("concat_rows needs at least one matrix")
    cols = {np.shape(m)[-1] for m in ms}
    if len(cols) != 1:
        raise ValueError(f"column mismatch in concat_rows: {[np.shape(m) for m in ms]}")
    if len(ms) == 1:
        return np.asarray(ms[0], dtype=np.float64)
    return np.concatenate([np.asarray(m, dtype=np.float64) for m in ms], axis=-2)


def mean_except(ms: Sequence[np.ndarray], i: int, counter: FlopCounter | None = None) -> np.ndarray:
    """Mean of every matrix except ``ms[i]``, summed in ascending index order."""
    k = len(ms)
    if k < 2:
        raise ValueError("OvO requires at least two modalities")
    if not 0 <= i < k:
        raise IndexError(f"modality index {i} out of range for {k} modalities")
    shape = np.shape(ms[0])
    if any(np.shape(m) != shape for m in ms):
        raise ValueError(f"mean_except needs equal shapes, got {[np.shape(m) for m in ms]}")
    acc = np.zeros(shape, dtype=np.float64)
    for j in range(k):
        if j != i:
            acc = acc + ms[j]
    size = int(np.prod(shape))
    _charge(counter, (k - 1) * size + size)
    return acc / (k - 1)


def others_means(stacked: np.ndarray, axis: int = 0, counter: FlopCounter | None = None) -> np.ndarray:
    """All leave-one-out means along ``axis`` at linear cost.

    Uses prefix and suffix sums, so output ``i`` is
    ``(m_0 + ... + m_{i-1}) + (m_{i+1} + ... + m_{k-1})`` divided by ``k - 1``.
    For ``k = 2`` each output is exactly the other input.
    Charges ``3*(k-2)`` adds and ``k`` divides per modality element.
    """
    x = np.moveaxis(np.asarray(stacked, dtype=np.float64), axis, 0)
    k = x.shape[0]
    if k < 2:
        raise ValueError("OvO requires at least two modalities")
    prefix = [None] * k
    suffix = [None] * k
    prefix[1] = x[0]
    for i in range(2, k):
        prefix[i] = prefix[i - 1] + x[i - 1]
    suffix[k - 2] = x[k - 1]
    for i in range(k - 3, -1, -1):
        suffix[i] = suffix[i + 1] + x[i + 1]
    sums = [suffix[0]]
    sums += [prefix[i] + suffix[i] for i in range(1, k - 1)]
    sums.append(prefix[k - 1])
    out = np.stack(sums) / (k - 1)
    _charge(counter, (3 * (k - 2) + k) * x[0].size)
    return np.moveaxis(out, 0, axis)


def make_rng(seed: int | np.random.SeedSequence | None) -> np.random.Generator:
    """Seeded PCG64 generator."""
    return np.random.default_rng(seed)


def rng_uniform(rng: np.random.Generator, lo: float, hi: float, size=None):
    """Uniform draw(s) on ``[lo, hi)``."""
    if not lo < hi:
        raise ValueError(f"rng_uniform needs lo < hi (got lo={lo}, hi={hi})")
    return rng.uniform(lo, hi, size=size)


def rng_shuffle(rng: np.random.Generator, seq: Sequence):
    """Return a shuffled copy of ``seq``."""
    order = rng.permutation(len(seq))
    if isinstance(seq, np.ndarray):
        return seq[order]
    return [seq[i] for i in order]
