"""Scaled dot-product, pairwise cross, and one-versus-others attention.

All functions take and return :class:`~ovofusion.autograd.Tensor` values (plain
arrays are accepted and treated as constants). Token matrices are
``(..., n, d)``; leading axes are batch axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .flops import FlopCounter, maybe_phase


@dataclass
class MultiHeadParams:
    """Attention weights for one integration layer.

    ``query``/``key``/``value``/``output`` are ``d x d``; head ``t`` uses the
    column block ``t*d/h:(t+1)*d/h`` of each input projection. OvO instead uses
    ``modality_proj`` (``k x d x d``, one projection per modality, same head
    blocking) and ``bilinear`` (``h x d/h x d/h``, shared by all modalities
    within a head).
    """

    heads: int
    output: Tensor
    query: Tensor | None = None
    key: Tensor | None = None
    value: Tensor | None = None
    modality_proj: Tensor | None = None
    bilinear: Tensor | None = None

    @classmethod
    def identity(cls, d: int, heads: int = 1, k: int | None = None) -> "MultiHeadParams":
        eye = np.eye(d)
        params = cls(heads=heads, output=Tensor(eye), query=Tensor(eye), key=Tensor(eye), value=Tensor(eye))
        if k is not None:
            dh = d // heads
            params.modality_proj = Tensor(np.broadcast_to(eye, (k, d, d)).copy())
            params.bilinear = Tensor(np.broadcast_to(np.eye(dh), (heads, dh, dh)).copy())
        return params


def _check_heads(d: int, heads: int) -> None:
    if heads < 1 or d % heads:
        raise ValueError(f"model dim {d} is not divisible by {heads} heads")


def split_heads(x: Tensor, heads: int) -> Tensor:
    """``(..., n, d) -> (..., h, n, d/h)``."""
    *lead, n, d = x.shape
    _check_heads(d, heads)
    return ag.swapaxes(ag.reshape(x, (*lead, n, heads, d // heads)), -2, -3)


def merge_heads(x: Tensor) -> Tensor:
    """``(..., h, n, d/h) -> (..., n, d)``."""
    x = ag.swapaxes(x, -2, -3)
    *lead, n, h, dh = x.shape
    return ag.reshape(x, (*lead, n, h * dh))


def stack_modalities(embeddings) -> Tensor:
    """Accept a list of ``(..., n, d)`` embeddings or one ``(..., k, n, d)`` tensor."""
    if isinstance(embeddings, (list, tuple)):
        shapes = {ag.lift(e).shape for e in embeddings}
        if len(shapes) != 1:
            raise ValueError(f"modalities must share (n, d); got shapes {sorted(shapes)}")
        return ag.stack(embeddings, axis=-3)
    return ag.lift(embeddings)


def _modality(stacked: Tensor, i: int) -> Tensor:
    """Select modality ``i`` from a ``(..., k, X, Y, Z)`` tensor (modality axis is -4)."""
    return ag.index(stacked, (Ellipsis, i, slice(None), slice(None), slice(None)))


# -- scaled dot-product --------------------------------------------------------


def attention_weights(q, kmat, counter: FlopCounter | None = None) -> Tensor:
    """``softmax(q kmat^T / sqrt(d_k))`` over the key axis."""
    q, kmat = ag.lift(q), ag.lift(kmat)
    if q.shape[-1] != kmat.shape[-1]:
        raise ValueError(f"query/key width mismatch: {q.shape} vs {kmat.shape}")
    with maybe_phase(counter, "scores"):
        scores = ag.scale(ag.matmul(q, ag.swapaxes(kmat), counter), 1.0 / math.sqrt(q.shape[-1]), counter)
    with maybe_phase(counter, "softmax"):
        return ag.softmax(scores, counter)


def scaled_dot_attention(q, kmat, v, counter: FlopCounter | None = None) -> Tensor:
    v = ag.lift(v)
    if ag.lift(kmat).shape[-2] != v.shape[-2]:
        raise ValueError(f"key/value length mismatch: {ag.lift(kmat).shape} vs {v.shape}")
    weights = attention_weights(q, kmat, counter)
    with maybe_phase(counter, "weighted-sum"):
        return ag.matmul(weights, v, counter)


def multihead_attention(query_in, kv_in, params: MultiHeadParams, counter: FlopCounter | None = None) -> Tensor:
    """Projected multi-head attention; queries from ``query_in``, keys/values from ``kv_in``."""
    query_in, kv_in = ag.lift(query_in), ag.lift(kv_in)
    if query_in.shape[-1] != kv_in.shape[-1]:
        raise ValueError(f"model dim mismatch: {query_in.shape} vs {kv_in.shape}")
    _check_heads(query_in.shape[-1], params.heads)
    with maybe_phase(counter, "projections"):
        q = ag.matmul(query_in, params.query, counter)
        k = ag.matmul(kv_in, params.key, counter)
        v = ag.matmul(kv_in, params.value, counter)
    h = params.heads
    ctx = scaled_dot_attention(split_heads(q, h), split_heads(k, h), split_heads(v, h), counter)
    with maybe_phase(counter, "concat/output"):
        return ag.matmul(merge_heads(ctx), params.output, counter)


def self_attention_fused(embeddings, params: MultiHeadParams, counter: FlopCounter | None = None) -> Tensor:
    """Early fusion: concatenate all tokens, then one self-attention pass.

    Returns ``(..., k*n, d)``.
    """
    stacked = stack_modalities(embeddings)
    *lead, k, n, d = stacked.shape
    # row-major reshape == concat_rows in modality order
    sequence = ag.reshape(stacked, (*lead, k * n, d))
    return multihead_attention(sequence, sequence, params, counter)


def cross_attention_pair(query_mod, kv_mod, params: MultiHeadParams, counter: FlopCounter | None = None) -> Tensor:
    """One directional cross-attention: ``query_mod`` attends to ``kv_mod``."""
    return multihead_attention(query_mod, kv_mod, params, counter)


def cross_attention_fused(embeddings, params: MultiHeadParams, counter: FlopCounter | None = None) -> Tensor:
    """All ``k(k-1)`` directional cross-attentions, aggregated per query modality.

    Q/K/V are projected once per modality. For query modality ``i`` the pair
    weights ``A_ij`` (each normalised over modality ``j``'s keys) are laid side
    by side and applied to the stacked values in one product, which equals
    ``sum_j A_ij V_j``; the output projection then maps each modality back to
    ``d``. Returns ``(..., k, n, d)``.
    """
    stacked = stack_modalities(embeddings)
    k = stacked.shape[-3]
    if k < 2:
        raise ValueError("cross-attention requires at least two modalities")
    h = params.heads
    _check_heads(stacked.shape[-1], h)
    with maybe_phase(counter, "projections"):
        q = split_heads(ag.matmul(stacked, params.query, counter), h)
        keys = split_heads(ag.matmul(stacked, params.key, counter), h)
        values = split_heads(ag.matmul(stacked, params.value, counter), h)
    q_mods = [_modality(q, i) for i in range(k)]
    k_mods = [_modality(keys, i) for i in range(k)]
    v_mods = [_modality(values, i) for i in range(k)]
    contexts = []
    for i in range(k):
        weights = [attention_weights(q_mods[i], k_mods[j], counter) for j in range(k) if j != i]
        others = [v_mods[j] for j in range(k) if j != i]
        with maybe_phase(counter, "weighted-sum"):
            contexts.append(ag.matmul(ag.concat(weights, axis=-1), ag.concat(others, axis=-2), counter))
    merged = merge_heads(ag.stack(contexts, axis=-4))
    with maybe_phase(counter, "concat/output"):
        return ag.matmul(merged, params.output, counter)


# -- one-versus-others ---------------------------------------------------------


def _ovo_scores(m, others_avg, w, counter: FlopCounter | None) -> Tensor:
    with maybe_phase(counter, "scores"):
        return ag.matmul(ag.matmul(m, w, counter), ag.swapaxes(others_avg), counter)


def _ovo_attend(m, others_avg, w, counter: FlopCounter | None) -> Tensor:
    scores = _ovo_scores(m, others_avg, w, counter)
    with maybe_phase(counter, "softmax"):
        weights = ag.softmax(scores, counter)
    with maybe_phase(counter, "weighted-sum"):
        return ag.matmul(weights, m, counter)


def _others_average(m_i, others: Sequence, counter: FlopCounter | None) -> Tensor:
    if len(others) == 0:
        raise ValueError("OvO requires at least two modalities")
    m_i = ag.lift(m_i)
    if any(ag.lift(o).shape != m_i.shape for o in others):
        raise ValueError("OvO modalities must share (n, d)")
    with maybe_phase(counter, "averaging"):
        return ag.mean_except([m_i, *others], 0, counter)


def ovo_score(m_i, others: Sequence, w, counter: FlopCounter | None = None) -> Tensor:
    """``m_i W mean(others)^T``: an ``(n x n)`` score, no temperature scaling."""
    avg = _others_average(m_i, others, counter)
    return _ovo_scores(m_i, avg, w, counter)


def ovo_context(m_i, others: Sequence, w, counter: FlopCounter | None = None) -> Tensor:
    """Softmax of :func:`ovo_score` over keys, applied to ``m_i`` as the values."""
    avg = _others_average(m_i, others, counter)
    return _ovo_attend(ag.lift(m_i), avg, w, counter)


def _check_ovo(stacked: Tensor, params: MultiHeadParams) -> None:
    k, d = stacked.shape[-3], stacked.shape[-1]
    if k < 2:
        raise ValueError("OvO requires at least two modalities")
    _check_heads(d, params.heads)
    if params.modality_proj is None or params.modality_proj.shape[0] != k:
        raise ValueError(f"OvO parameters do not match {k} modalities")


def multihead_ovo(i: int, embeddings, params: MultiHeadParams, counter: FlopCounter | None = None) -> Tensor:
    """Multi-head OvO context for modality ``i`` alone; returns ``(..., n, d)``.

    Every modality is projected by its own per-head matrices before the
    others are averaged.
    """
    stacked = stack_modalities(embeddings)
    _check_ovo(stacked, params)
    k, h = stacked.shape[-3], params.heads
    with maybe_phase(counter, "projections"):
        projected = [
            split_heads(ag.matmul(ag.index(stacked, (Ellipsis, j, slice(None), slice(None))),
                                  ag.index(params.modality_proj, j), counter), h)
            for j in range(k)
        ]
    with maybe_phase(counter, "averaging"):
        avg = ag.mean_except(projected, i, counter)
    ctx = _ovo_attend(projected[i], avg, params.bilinear, counter)
    with maybe_phase(counter, "concat/output"):
        return ag.matmul(merge_heads(ctx), params.output, counter)


def ovo_layer(embeddings, params: MultiHeadParams, counter: FlopCounter | None = None) -> Tensor:
    """Multi-head OvO for every modality: exactly ``k`` context computations.

    Projections are shared across the ``k`` contexts and the leave-one-out
    averages come from prefix/suffix sums, keeping the whole layer linear in
    ``k``. Returns ``(..., k, n, d)``.
    """
    stacked = stack_modalities(embeddings)
    _check_ovo(stacked, params)
    k, h = stacked.shape[-3], params.heads
    with maybe_phase(counter, "projections"):
        projected = split_heads(ag.matmul(stacked, params.modality_proj, counter), h)
    with maybe_phase(counter, "averaging"):
        averages = ag.others_mean(projected, axis=-4, counter=counter)
    contexts: List[Tensor] = [
        _ovo_attend(_modality(projected, i), _modality(averages, i), params.bilinear, counter) for i in range(k)
    ]
    merged = merge_heads(ag.stack(contexts, axis=-4))
    with maybe_phase(counter, "concat/output"):
        return ag.matmul(merged, params.output, counter)
