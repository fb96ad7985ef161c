"""FLOP accounting for the integration stage.

Two independent routes are kept in step here:

* :class:`FlopCounter`, incremented by the instrumented kernels in
  :mod:`ovofusion.numerics` and :mod:`ovofusion.autograd` while a model runs;
* :func:`analytic_breakdown`, a closed form over ``(k, n, d, h)`` for the same
  computation.

Cost model (shared by both routes): a multiply-add is 2 FLOPs, so an
``(m x p) @ (p x q)`` product costs ``2*m*p*q``; an elementwise add, scale,
divide or compare costs 1 per element; a row softmax costs 4 per element;
concatenation, reshapes and transposes are free.
"""

from __future__ import annotations

import math
from collections import defaultdict
from contextlib import contextmanager
from typing import Dict, Iterator, Sequence, Tuple

import numpy as np

SCHEMES = ("concat", "early-self", "cross-pairwise", "ovo")
ATTENTION_SCHEMES = ("early-self", "cross-pairwise", "ovo")

_ALIASES = {
    "self": "early-self",
    "early": "early-self",
    "self-attention": "early-self",
    "cross": "cross-pairwise",
    "cross-attention": "cross-pairwise",
    "one-versus-others": "ovo",
}

PHASES = ("projections", "averaging", "scores", "softmax", "weighted-sum", "concat/output")

PHASE_LABELS = {
    "projections": "query/key/value (or per-modality) projections",
    "averaging": "averaging of \"other\" modalities",
    "scores": "attention scores",
    "softmax": "softmax over keys",
    "weighted-sum": "weighted sum for outputs",
    "concat/output": "concatenation and output projection",
}

_LEADING = {
    "early-self": (2, 2, 1),
    "cross-pairwise": (2, 2, 1),
    "ovo": (1, 2, 1),
}


def canonical_scheme(scheme: str) -> str:
    """Map a scheme name or alias to its canonical spelling."""
    name = _ALIASES.get(scheme, scheme)
    if name not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {', '.join(SCHEMES)}")
    return name


class FlopCounter:
    """Monotone FLOP tally with a per-phase breakdown.

    Kernels call :meth:`add`; the phase is whatever :meth:`phase` last
    entered (``"other"`` outside any phase block).
    """

    def __init__(self) -> None:
        self.breakdown: Dict[str, int] = defaultdict(int)
        self._phase = "other"

    @property
    def total(self) -> int:
        return sum(self.breakdown.values())

    def add(self, flops: int, phase: str | None = None) -> None:
        flops = int(flops)
        if flops < 0:
            raise ValueError("FLOP increments must be nonnegative")
        self.breakdown[phase or self._phase] += flops

    @contextmanager
    def phase(self, name: str) -> Iterator["FlopCounter"]:
        previous, self._phase = self._phase, name
        try:
            yield self
        finally:
            self._phase = previous

    def as_dict(self) -> Dict[str, int]:
        return {name: count for name, count in self.breakdown.items() if count}

    def __repr__(self) -> str:
        return f"FlopCounter(total={self.total}, breakdown={self.as_dict()})"


@contextmanager
def maybe_phase(counter: FlopCounter | None, name: str):
    """``counter.phase(name)`` that tolerates a missing counter."""
    if counter is None:
        yield None
    else:
        with counter.phase(name) as c:
            yield c


def _check_config(k: int, n: int, d: int, h: int) -> None:
    if min(k, n, d, h) < 1:
        raise ValueError(f"k, n, d, h must be positive (got k={k}, n={n}, d={d}, h={h})")
    if d % h:
        raise ValueError(f"d={d} is not divisible by h={h}")


def analytic_breakdown(scheme: str, k: int, n: int, d: int, h: int) -> Dict[str, int]:
    """Closed-form per-phase FLOPs of one fused forward pass for one sample."""
    scheme = canonical_scheme(scheme)
    _check_config(k, n, d, h)
    if scheme != "concat" and k < 2 and scheme != "early-self":
        raise ValueError(f"{scheme} requires at least two modalities")
    dh = d // h
    out = dict.fromkeys(PHASES, 0)
    if scheme == "concat":
        return out
    if scheme == "early-self":
        seq = k * n
        out["projections"] = 3 * 2 * seq * d * d
        out["scores"] = h * (2 * seq * seq * dh) + h * seq * seq
        out["softmax"] = 4 * h * seq * seq
        out["weighted-sum"] = h * 2 * seq * seq * dh
        out["concat/output"] = 2 * seq * d * d
        return out
    if scheme == "cross-pairwise":
        pairs = k * (k - 1)
        out["projections"] = 3 * k * 2 * n * d * d
        out["scores"] = pairs * (h * 2 * n * n * dh + h * n * n)
        out["softmax"] = pairs * 4 * h * n * n
        # per query modality: (n x (k-1)n) @ ((k-1)n x dh) per head
        out["weighted-sum"] = k * h * 2 * n * (k - 1) * n * dh
        out["concat/output"] = k * 2 * n * d * d
        return out
    # ovo
    out["projections"] = k * 2 * n * d * d
    out["averaging"] = (3 * (k - 2) + k) * n * d
    out["scores"] = k * h * (2 * n * dh * dh + 2 * n * n * dh)
    out["softmax"] = k * 4 * h * n * n
    out["weighted-sum"] = k * h * 2 * n * n * dh
    out["concat/output"] = k * 2 * n * d * d
    return out


def analytic_flops(scheme: str, k: int, n: int, d: int, h: int) -> int:
    """Exact integration-stage FLOPs for one sample."""
    return sum(analytic_breakdown(scheme, k, n, d, h).values())


def delta_flops(scheme: str, k: int, n: int, d: int, h: int) -> int:
    """Integration FLOPs relative to the concatenation baseline."""
    return analytic_flops(scheme, k, n, d, h) - analytic_flops("concat", k, n, d, h)


def leading_term(scheme: str) -> Tuple[int, int, int]:
    """Exponents ``(k, n, d)`` of the dominant complexity term."""
    scheme = canonical_scheme(scheme)
    if scheme not in _LEADING:
        raise ValueError(f"no attention complexity for scheme {scheme!r}")
    return _LEADING[scheme]


def format_leading_term(scheme: str) -> str:
    pk, pn, pd = leading_term(scheme)
    return f"O(k^{pk} * n^{pn} * d^{pd})"


def loglog_slope(ks: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of ``log(values)`` against ``log(ks)``."""
    x = np.log(np.asarray(ks, dtype=np.float64))
    y = np.log(np.asarray(values, dtype=np.float64))
    if x.size < 2:
        raise ValueError("need at least two points for a slope")
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def reduction(scheme_a: str, scheme_b: str, k: int, n: int, d: int, h: int) -> float:
    """Fractional ΔFLOPs saving of ``scheme_a`` over ``scheme_b``."""
    return 1.0 - delta_flops(scheme_a, k, n, d, h) / delta_flops(scheme_b, k, n, d, h)


def pair_multiplicity(k: int) -> int:
    return math.perm(k, 2)
