"""End-to-end fusion classifiers: encoders -> integration -> linear head.

The four schemes share encoder and classifier shapes and initialisation, so
they differ only in the integration stage.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass
from typing import Dict, List, Tuple

import numpy as np

from . import autograd as ag
from .attention import MultiHeadParams, cross_attention_fused, ovo_layer, self_attention_fused
from .autograd import Parameter, Tensor
from .flops import FlopCounter, canonical_scheme

CHECKPOINT_FORMAT = "ovofusion-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class FusionConfig:
    scheme: str = "ovo"
    k: int = 2
    raw_dim: int = 20
    n: int = 2
    d: int = 8
    h: int = 1
    classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "scheme", canonical_scheme(self.scheme))
        if min(self.k, self.raw_dim, self.n, self.d, self.h) < 1:
            raise ValueError(f"all sizes must be positive: {self}")
        if self.classes < 2:
            raise ValueError("need at least two classes")
        if self.d % self.h:
            raise ValueError(f"d={self.d} is not divisible by h={self.h}")
        if self.scheme in ("cross-pairwise", "ovo") and self.k < 2:
            raise ValueError(f"{self.scheme} requires at least two modalities")

    @property
    def fused_width(self) -> int:
        return self.k * self.n * self.d


def _uniform(rng: np.random.Generator, fan_in: int, shape: Tuple[int, ...]) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_parameters(config: FusionConfig, seed: int) -> Dict[str, np.ndarray]:
    """Initial weights, uniform in ``±1/sqrt(fan_in)``; biases start at zero.

    Encoder and classifier draw from one child stream and integration weights
    from another, so models built from the same seed share everything outside
    the integration stage.
    """
    shared_seq, integration_seq = np.random.SeedSequence(seed).spawn(2)
    shared = np.random.default_rng(shared_seq)
    rng = np.random.default_rng(integration_seq)
    k, raw, n, d, h = config.k, config.raw_dim, config.n, config.d, config.h
    params = {
        "encoder.weight": _uniform(shared, raw, (k, raw, n * d)),
        "encoder.bias": np.zeros((k, 1, n * d)),
        "classifier.weight": _uniform(shared, config.fused_width, (config.fused_width, config.classes)),
        "classifier.bias": np.zeros(config.classes),
    }
    if config.scheme in ("early-self", "cross-pairwise"):
        for name in ("query", "key", "value", "output"):
            params[f"attention.{name}"] = _uniform(rng, d, (d, d))
    elif config.scheme == "ovo":
        dh = d // h
        params["ovo.modality_proj"] = _uniform(rng, d, (k, d, d))
        params["ovo.bilinear"] = _uniform(rng, dh, (h, dh, dh))
        params["ovo.output"] = _uniform(rng, d, (d, d))
    return params


class FusionModel:
    """Parameters plus the forward computation for one :class:`FusionConfig`."""

    def __init__(self, config: FusionConfig, params: Dict[str, np.ndarray]):
        self.config = config
        self.params: Dict[str, Parameter] = {name: Parameter(value, name) for name, value in params.items()}

    @classmethod
    def from_seed(cls, config: FusionConfig, seed: int = 0) -> "FusionModel":
        return cls(config, init_parameters(config, seed))

    def parameters(self) -> List[Parameter]:
        return list(self.params.values())

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for name, value in state.items():
            if self.params[name].shape != np.shape(value):
                raise ValueError(f"shape mismatch for {name}: {self.params[name].shape} vs {np.shape(value)}")
            self.params[name].value[...] = value

    def attention_params(self) -> MultiHeadParams:
        p, h = self.params, self.config.h
        if self.config.scheme == "ovo":
            return MultiHeadParams(h, output=p["ovo.output"], modality_proj=p["ovo.modality_proj"],
                                   bilinear=p["ovo.bilinear"])
        return MultiHeadParams(h, output=p["attention.output"], query=p["attention.query"],
                               key=p["attention.key"], value=p["attention.value"])

    # -- forward -------------------------------------------------------------

    def _check_raw(self, raw) -> np.ndarray:
        x = np.asarray(raw, dtype=np.float64)
        cfg = self.config
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[1:] != (cfg.k, cfg.raw_dim):
            raise ValueError(f"expected samples of {cfg.k} modalities x {cfg.raw_dim} features, got {np.shape(raw)}")
        return x

    def encode(self, raw, counter: FlopCounter | None = None) -> Tensor:
        """Raw ``(batch, k, raw_dim)`` features to embeddings ``(batch, k, n, d)``."""
        x = self._check_raw(raw)
        cfg = self.config
        tokens = ag.matmul(x[:, :, None, :], self.params["encoder.weight"], counter)
        tokens = ag.add(tokens, self.params["encoder.bias"], counter)
        return ag.reshape(tokens, (x.shape[0], cfg.k, cfg.n, cfg.d))

    def fuse(self, embeddings, counter: FlopCounter | None = None) -> Tensor:
        """Integration stage; returns the flat ``(batch, k*n*d)`` classifier input."""
        e = ag.lift(embeddings)
        batch = e.shape[0]
        scheme = self.config.scheme
        if scheme == "concat":
            fused = e
        elif scheme == "early-self":
            fused = self_attention_fused(e, self.attention_params(), counter)
        elif scheme == "cross-pairwise":
            fused = cross_attention_fused(e, self.attention_params(), counter)
        else:
            fused = ovo_layer(e, self.attention_params(), counter)
        return ag.reshape(fused, (batch, self.config.fused_width))

    def forward(self, raw, counter: FlopCounter | None = None) -> Tensor:
        """Logits ``(batch, classes)``."""
        fused = self.fuse(self.encode(raw, counter), counter)
        logits = ag.matmul(fused, self.params["classifier.weight"], counter)
        return ag.add(logits, self.params["classifier.bias"], counter)

    def predict_proba(self, raw) -> np.ndarray:
        z = self.forward(raw).value
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, raw) -> np.ndarray:
        return np.argmax(self.forward(raw).value, axis=1)

    def loss(self, raw, labels, counter: FlopCounter | None = None) -> Tensor:
        return ag.cross_entropy(self.forward(raw, counter), labels)

    def integration_flops(self) -> Dict[str, int]:
        """Instrumented per-phase FLOPs of :meth:`fuse` on one sample."""
        counter = FlopCounter()
        embeddings = np.zeros((1, self.config.k, self.config.n, self.config.d))
        self.fuse(embeddings, counter)
        return counter.as_dict()

    def integration_parameter_names(self) -> List[str]:
        return [name for name in self.params if not name.startswith(("encoder.", "classifier."))]


def grad_check(model: FusionModel, raw, labels, eps: float = 1e-5) -> Tuple[float, str]:
    """Max relative autograd-vs-central-difference error over all parameters."""
    return ag.check_gradients(lambda: model.loss(raw, labels), model.parameters(), eps)


# -- checkpoints ---------------------------------------------------------------


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(model: FusionModel, path) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "parameters": [
            {"name": name, "shape": list(p.shape), "data": p.value.reshape(-1).tolist()}
            for name, p in model.params.items()
        ],
    }
    atomic_write_text(path, json.dumps(payload))


def load_checkpoint(path) -> FusionModel:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not an ovofusion checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    config = FusionConfig(**payload["config"])
    params = {
        entry["name"]: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for entry in payload["parameters"]
    }
    expected = set(init_parameters(config, 0))
    if set(params) != expected:
        raise ValueError(f"checkpoint parameters {sorted(params)} do not match config {sorted(expected)}")
    return FusionModel(config, params)

