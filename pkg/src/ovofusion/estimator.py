"""scikit-learn style wrapper around :class:`FusionModel` and :func:`fit`."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.model_selection import train_test_split
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .fusion import FusionConfig, FusionModel
from .simdata import SimDataset
from .train import TrainConfig, fit


class MultimodalFusionClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Attention-fusion classifier over ``n_modalities`` equal-width inputs.

    ``X`` is either ``(samples, n_modalities, features)`` or the flattened
    ``(samples, n_modalities * features)``. ``transform`` returns the fused
    representation that feeds the linear head.

    Parameters
    ----------
    scheme : {"ovo", "cross-pairwise", "early-self", "concat"}
    n_modalities : int
    n_tokens, d_model, n_heads : int
        Token count and width of each modality embedding; ``d_model`` must be
        divisible by ``n_heads``.
    validation_fraction : float
        Held out (stratified) from ``fit`` data for early stopping.
    """

    def __init__(self, scheme="ovo", n_modalities=2, n_tokens=2, d_model=8, n_heads=1,
                 learning_rate=1e-3, batch_size=32, max_epochs=200, patience=5,
                 validation_fraction=0.1, random_state=0):
        self.scheme = scheme
        self.n_modalities = n_modalities
        self.n_tokens = n_tokens
        self.d_model = d_model
        self.n_heads = n_heads
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _as_modalities(self, X, n_features=None):
        X = np.asarray(X, dtype=np.float64)
        k = self.n_modalities
        if X.ndim == 3:
            if X.shape[1] != k:
                raise ValueError(f"expected {k} modalities, got {X.shape[1]}")
            out = X
        elif X.ndim == 2:
            if X.shape[1] % k:
                raise ValueError(f"{X.shape[1]} features do not split into {k} equal modalities")
            out = X.reshape(len(X), k, X.shape[1] // k)
        else:
            raise ValueError(f"X must be 2-D or 3-D, got shape {X.shape}")
        if n_features is not None and out.shape[2] != n_features:
            raise ValueError(f"expected {n_features} features per modality, got {out.shape[2]}")
        return out

    def fit(self, X, y):
        X, y = check_X_y(X, y, allow_nd=True)
        X = self._as_modalities(X)
        self.classes_ = unique_labels(y)
        if len(self.classes_) < 2:
            raise ValueError("need samples of at least two classes")
        codes = np.searchsorted(self.classes_, y)
        self.n_features_per_modality_ = X.shape[2]
        X_tr, X_val, y_tr, y_val = train_test_split(
            X, codes, test_size=self.validation_fraction, stratify=codes, random_state=self.random_state)
        config = FusionConfig(scheme=self.scheme, k=self.n_modalities, raw_dim=X.shape[2], n=self.n_tokens,
                              d=self.d_model, h=self.n_heads, classes=len(self.classes_))
        cfg = TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                          max_epochs=self.max_epochs, patience=self.patience, seed=self.random_state)
        self.model_ = FusionModel.from_seed(config, self.random_state)
        self.result_ = fit(self.model_, SimDataset(X_tr, y_tr), SimDataset(X_val, y_val), cfg)
        return self

    def _check(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, allow_nd=True)
        return self._as_modalities(X, self.n_features_per_modality_)

    def predict_proba(self, X):
        X = self._check(X)
        return self.model_.predict_proba(X)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    def transform(self, X):
        X = self._check(X)
        return self.model_.fuse(self.model_.encode(X)).value
