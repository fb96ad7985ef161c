import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from ovofusion.estimator import MultimodalFusionClassifier
from ovofusion.simdata import SimConfig, generate


@pytest.fixture(scope="module")
def data():
    d = generate(SimConfig(k=3, vec_len=4, samples=300, seed=2))
    return d.X, np.where(d.y == 1, "low", "sum")


def make(**kw):
    params = dict(n_modalities=3, n_tokens=2, d_model=4, n_heads=2, learning_rate=1e-2, max_epochs=30)
    params.update(kw)
    return MultimodalFusionClassifier(**params)


def test_params_and_clone():
    est = make(scheme="cross")
    assert est.get_params()["scheme"] == "cross"
    twin = clone(est).set_params(n_heads=1)
    assert twin.n_heads == 1 and est.n_heads == 2


def test_fit_predict_3d(data):
    X, y = data
    est = make().fit(X, y)
    assert set(est.classes_) == {"low", "sum"}
    assert est.predict(X).shape == (300,)
    proba = est.predict_proba(X)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert est.score(X, y) > 0.75


def test_flat_input_and_transform(data):
    X, y = data
    flat = X.reshape(len(X), -1)
    est = make(scheme="concat", max_epochs=3).fit(flat, y)
    assert est.transform(flat).shape == (300, 3 * 2 * 4)
    np.testing.assert_array_equal(est.predict(flat), est.predict(X))


def test_pipeline(data):
    X, y = data
    pipe = make_pipeline(StandardScaler(), make(max_epochs=5))
    pipe.fit(X.reshape(len(X), -1), y)
    assert pipe.predict(X.reshape(len(X), -1)[:7]).shape == (7,)


def test_errors(data):
    X, y = data
    with pytest.raises(NotFittedError):
        make().predict(X)
    with pytest.raises(ValueError):
        make(n_modalities=5).fit(X.reshape(len(X), -1)[:, :-1], y)
    est = make(max_epochs=1).fit(X, y)
    with pytest.raises(ValueError):
        est.predict(X[:, :, :3])
    with pytest.raises(ValueError):
        make().fit(X, np.zeros(len(X)))


def test_reproducible(data):
    X, y = data
    a = make(max_epochs=3, random_state=5).fit(X, y).predict_proba(X)
    b = make(max_epochs=3, random_state=5).fit(X, y).predict_proba(X)
    np.testing.assert_array_equal(a, b)
