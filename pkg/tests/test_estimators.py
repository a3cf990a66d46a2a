import numpy as np
import pytest
from sklearn.base import clone

from remixit.estimators import MixITEnhancer, RemixITEnhancer, SupervisedEnhancer, check_waveforms
from remixit.exceptions import SignalError
from helpers import toy_corpus

KW = dict(depth=1, hidden_dim=8, fft_size=64, hop=16, epochs=2, batch_size=2)


@pytest.fixture(scope="module")
def data():
    c = toy_corpus(8, T=256)
    return c.mixtures, c.speech, c.noise


def test_params_and_clone():
    est = SupervisedEnhancer(**KW)
    params = est.get_params()
    assert params["hidden_dim"] == 8 and params["random_state"] == 0
    twin = clone(est)
    assert twin.get_params() == params
    assert "teacher" in RemixITEnhancer().get_params()


def test_supervised_fit_transform_score(data):
    X, s, _ = data
    est = SupervisedEnhancer(**KW).fit(X, s)
    out = est.transform(X)
    assert out.shape == X.shape
    np.testing.assert_array_equal(est.predict(X), out)
    assert np.isfinite(est.score(X, s))
    assert est.separate(X).shape == (2, *X.shape)


def test_mixit_and_remixit(data):
    X, s, n = data
    mixit = MixITEnhancer(**KW).fit(X[:6], n[6:])
    assert mixit.separate(X).shape == (3, *X.shape)
    student = RemixITEnhancer(teacher=mixit, protocol="static", **KW).fit(X)
    assert student.transform(X).shape == X.shape
    adapted = RemixITEnhancer(teacher=SupervisedEnhancer(**KW).fit(X, s), warm_start=True, **KW).fit(X)
    assert adapted.params_.arch.depth == 1


def test_validation(data):
    X, s, _ = data
    with pytest.raises(SignalError):
        check_waveforms(np.zeros(5))
    with pytest.raises(SignalError):
        SupervisedEnhancer(**KW).fit(X, s[:, :10])
    with pytest.raises(ValueError, match="pretrained teacher"):
        RemixITEnhancer(**KW).fit(X)
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        SupervisedEnhancer().transform(X)
