import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from blfrb.estimators import BLFRBRegressor, MMRegressor


@pytest.fixture(scope="module")
def xy():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(3000, 3))
    y = 2.0 + X @ np.array([1.0, -1.0, 0.0]) + 0.3 * rng.normal(size=3000)
    y[:150] += 200.0
    return X, y


def test_params_and_clone():
    est = BLFRBRegressor(gamma=0.8, n_replicas=7)
    assert est.get_params()["gamma"] == 0.8
    twin = clone(est)
    assert twin.get_params() == est.get_params() and twin is not est


def test_mm_regressor_ignores_outliers(xy):
    X, y = xy
    est = MMRegressor(n_candidates=100).fit(X, y)
    assert est.intercept_ == pytest.approx(2.0, abs=0.05)
    np.testing.assert_allclose(est.coef_, [1.0, -1.0, 0.0], atol=0.05)
    assert est.scale_ == pytest.approx(0.3, rel=0.2)
    assert est.predict(X[:5]).shape == (5,)


def test_predict_before_fit():
    with pytest.raises(NotFittedError):
        MMRegressor().predict(np.zeros((2, 3)))


def test_predict_checks_width(xy):
    X, y = xy
    est = MMRegressor(n_candidates=50).fit(X, y)
    with pytest.raises(ValueError):
        est.predict(np.zeros((2, 4)))


def test_blfrb_regressor(xy):
    X, y = xy
    est = BLFRBRegressor(n_replicas=30).fit(X, y)
    assert est.coef_.shape == (3,) and est.sd_.shape == (4,) and est.ci_.shape == (4, 2)
    np.testing.assert_allclose(est.coef_, [1.0, -1.0, 0.0], atol=0.1)
    # intercept first, then the three slopes; the last slope is truly zero
    assert est.reject_.tolist()[:3] == [True, True, True]
    assert np.all(est.ci_[:, 0] < est.ci_[:, 1])
    assert est.score(X[150:], y[150:]) > 0.9


def test_no_intercept(xy):
    X, y = xy
    est = MMRegressor(fit_intercept=False, n_candidates=50).fit(np.column_stack([np.ones(len(y)), X]), y)
    assert est.intercept_ == 0.0 and est.coef_[0] == pytest.approx(2.0, abs=0.05)
