"""scikit-learn style wrappers around the MM fit and the bag bootstrap."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .dataset import Dataset
from .engine import BLFRBConfig, run
from .inference import ci_and_test
from .robust_fit import FitConfig, fit_mm


class _LinearMixin:
    def _design(self, X, y=None):
        if y is None:
            X = check_array(X, dtype=np.float64)
            return X
        return Dataset.from_arrays(X, y, intercept=self.fit_intercept)

    def _store(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.fit_intercept:
            self.intercept_, self.coef_ = float(theta[0]), theta[1:].copy()
        else:
            self.intercept_, self.coef_ = 0.0, theta.copy()
        self.n_features_in_ = self.coef_.shape[0]

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = self._design(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ self.coef_ + self.intercept_


class MMRegressor(_LinearMixin, RegressorMixin, BaseEstimator):
    """Tukey-biweight MM regression with an S-estimate of scale."""

    def __init__(self, fit_intercept=True, n_candidates=500, random_state=0):
        self.fit_intercept = fit_intercept
        self.n_candidates = n_candidates
        self.random_state = random_state

    def fit(self, X, y, sample_weight=None):
        data = self._design(X, y)
        fit = fit_mm(data, sample_weight, config=FitConfig(n_candidates=self.n_candidates),
                     seed=self.random_state)
        self._store(fit.theta_mm)
        self.scale_ = fit.sigma
        self.fit_ = fit
        return self


class BLFRBRegressor(_LinearMixin, RegressorMixin, BaseEstimator):
    """Point estimate plus bootstrap uncertainty from disjoint bags.

    ``coef_``/``intercept_`` are the average of the per-bag fits; ``sd_``,
    ``ci_`` (shape (p, 2)) and ``reject_`` describe each coefficient, the
    intercept first when ``fit_intercept`` is set.
    """

    def __init__(self, gamma=0.7, n_bags=None, n_replicas=100, alpha=0.05,
                 method="BLFRB-MM", fit_intercept=True, n_jobs=1, random_state=0):
        self.gamma = gamma
        self.n_bags = n_bags
        self.n_replicas = n_replicas
        self.alpha = alpha
        self.method = method
        self.fit_intercept = fit_intercept
        self.n_jobs = n_jobs
        self.random_state = random_state

    def fit(self, X, y):
        data = self._design(X, y)
        config = BLFRBConfig(gamma=self.gamma, n_bags=self.n_bags, r=self.n_replicas,
                             alpha=self.alpha, method=self.method, threads=self.n_jobs,
                             seed=self.random_state)
        result = run(data, config)
        agg = result.aggregate
        self._store(agg.center)
        self.sd_ = agg.sd
        self.ci_ = np.column_stack([agg.ci_lower, agg.ci_upper])
        self.reject_ = ci_and_test(agg)
        self.result_ = result
        return self
