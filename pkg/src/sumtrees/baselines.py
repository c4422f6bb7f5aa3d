"""Linear-regression comparison model for the synthetic benchmark."""

from __future__ import annotations

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y


class BayesLinearRegression(RegressorMixin, BaseEstimator):
    """Bayesian linear regression with an intercept under the reference prior.

    With ``p(beta, sigma^2) ∝ 1/sigma^2`` the posterior mean of the coefficients
    is the least-squares estimate and the posterior predictive of a new
    observation is Student-t with ``n - k`` degrees of freedom, so the fit is
    exact and needs no sampling.
    """

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        A = np.column_stack([np.ones(len(y)), X])
        n, k = A.shape
        if n <= k:
            raise ValueError(f"need more rows than coefficients ({n} <= {k})")
        coef, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
        if rank < k:
            raise ValueError("design matrix is rank deficient")
        resid = y - A @ coef
        self.df_ = n - k
        self.s2_ = float(resid @ resid / self.df_)
        self.coef_ = coef[1:]
        self.intercept_ = float(coef[0])
        self._xtx_inv = np.linalg.inv(A.T @ A)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return self.intercept_ + X @ self.coef_

    def predict_interval(self, X, level: float = 0.95, kind: str = "prediction"):
        """Equal-tailed posterior interval for the mean (``"credible"``) or a new draw."""
        check_is_fitted(self, "coef_")
        X = check_array(X)
        A = np.column_stack([np.ones(X.shape[0]), X])
        lev = np.einsum("ij,jk,ik->i", A, self._xtx_inv, A)
        if kind == "prediction":
            lev = lev + 1.0
        elif kind != "credible":
            raise ValueError(f"unknown interval kind {kind!r}")
        half = stats.t.ppf(0.5 + level / 2, self.df_) * np.sqrt(self.s2_ * lev)
        mean = self.predict(X)
        return mean - half, mean + half
