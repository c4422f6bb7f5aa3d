"""scikit-learn style estimators wrapping the sampler."""

from __future__ import annotations

import copy

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .dataset import relabel_groups, scale_outcome
from .genbart import DpmError, HComponent
from .model import PosteriorModel
from .priors import calibrate_binary, calibrate_continuous
from .sampler import MCMCConfig, run_mcmc

__all__ = ["BARTRegressor", "BARTClassifier"]


class _BaseBART(BaseEstimator):
    _binary = False

    def __init__(
        self,
        m=200,
        iters=1500,
        burn_in=100,
        thin=1,
        seed=0,
        n_min=5,
        alpha=0.95,
        beta=2.0,
        v=2.0,
        nu=3.0,
        quantile=0.9,
        move_probs=(0.25, 0.25, 0.40, 0.10),
        h_component=None,
    ):
        self.m = m
        self.iters = iters
        self.burn_in = burn_in
        self.thin = thin
        self.seed = seed
        self.n_min = n_min
        self.alpha = alpha
        self.beta = beta
        self.v = v
        self.nu = nu
        self.quantile = quantile
        self.move_probs = move_probs
        self.h_component = h_component

    def _config(self) -> MCMCConfig:
        return MCMCConfig(
            iters=self.iters, burn_in=self.burn_in, thin=self.thin, seed=self.seed,
            n_min=self.n_min,
        )

    def _groups_in(self, groups, n):
        if groups is None:
            return None, []
        groups = np.asarray(groups)
        if groups.shape != (n,):
            raise ValueError("groups must have one entry per row")
        return relabel_groups(groups)

    def _groups_for_predict(self, groups, n):
        if groups is None:
            return None
        index = {lab: k for k, lab in enumerate(self.model_.group_labels)}
        return np.array([index.get(str(g), -1) for g in np.asarray(groups).ravel()], dtype=np.int64)

    def _fit(self, X, y, W=None, groups=None):
        X, y = check_X_y(X, y, y_numeric=True)
        n = X.shape[0]
        if W is not None:
            W = check_array(W, ensure_2d=False)
            W = W.reshape(n, -1)
        codes, labels = self._groups_in(groups, n)
        config = self._config()
        overrides = dict(alpha=self.alpha, beta=self.beta, move_probs=tuple(self.move_probs))
        h = None
        if self.h_component is not None:
            if not isinstance(self.h_component, HComponent):
                raise TypeError("h_component must be an HComponent instance")
            h = copy.deepcopy(self.h_component)
        scaling = None
        if self._binary:
            work = y
            hp = calibrate_binary(m=self.m, v=self.v, **overrides)
        else:
            work, scaling = scale_outcome(y)
            hp = calibrate_continuous(
                work, X, m=self.m, v=self.v, nu=self.nu, quantile=self.quantile, **overrides
            )
            if isinstance(h, DpmError):
                h.calibrate(work, X)
        if h is not None:
            h.bind(n, W, codes)
        draws = run_mcmc(work, X, hp, config, binary=self._binary, h=h)
        offset = None
        if h is not None and h.error_model:
            offset = draws.h_train.mean(axis=1)
        self.model_ = PosteriorModel(
            forests=draws.forests,
            sigma2=draws.sigma2,
            hp=hp,
            binary=self._binary,
            scaling=scaling,
            seed=self.seed,
            n=n,
            p=X.shape[1],
            h_kind="none" if h is None else h.name,
            h_intercept=bool(getattr(h, "intercept", True)),
            theta=draws.theta,
            offset=offset,
            kept_iters=draws.kept_iters,
            group_labels=labels,
            proposed=draws.proposed,
            accepted=draws.accepted,
        )
        self.draws_ = draws
        self.hp_ = hp
        self.h_ = h
        self.n_features_in_ = X.shape[1]
        return self

    def _latent(self, X, W=None, groups=None):
        check_is_fitted(self, "model_")
        X = check_array(X)
        return X, W, self._groups_for_predict(groups, X.shape[0])

    @property
    def acceptance_rates_(self) -> dict[str, float]:
        check_is_fitted(self, "model_")
        return self.model_.acceptance_rates()


class BARTRegressor(RegressorMixin, _BaseBART):
    """Sum-of-trees regression fitted by MCMC.

    Parameters
    ----------
    m : int
        Number of trees.
    iters, burn_in, thin : int
        Total iterations, discarded initial iterations, and keep interval.
    seed : int
        Seed of the chain's generator; fits are reproducible bit for bit.
    n_min : int
        Minimum observations per leaf; proposals violating it are rejected.
    alpha, beta : float
        Tree prior: a node at depth ``d`` splits with probability
        ``alpha / (1 + d)**beta``.
    v : float
        Leaf prior scale multiplier; larger values shrink harder.
    nu, quantile : float
        Noise prior degrees of freedom and the prior probability that the noise
        variance is below the least-squares residual variance.
    move_probs : tuple of 4 floats
        Probabilities of grow, prune, change and swap proposals.
    h_component : HComponent, optional
        Additive component ``H(W, theta)`` or a mixture error model. It is
        copied at fit time, so one instance can configure several fits.

    Attributes
    ----------
    model_ : PosteriorModel
        Kept draws; use it for serialization.
    draws_ : PosteriorDraws
        Raw sampler output, including the full noise-variance trace.
    hp_ : Hyperparams
        Calibrated priors (on the scaled outcome).

    Examples
    --------
    >>> from sumtrees import BARTRegressor, simulate_friedman_like
    >>> data = simulate_friedman_like(200, seed=1)
    >>> est = BARTRegressor(m=20, iters=200, burn_in=50).fit(data.x, data.y)
    >>> est.predict(data.x[:3]).shape
    (3,)
    """

    def fit(self, X, y, W=None, groups=None):
        return self._fit(X, y, W, groups)

    def predict(self, X, W=None, groups=None):
        """Posterior mean of the regression function."""
        X, W, g = self._latent(X, W, groups)
        return self.model_.predict(X, W, g)

    def predict_draws(self, X, W=None, groups=None):
        """Posterior draws of the regression function, shape (n_draws, n)."""
        X, W, g = self._latent(X, W, groups)
        return self.model_.mean_draws(X, W, g)

    def predict_interval(self, X, W=None, groups=None, level=0.95, kind="credible"):
        """Posterior mean with an equal-tailed interval.

        Returns ``(mean, lower, upper)``. ``kind="prediction"`` widens the
        interval to cover a new observation.
        """
        X, W, g = self._latent(X, W, groups)
        return self.model_.interval(X, W, g, level=level, kind=kind)

    @property
    def sigma2_(self) -> np.ndarray:
        """Kept noise variances on the outcome scale."""
        check_is_fitted(self, "model_")
        return self.model_.sigma2_original()


class BARTClassifier(ClassifierMixin, _BaseBART):
    """Probit sum-of-trees classifier for 0/1 outcomes.

    Takes the same parameters as :class:`BARTRegressor`; ``nu`` and
    ``quantile`` are unused because the latent noise variance is fixed at one.
    """

    _binary = True

    def fit(self, X, y, W=None, groups=None):
        y = np.asarray(y)
        values = np.unique(y)
        if not np.isin(values, (0, 1)).all():
            bad = values[~np.isin(values, (0, 1))][0]
            raise ValueError(f"non-binary outcome value {bad}")
        self.classes_ = np.array([0, 1])
        return self._fit(X, y.astype(float), W, groups)

    def predict_proba(self, X, W=None, groups=None):
        """Posterior mean of ``Phi(G + H)``; columns are classes 0 and 1."""
        X, W, g = self._latent(X, W, groups)
        p1 = self.model_.predict(X, W, g)
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X, W=None, groups=None):
        return (self.predict_proba(X, W, groups)[:, 1] > 0.5).astype(int)

    def decision_function(self, X, W=None, groups=None):
        """Posterior mean of the latent index ``G + H``."""
        X, W, g = self._latent(X, W, groups)
        return self.model_.latent_draws(X, W, g).mean(axis=0)
