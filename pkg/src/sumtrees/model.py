"""A fitted model: kept posterior draws plus everything needed to predict."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .dataset import ScalingRecord
from .genbart import evaluate_h
from .priors import MOVES, Hyperparams
from .tree import PackedForest

__all__ = ["PosteriorModel"]


@dataclass
class PosteriorModel:
    """Kept draws of one chain.

    Forest values, ``sigma2`` and ``theta`` are on the working scale: the scaled
    outcome for continuous fits (see ``scaling``) and the probit latent scale for
    binary fits. ``offset`` holds, per draw, the mean error location of a
    mixture error model and is zero otherwise.
    """

    forests: list[PackedForest]
    sigma2: np.ndarray
    hp: Hyperparams
    binary: bool = False
    scaling: ScalingRecord | None = None
    seed: int = 0
    n: int = 0
    p: int = 0
    h_kind: str = "none"
    h_intercept: bool = True
    theta: np.ndarray | None = None
    offset: np.ndarray | None = None
    kept_iters: np.ndarray | None = None
    x_names: list[str] = field(default_factory=list)
    w_names: list[str] = field(default_factory=list)
    group_labels: list[str] = field(default_factory=list)
    proposed: dict[str, int] = field(default_factory=lambda: dict.fromkeys(MOVES, 0))
    accepted: dict[str, int] = field(default_factory=lambda: dict.fromkeys(MOVES, 0))
    settings: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.sigma2 = np.asarray(self.sigma2, dtype=float)
        if len(self.forests) != self.sigma2.size:
            raise ValueError("one sigma2 value per kept forest is required")
        if self.offset is None:
            self.offset = np.zeros(self.sigma2.size)
        if self.kept_iters is None:
            self.kept_iters = np.arange(self.sigma2.size)

    @property
    def n_draws(self) -> int:
        return len(self.forests)

    @property
    def m(self) -> int:
        return self.forests[0].m if self.forests else self.hp.m

    def acceptance_rates(self) -> dict[str, float]:
        return {
            k: self.accepted[k] / self.proposed[k] if self.proposed.get(k) else float("nan")
            for k in MOVES
        }

    def _check_x(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.p and X.shape[1] != self.p:
            raise ValueError(f"expected {self.p} BART covariates, got {X.shape[1]}")
        return X

    def latent_draws(self, X, W=None, groups=None) -> np.ndarray:
        """``G + H + offset`` per draw and row on the working scale, shape (draws, n)."""
        X = self._check_x(X)
        n = X.shape[0]
        out = np.empty((self.n_draws, n))
        for d, forest in enumerate(self.forests):
            out[d] = forest.predict(X) + self.offset[d]
            if self.h_kind not in ("none", "dpm"):
                out[d] += evaluate_h(self.h_kind, self.theta[d], n, W, groups, self.h_intercept)
        return out

    def mean_draws(self, X, W=None, groups=None) -> np.ndarray:
        """Posterior draws of the regression function on the outcome scale.

        Binary fits return success probabilities ``Phi(G + H)``.
        """
        lat = self.latent_draws(X, W, groups)
        if self.binary:
            return ndtr(lat)
        return self.scaling.unscale(lat) if self.scaling is not None else lat

    def predictive_draws(self, X, W=None, groups=None, rng=None) -> np.ndarray:
        """Draws of a new outcome at each row (continuous fits only)."""
        if self.binary:
            raise ValueError("predictive draws are defined for continuous outcomes")
        rng = np.random.default_rng(self.seed) if rng is None else rng
        lat = self.latent_draws(X, W, groups)
        lat += np.sqrt(self.sigma2)[:, None] * rng.standard_normal(lat.shape)
        return self.scaling.unscale(lat) if self.scaling is not None else lat

    def predict(self, X, W=None, groups=None) -> np.ndarray:
        return self.mean_draws(X, W, groups).mean(axis=0)

    def interval(self, X, W=None, groups=None, level: float = 0.95, kind: str = "credible",
                 rng=None):
        """Posterior mean and equal-tailed empirical percentile interval.

        ``kind="credible"`` covers the regression function, ``"prediction"`` a
        new observation.
        """
        if not 0.0 < level < 1.0:
            raise ValueError("level must lie in (0, 1)")
        if kind == "credible":
            draws = self.mean_draws(X, W, groups)
        elif kind == "prediction":
            draws = self.predictive_draws(X, W, groups, rng)
        else:
            raise ValueError(f"unknown interval kind {kind!r}")
        tail = 50.0 * (1.0 - level)
        lo, hi = np.percentile(draws, [tail, 100.0 - tail], axis=0)
        mean = self.mean_draws(X, W, groups).mean(axis=0) if kind == "prediction" else draws.mean(axis=0)
        # percentiles and the mean can disagree in the last bit for flat draws
        return mean, np.minimum(lo, mean), np.maximum(hi, mean)

    def sigma2_original(self) -> np.ndarray:
        """Kept noise variances on the outcome scale."""
        if self.scaling is None:
            return self.sigma2.copy()
        return self.scaling.unscale_variance(self.sigma2)
