"""Hyperparameter calibration and prior densities for trees, leaves and noise."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, replace

import numpy as np

from .special import chi2_quantile
from .tree import LEAF, Tree

__all__ = [
    "MOVES",
    "Hyperparams",
    "cut_counts",
    "cut_candidates",
    "p_split",
    "log_tree_prior",
    "log_tree_structure_ratio",
    "ols_residuals",
    "calibrate_lambda",
    "calibrate_continuous",
    "calibrate_binary",
    "CalibrationError",
]

MOVES = ("grow", "prune", "change", "swap")


class CalibrationError(ArithmeticError):
    pass


@dataclass
class Hyperparams:
    """Prior settings for one BART fit.

    ``lam`` is the noise-prior scale (``sigma^2 ~ nu*lam/chi2_nu``); it is
    ``None`` for binary outcomes where the noise variance is fixed at one.
    """

    alpha: float = 0.95
    beta: float = 2.0
    mu_mu: float = 0.0
    sigma_mu: float = 0.5 / (2.0 * math.sqrt(200))
    nu: float = 3.0
    lam: float | None = None
    v: float = 2.0
    m: int = 200
    move_probs: tuple[float, float, float, float] = (0.25, 0.25, 0.40, 0.10)

    def __post_init__(self) -> None:
        self.move_probs = tuple(float(p) for p in self.move_probs)
        if len(self.move_probs) != 4 or min(self.move_probs) < 0:
            raise ValueError(f"move_probs must be 4 non-negative numbers, got {self.move_probs}")
        # all zeros freezes the tree structures
        total = sum(self.move_probs)
        if total != 0 and abs(total - 1.0) > 1e-9:
            raise ValueError(f"move_probs must sum to 1, got {total}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.sigma_mu <= 0:
            raise ValueError("sigma_mu must be positive")
        if self.nu <= 0 or self.v <= 0:
            raise ValueError("nu and v must be positive")
        if self.lam is not None and self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.m < 1:
            raise ValueError("m must be at least 1")

    def replace(self, **changes) -> "Hyperparams":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return asdict(self)


def p_split(depth: int, hp: Hyperparams) -> float:
    """Prior probability that a node at ``depth`` is internal."""
    return hp.alpha / (1.0 + depth) ** hp.beta


def cut_counts(X_rows: np.ndarray) -> np.ndarray:
    """Available cutpoints per covariate in a node: distinct values minus one."""
    X_rows = np.asarray(X_rows, dtype=float)
    if X_rows.shape[0] < 2:
        return np.zeros(X_rows.shape[1], dtype=np.int64)
    return np.count_nonzero(np.diff(np.sort(X_rows, axis=0), axis=0), axis=0)


def cut_candidates(column: np.ndarray) -> np.ndarray:
    """Midpoints between consecutive distinct values of one covariate in a node.

    Each candidate sends at least one observation to each side under the
    ``x < cut`` rule.
    """
    u = np.unique(column)
    mid = 0.5 * u[:-1] + 0.5 * u[1:]
    # adjacent floats can round the midpoint down onto the lower value
    return np.where(mid > u[:-1], mid, u[1:])


def _rule_log_prob(X_rows: np.ndarray, var: int) -> float:
    eta = cut_counts(X_rows)
    p_avail = int(np.count_nonzero(eta))
    if eta[var] == 0:
        raise ValueError(f"split on covariate {var} has no available cutpoints")
    return -math.log(p_avail) - math.log(eta[var])


def log_tree_prior(
    tree: Tree, X: np.ndarray, hp: Hyperparams, start: int = 0, rows: np.ndarray | None = None
) -> float:
    """Log prior probability of a tree structure given the training covariates.

    Internal nodes contribute ``log p_split(d) + log P_rule`` and leaves
    ``log(1 - p_split(d))``, with the rule chosen uniformly over available
    covariates and then uniformly over that covariate's available cuts. A rule is
    identified with the partition it induces on the node's observations, so any
    cut strictly inside the node's range counts as the matching candidate.
    ``start`` and ``rows`` restrict the sum to one subtree and its observations.
    """
    X = np.asarray(X, dtype=float)
    if rows is None:
        rows = np.arange(X.shape[0])
    total = 0.0
    stack = [(start, rows)]
    while stack:
        k, r = stack.pop()
        d = tree.depth[k]
        ps = p_split(d, hp)
        if tree.var[k] == LEAF:
            total += math.log1p(-ps)
            continue
        v, c = tree.var[k], tree.cut[k]
        xr = X[r]
        total += math.log(ps) + _rule_log_prob(xr, v)
        go_left = xr[:, v] < c
        if go_left.all() or not go_left.any():
            raise ValueError(f"rule at node {k} leaves an empty child")
        stack.append((tree.left[k], r[go_left]))
        stack.append((tree.right[k], r[~go_left]))
    return total


def log_tree_structure_ratio(depth: int, p_avail: int, eta: int, hp: Hyperparams) -> float:
    """Log prior ratio of growing a leaf at ``depth`` versus leaving it terminal."""
    a, b = hp.alpha, hp.beta
    return (
        math.log(a)
        + 2.0 * math.log1p(-a / (2.0 + depth) ** b)
        - math.log((1.0 + depth) ** b - a)
        - math.log(p_avail)
        - math.log(eta)
    )


def ols_residuals(y: np.ndarray, X: np.ndarray) -> tuple[np.ndarray, int]:
    """Residuals of least squares with an intercept, and the design rank."""
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    A = np.column_stack([np.ones(len(y)), X])
    coef, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    return y - A @ coef, int(rank)


def _residual_variance(y: np.ndarray, X: np.ndarray) -> float:
    n, p = X.shape
    resid, rank = ols_residuals(y, X)
    if n <= p + 1 or rank < p + 1:
        warnings.warn(
            "least-squares fit unavailable (rank deficient or n <= p); "
            "using the sample variance of the outcome",
            RuntimeWarning,
            stacklevel=3,
        )
        return float(np.var(y, ddof=1))
    return float(resid @ resid / (n - rank))


def calibrate_lambda(s2: float, nu: float, quantile: float = 0.9) -> float:
    """Scale ``lam`` such that ``P(sigma^2 < s2) = quantile`` when
    ``sigma^2 ~ nu * lam / chi2_nu``."""
    if not s2 > 0 or not math.isfinite(s2):
        raise CalibrationError("degenerate residual variance")
    return s2 * chi2_quantile(1.0 - quantile, nu) / nu


def calibrate_continuous(
    y_scaled: np.ndarray,
    X: np.ndarray,
    m: int = 200,
    v: float = 2.0,
    nu: float = 3.0,
    quantile: float = 0.9,
    **overrides,
) -> Hyperparams:
    """Data-driven priors for a continuous outcome already mapped to [-0.5, 0.5]."""
    y_scaled = np.asarray(y_scaled, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    s2 = _residual_variance(y_scaled, X)
    if s2 <= 1e-12 * max(float(np.var(y_scaled)), np.finfo(float).tiny):
        raise CalibrationError("degenerate residual variance")
    lam = calibrate_lambda(s2, nu, quantile)
    hp = Hyperparams(mu_mu=0.0, sigma_mu=0.5 / (v * math.sqrt(m)), nu=nu, lam=lam, v=v, m=m)
    return hp.replace(**overrides) if overrides else hp


def calibrate_binary(m: int = 200, v: float = 2.0, **overrides) -> Hyperparams:
    if v <= 0:
        raise ValueError("v must be positive")
    if m < 1:
        raise ValueError("m must be at least 1")
    hp = Hyperparams(mu_mu=0.0, sigma_mu=3.0 / (v * math.sqrt(m)), lam=None, v=v, m=m)
    return hp.replace(**overrides) if overrides else hp
