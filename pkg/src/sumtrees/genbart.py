"""Additive components ``H(W, theta)`` for the model ``Y = G(X) + H(W, theta) + e``.

The tree sampler only ever sees ``Y - H``; each component supplies its own
conditional draw of ``theta`` given ``Y' = Y - G``. :class:`DpmError` is the odd
one out: it models the error term itself, so it hands the tree sweep a
per-observation offset and variance instead.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.special import gammaln

from .dataset import DataError
from .priors import calibrate_lambda, ols_residuals

__all__ = [
    "HComponent",
    "LinearH",
    "RandomInterceptH",
    "SpatialCarH",
    "DpmError",
    "linear_draw",
    "rand_intercept_draw",
    "car_draw",
    "dpm_k0",
    "load_adjacency",
    "make_component",
    "evaluate_h",
]


class HComponent:
    """Base class for additive components.

    Subclasses implement :meth:`bind`, :meth:`evaluate`, :meth:`draw_theta` and
    :meth:`theta`. A ``pinned`` component keeps its parameters at their starting
    values (zero) and never touches the generator.
    """

    name = "none"
    error_model = False

    def __init__(self, pinned: bool = False):
        self.pinned = pinned

    def bind(self, n: int, w=None, group=None) -> "HComponent":
        raise NotImplementedError

    def evaluate(self) -> np.ndarray:
        """H at the bound training rows under the current parameters; see
        :func:`evaluate_h` for new rows."""
        raise NotImplementedError

    def draw_theta(self, yprime, sigma2, rng) -> None:
        raise NotImplementedError

    def theta(self) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict:
        """Scalar settings echoed into run manifests."""
        return {}


def _group_codes(group, n_groups=None):
    g = np.asarray(group)
    if g.ndim != 1 or not np.issubdtype(g.dtype, np.integer):
        raise ValueError("groups must be a vector of integer codes")
    if g.size and g.min() < 0:
        raise ValueError("group codes must be non-negative")
    L = int(g.max()) + 1 if n_groups is None else int(n_groups)
    if g.size and g.max() >= L:
        raise ValueError("group code exceeds the number of groups")
    return g, L


# -- linear ------------------------------------------------------------------


def linear_draw(yprime, W, sigma2, beta, Omega, rng) -> np.ndarray:
    """Draw coefficients of ``Y' = W theta + e`` under ``theta ~ MVN(beta, Omega)``.

    ``e`` is iid ``N(0, sigma2)``; the draw is from the exact Gaussian full
    conditional. A scalar ``Omega`` means ``Omega * I``.
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    yprime = np.asarray(yprime, dtype=float)
    k = W.shape[1]
    Omega = np.asarray(Omega, dtype=float)
    Omega = Omega * np.eye(k) if Omega.ndim == 0 else np.atleast_2d(Omega)
    if Omega.shape != (k, k):
        raise ValueError(f"prior covariance must be {k}x{k}")
    beta = np.broadcast_to(np.asarray(beta, dtype=float), (k,))
    prior_prec = np.linalg.inv(Omega)
    mean, chol = _linear_posterior(yprime, W, sigma2, beta, prior_prec)
    return mean + solve_triangular(chol, rng.standard_normal(mean.size), lower=False)


def _linear_posterior(yprime, W, sigma2, beta, prior_prec):
    post_prec = prior_prec + W.T @ W / sigma2
    chol = cholesky(post_prec, lower=False)  # post_prec = U^T U
    rhs = prior_prec @ beta + W.T @ yprime / sigma2
    return cho_solve((chol, False), rhs), chol


class LinearH(HComponent):
    """``H = theta_0 + theta_1 w_1 + ... + theta_q w_q`` with a Gaussian prior.

    ``prior_cov`` is a scalar (times identity) or a full matrix over the
    coefficients, intercept first when ``intercept`` is set.
    """

    name = "linear"

    def __init__(self, prior_mean=0.0, prior_cov=100.0, intercept=True, pinned=False):
        super().__init__(pinned)
        self.prior_mean = prior_mean
        self.prior_cov = prior_cov
        self.intercept = intercept

    def _design_matrix(self, w, n):
        cols = [] if w is None else [np.atleast_2d(np.asarray(w, dtype=float)).reshape(n, -1)]
        if self.intercept:
            cols.insert(0, np.ones((n, 1)))
        if not cols:
            raise ValueError("linear component needs covariates or an intercept")
        return np.hstack(cols)

    def bind(self, n, w=None, group=None):
        self.D = self._design_matrix(w, n)
        k = self.D.shape[1]
        cov = np.asarray(self.prior_cov, dtype=float)
        self.Omega = cov * np.eye(k) if cov.ndim == 0 else cov
        if self.Omega.shape != (k, k):
            raise ValueError(f"prior covariance must be {k}x{k}")
        np.linalg.cholesky(self.Omega)  # raises if not positive definite
        self.beta = np.broadcast_to(np.asarray(self.prior_mean, dtype=float), (k,)).copy()
        self._prior_prec = np.linalg.inv(self.Omega)
        self._theta = np.zeros(k)
        return self

    def theta(self):
        return self._theta.copy()

    def evaluate(self):
        return self.D @ self._theta

    def draw_theta(self, yprime, sigma2, rng):
        if self.pinned:
            return
        mean, chol = _linear_posterior(
            np.asarray(yprime, dtype=float), self.D, sigma2, self.beta, self._prior_prec
        )
        self._theta = mean + solve_triangular(chol, rng.standard_normal(mean.size), lower=False)

    def posterior_mean(self, yprime, sigma2):
        return _linear_posterior(np.asarray(yprime, float), self.D, sigma2, self.beta, self._prior_prec)[0]

    def params(self):
        cov = np.diag(np.atleast_2d(self.prior_cov))
        return {"intercept": int(self.intercept), "prior_cov": float(np.mean(cov))}


# -- random intercept --------------------------------------------------------


def rand_intercept_draw(yprime, groups, sigma2, tau2, rng, n_groups=None, a0=1.0, b0=1.0):
    """Draw group intercepts and then their variance.

    ``a_l ~ N(tau2 * s_l / (n_l tau2 + sigma2), sigma2 tau2 / (n_l tau2 + sigma2))``
    with ``s_l`` the group sum of ``yprime``; then
    ``tau2 ~ IG(a0 + L/2, b0 + sum(a^2)/2)``.
    """
    g, L = _group_codes(groups, n_groups)
    yprime = np.asarray(yprime, dtype=float)
    sums = np.bincount(g, weights=yprime, minlength=L)
    counts = np.bincount(g, minlength=L)
    denom = counts * tau2 + sigma2
    a = tau2 * sums / denom + np.sqrt(sigma2 * tau2 / denom) * rng.standard_normal(L)
    tau2_new = (b0 + 0.5 * float(a @ a)) / rng.standard_gamma(a0 + 0.5 * L)
    return a, tau2_new


class RandomInterceptH(HComponent):
    """One intercept per group, ``a_l | tau2 ~ N(0, tau2)``, ``tau2 ~ IG(a0, b0)``."""

    name = "rand_intercept"

    def __init__(self, tau2_init=1.0, a0=1.0, b0=1.0, n_groups=None, pinned=False):
        super().__init__(pinned)
        self.tau2_init = tau2_init
        self.a0 = a0
        self.b0 = b0
        self.n_groups = n_groups

    def bind(self, n, w=None, group=None):
        if group is None:
            raise ValueError("random intercept component needs group labels")
        self.group, self.L = _group_codes(group, self.n_groups)
        self.a = np.zeros(self.L)
        self.tau2 = float(self.tau2_init)
        return self

    def theta(self):
        return np.append(self.a, self.tau2)

    def evaluate(self):
        return self.a[self.group]

    def draw_theta(self, yprime, sigma2, rng):
        if self.pinned:
            return
        self.a, self.tau2 = rand_intercept_draw(
            yprime, self.group, sigma2, self.tau2, rng, self.L, self.a0, self.b0
        )

    def params(self):
        return {"a0": self.a0, "b0": self.b0}


# -- spatial CAR -------------------------------------------------------------


def car_draw(yprime, groups, sigma2, car: "SpatialCarH", rng) -> np.ndarray:
    """Draw area effects from their Gaussian full conditional.

    Precision ``(H - rho C)/delta2 + diag(n_l)/sigma2``, mean solving
    ``precision @ mean = s / sigma2`` with ``s`` the area sums of ``yprime``.
    """
    g, _ = _group_codes(groups, car.n_areas)
    yprime = np.asarray(yprime, dtype=float)
    sums = np.bincount(g, weights=yprime, minlength=car.n_areas)
    counts = np.bincount(g, minlength=car.n_areas)
    prec = car.prior_precision + np.diag(counts / sigma2)
    chol = cholesky(prec, lower=False)
    mean = cho_solve((chol, False), sums / sigma2)
    return mean + solve_triangular(chol, rng.standard_normal(car.n_areas), lower=False)


class SpatialCarH(HComponent):
    """Area effects under ``a ~ N(0, delta2 (H - rho C)^-1)``.

    ``C`` is a symmetric 0/1 adjacency with zero diagonal and ``H`` the diagonal
    of neighbour counts. ``rho`` and ``delta2`` are fixed.
    """

    name = "car"

    def __init__(self, adjacency, rho=0.9, delta2=1.0, pinned=False):
        super().__init__(pinned)
        C = np.asarray(adjacency, dtype=float)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise ValueError("adjacency must be a square matrix")
        if not np.array_equal(C, C.T) or np.any(np.diag(C) != 0) or not np.all((C == 0) | (C == 1)):
            raise ValueError("adjacency must be symmetric 0/1 with zero diagonal")
        if not -1.0 < rho < 1.0:
            raise ValueError("rho must lie in (-1, 1)")
        if delta2 <= 0:
            raise ValueError("delta2 must be positive")
        self.C = C
        self.rho = float(rho)
        self.delta2 = float(delta2)
        self.h = C.sum(axis=1)
        base = np.diag(self.h) - self.rho * C
        try:
            np.linalg.cholesky(base)
        except np.linalg.LinAlgError:
            raise ValueError("CAR prior precision H - rho*C is not positive definite") from None
        self.prior_precision = base / self.delta2

    @property
    def n_areas(self) -> int:
        return self.C.shape[0]

    def prior_covariance(self) -> np.ndarray:
        return np.linalg.inv(self.prior_precision)

    def bind(self, n, w=None, group=None):
        if group is None:
            raise ValueError("CAR component needs area labels")
        self.group, _ = _group_codes(group, self.n_areas)
        self.a = np.zeros(self.n_areas)
        return self

    def theta(self):
        return self.a.copy()

    def evaluate(self):
        return self.a[self.group]

    def draw_theta(self, yprime, sigma2, rng):
        if self.pinned:
            return
        self.a = car_draw(yprime, self.group, sigma2, self, rng)

    def params(self):
        return {"rho": self.rho, "delta2": self.delta2}


def load_adjacency(path, labels) -> np.ndarray:
    """Build an adjacency matrix from a two-column edge-list CSV with a header.

    ``labels[k]`` is the area label of group code ``k``; edges are symmetrised.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"adjacency file not found: {path}")
    index = {str(lab): k for k, lab in enumerate(labels)}
    C = np.zeros((len(labels), len(labels)))
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 2:
                raise DataError(f"{path}: row {lineno} needs two area labels")
            a, b = row[0].strip(), row[1].strip()
            for lab in (a, b):
                if lab not in index:
                    raise DataError(f"{path}: unknown area {lab!r} at row {lineno}")
            if a == b:
                raise DataError(f"{path}: self-loop at row {lineno}")
            C[index[a], index[b]] = C[index[b], index[a]] = 1.0
    return C


# -- Dirichlet-process mixture error ------------------------------------------


def dpm_k0(max_abs_resid: float, lam: float, k_s: float = 10.0) -> float:
    """Prior precision factor ``k0`` placing ``k_s`` marginal scales at the largest residual."""
    return k_s * k_s * lam / max_abs_resid**2


def _t_logpdf(x, df, loc, scale2):
    z2 = (x - loc) ** 2 / scale2
    return (
        gammaln(0.5 * (df + 1))
        - gammaln(0.5 * df)
        - 0.5 * math.log(df * math.pi * scale2)
        - 0.5 * (df + 1) * np.log1p(z2 / df)
    )


class DpmError(HComponent):
    """Errors ``e_i ~ N(a_i, s2_i)`` with ``(a_i, s2_i)`` drawn from a Dirichlet process.

    Base measure: ``s2 ~ nu*lam/chi2_nu`` and ``a | s2 ~ N(mu0, s2/k0)``. The
    concentration parameter is sampled on ``alpha_grid`` with weights
    ``alpha_prior`` (uniform by default).
    """

    name = "dpm"
    error_model = True

    def __init__(self, nu=10.0, lam=None, mu0=0.0, k0=None, k_s=10.0, quantile=0.95,
                 alpha_grid=None, alpha_prior=None, pinned=False, s2_init=None):
        super().__init__(pinned)
        self.nu = float(nu)
        self.lam = lam
        self.mu0 = float(mu0)
        self.k0 = k0
        self.k_s = float(k_s)
        self.quantile = float(quantile)
        grid = np.geomspace(0.01, 10.0, 20) if alpha_grid is None else np.asarray(alpha_grid, float)
        if np.any(grid <= 0):
            raise ValueError("alpha grid must be positive")
        prior = np.ones(grid.size) if alpha_prior is None else np.asarray(alpha_prior, float)
        if prior.shape != grid.shape or np.any(prior < 0) or prior.sum() <= 0:
            raise ValueError("alpha prior must be non-negative weights matching the grid")
        self.alpha_grid = grid
        self.log_alpha_prior = np.log(prior / prior.sum())
        self.s2_init = s2_init

    def calibrate(self, y, X) -> "DpmError":
        """Fill ``lam`` and ``k0`` from a least-squares fit of ``y`` on ``X``."""
        resid, rank = ols_residuals(y, X)
        n = len(resid)
        s2 = float(resid @ resid / (n - rank)) if n > rank else float(np.var(y, ddof=1))
        if self.lam is None:
            self.lam = calibrate_lambda(s2, self.nu, self.quantile)
        if self.k0 is None:
            self.k0 = dpm_k0(float(np.max(np.abs(resid))), self.lam, self.k_s)
        if self.s2_init is None:
            self.s2_init = s2
        return self

    def bind(self, n, w=None, group=None):
        if self.lam is None or self.k0 is None:
            raise ValueError("call calibrate() or set lam and k0 before binding")
        self.n = n
        self.labels = np.zeros(n, dtype=np.int64)
        s2 = self.s2_init if self.s2_init is not None else self.lam
        self.atoms_mu = np.array([self.mu0])
        self.atoms_s2 = np.array([float(s2)])
        self.alpha = float(self.alpha_grid[len(self.alpha_grid) // 2])
        return self

    @property
    def n_clusters(self) -> int:
        return int(self.atoms_mu.size)

    def tree_sweep_weights(self):
        """Per-observation error offset and variance seen by the tree update."""
        return self.atoms_mu[self.labels], self.atoms_s2[self.labels]

    def theta(self):
        return np.array([self.n_clusters, self.alpha])

    def evaluate(self):
        return self.atoms_mu[self.labels]

    def _posterior_atom(self, r, rng):
        n = r.size
        kn = self.k0 + n
        rbar = float(r.mean()) if n else 0.0
        ss = float(((r - rbar) ** 2).sum()) if n else 0.0
        mun = (self.k0 * self.mu0 + n * rbar) / kn
        nun = self.nu + n
        scale = self.nu * self.lam + ss + self.k0 * n / kn * (rbar - self.mu0) ** 2
        s2 = scale / rng.chisquare(nun)
        mu = mun + math.sqrt(s2 / kn) * rng.standard_normal()
        return mu, s2

    def draw(self, resid, rng):
        """One Gibbs scan: memberships, atom values, then concentration."""
        if self.pinned:
            return
        r = np.asarray(resid, dtype=float)
        labels = self.labels
        mu = list(self.atoms_mu)
        s2 = list(self.atoms_s2)
        counts = list(np.bincount(labels, minlength=len(mu)))
        pred_scale2 = self.lam * (1.0 + 1.0 / self.k0)
        log_new = math.log(self.alpha) + _t_logpdf(r, self.nu, self.mu0, pred_scale2)
        for i in range(r.size):
            c = labels[i]
            counts[c] -= 1
            if counts[c] == 0:
                # drop the emptied atom and shift labels above it
                del counts[c], mu[c], s2[c]
                labels[labels > c] -= 1
            mu_a = np.asarray(mu)
            s2_a = np.asarray(s2)
            logw = (
                np.log(np.asarray(counts, dtype=float))
                - 0.5 * np.log(2 * math.pi * s2_a)
                - 0.5 * (r[i] - mu_a) ** 2 / s2_a
            )
            logw = np.append(logw, log_new[i])
            wts = np.exp(logw - logw.max())
            k = int(np.searchsorted(np.cumsum(wts), rng.random() * wts.sum(), side="right"))
            k = min(k, len(counts))
            if k == len(counts):
                a, v = self._posterior_atom(r[i : i + 1], rng)
                mu.append(a)
                s2.append(v)
                counts.append(0)
            labels[i] = k
            counts[k] += 1
        K = len(counts)
        self.atoms_mu = np.empty(K)
        self.atoms_s2 = np.empty(K)
        order = np.argsort(labels, kind="stable")
        bounds = np.searchsorted(labels[order], np.arange(K + 1))
        for k in range(K):
            members = r[order[bounds[k] : bounds[k + 1]]]
            self.atoms_mu[k], self.atoms_s2[k] = self._posterior_atom(members, rng)
        self.labels = labels
        n = r.size
        logp = (
            K * np.log(self.alpha_grid)
            + gammaln(self.alpha_grid)
            - gammaln(self.alpha_grid + n)
            + self.log_alpha_prior
        )
        p = np.exp(logp - logp.max())
        j = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
        self.alpha = float(self.alpha_grid[min(j, p.size - 1)])

    def params(self):
        return {"nu": self.nu, "lam": self.lam, "k0": self.k0, "k_s": self.k_s}


def evaluate_h(kind: str, theta, n: int, w=None, group=None, intercept: bool = True) -> np.ndarray:
    """H at ``n`` new rows for one stored parameter vector.

    Groups outside the fitted range (code ``< 0`` or beyond the last fitted
    group) get the prior mean of zero. A ``dpm`` component contributes nothing
    here; its location enters through the per-draw error offset.
    """
    if kind in (None, "", "none", "dpm"):
        return np.zeros(n)
    theta = np.asarray(theta, dtype=float)
    if kind == "linear":
        cols = [] if w is None else [np.asarray(w, dtype=float).reshape(n, -1)]
        if intercept:
            cols.insert(0, np.ones((n, 1)))
        D = np.hstack(cols) if cols else np.zeros((n, 0))
        if D.shape[1] != theta.size:
            want, got = theta.size - int(intercept), D.shape[1] - int(intercept)
            raise ValueError(f"expected {want} H covariates, got {got}")
        return D @ theta
    if kind in ("rand_intercept", "car"):
        effects = theta[:-1] if kind == "rand_intercept" else theta
        if group is None:
            raise ValueError(f"{kind} component needs group labels at prediction")
        g = np.asarray(group, dtype=np.int64)
        known = (g >= 0) & (g < effects.size)
        return np.where(known, effects[np.where(known, g, 0)], 0.0)
    raise ValueError(f"unknown H component {kind!r}")


def make_component(name: str, *, adjacency=None, rho=0.9, delta2=1.0, **kwargs) -> HComponent | None:
    """Component factory keyed by the names used in configuration files."""
    if name in (None, "", "none"):
        return None
    if name == "linear":
        return LinearH(**kwargs)
    if name == "rand_intercept":
        return RandomInterceptH(**kwargs)
    if name == "car":
        if adjacency is None:
            raise ValueError("car component needs an adjacency matrix")
        return SpatialCarH(adjacency, rho=rho, delta2=delta2, **kwargs)
    if name == "dpm":
        return DpmError(**kwargs)
    raise ValueError(f"unknown H component {name!r}")
