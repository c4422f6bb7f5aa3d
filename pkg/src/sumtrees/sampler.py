"""Backfitting MCMC for sums of regression trees.

One iteration of :class:`Chain` updates every tree in ascending order (one
Metropolis-Hastings structure proposal, then a conjugate draw of its leaf
values), then the optional H component, then the noise parameters or, for a
binary outcome, the probit latents.

Observation noise enters the tree updates only through a per-observation
precision vector, so the homoscedastic sampler and the Dirichlet-process error
model share one code path.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .priors import (
    MOVES,
    Hyperparams,
    cut_candidates,
    cut_counts,
    log_tree_prior,
    log_tree_structure_ratio,
)
from .tree import LEAF, Forest, PackedForest, Tree, change_edit, grow_edit, prune_edit, swap_edit
from .truncnorm import sample_latent

__all__ = [
    "MCMCConfig",
    "Proposal",
    "PosteriorDraws",
    "Chain",
    "residual_j",
    "leaf_marginal_loglik",
    "node_loglik",
    "grow_log_transition",
    "propose",
    "score_grow",
    "score_prune",
    "score_change",
    "accept_or_reject",
    "draw_leaf_means",
    "sigma2_posterior",
    "draw_sigma2",
    "augment_latents",
    "run_mcmc",
]

log = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class MCMCConfig:
    """Chain length and bookkeeping.

    ``iters`` counts all iterations including burn-in; every ``thin``-th
    post-burn-in iteration is kept. ``sigma2_fixed`` pins the noise variance of a
    continuous outcome instead of sampling it.
    """

    iters: int = 1500
    burn_in: int = 100
    thin: int = 1
    seed: int = 0
    n_min: int = 5
    keep_forests: bool = True
    sigma2_fixed: float | None = None

    def __post_init__(self) -> None:
        if self.iters <= self.burn_in:
            raise ValueError(f"iters ({self.iters}) must exceed burn_in ({self.burn_in})")
        if self.burn_in < 0 or self.thin < 1 or self.n_min < 1:
            raise ValueError("need burn_in >= 0, thin >= 1 and n_min >= 1")
        if self.sigma2_fixed is not None and not self.sigma2_fixed > 0:
            raise ValueError("sigma2_fixed must be positive")

    @property
    def n_kept(self) -> int:
        return (self.iters - self.burn_in) // self.thin


# -- likelihood pieces -------------------------------------------------------


def node_loglik(W, S, sigma_mu: float, mu_mu: float = 0.0):
    """Partition-dependent part of a leaf's marginal log likelihood.

    ``W`` is the summed observation precision in the leaf and ``S`` the
    precision-weighted residual sum. Terms that depend only on the individual
    observations are dropped; they cancel in every Metropolis-Hastings ratio.
    """
    tau = 1.0 / (sigma_mu * sigma_mu)
    W = np.asarray(W, dtype=float)
    S = np.asarray(S, dtype=float)
    post = tau + W
    return 0.5 * np.log(tau / post) + 0.5 * (S + tau * mu_mu) ** 2 / post - 0.5 * tau * mu_mu**2


def leaf_marginal_loglik(resids, sigma2, sigma_mu: float, mu_mu: float = 0.0) -> float:
    """Log of the leaf likelihood with its mean integrated against N(mu_mu, sigma_mu^2).

    ``sigma2`` may be a scalar or one variance per residual.
    """
    r = np.asarray(resids, dtype=float)
    if r.size == 0:
        return 0.0
    s2 = np.broadcast_to(np.asarray(sigma2, dtype=float), r.shape)
    prec = 1.0 / s2
    obs = -0.5 * np.sum(_LOG_2PI + np.log(s2)) - 0.5 * np.sum(prec * r * r)
    return float(obs + node_loglik(prec.sum(), (prec * r).sum(), sigma_mu, mu_mu))


def grow_log_transition(
    p_grow: float, p_prune: float, n_leaves: int, p_avail: int, eta: int, n_nog_after: int
) -> float:
    """Log proposal ratio q(reverse)/q(forward) of a grow move."""
    return (
        math.log(p_prune)
        - math.log(p_grow)
        + math.log(n_leaves)
        + math.log(p_avail)
        + math.log(eta)
        - math.log(n_nog_after)
    )


def residual_j(y, forest: Forest, j: int, X) -> np.ndarray:
    """Partial residual of ``y`` against every tree except tree ``j``."""
    if not 0 <= j < forest.m:
        raise IndexError(f"tree index {j} out of range for m={forest.m}")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.array(y, dtype=float)
    for w, t in enumerate(forest.trees):
        if w != j:
            out -= t.predict(X)
    return out


# -- proposals ---------------------------------------------------------------


@dataclass
class Proposal:
    """A candidate edit of one tree.

    ``rows`` are the observations whose leaf changes if accepted and ``assign``
    their new leaf ids. A ``forced`` proposal has transition ratio zero and is
    always rejected.
    """

    kind: str
    tree: Tree | None
    log_transition: float = 0.0
    log_likelihood: float = 0.0
    log_structure: float = 0.0
    forced: bool = False
    rows: np.ndarray | None = None
    assign: np.ndarray | None = None

    @property
    def log_ratio(self) -> float:
        if self.forced:
            return -math.inf
        return self.log_transition + self.log_likelihood + self.log_structure


def legal_move_probs(tree: Tree, hp: Hyperparams) -> np.ndarray:
    """Move probabilities restricted to the moves possible on ``tree``."""
    has_internal = tree.var[0] != LEAF
    legal = np.array([True, has_internal, has_internal, has_internal and bool(tree.swap_pairs())])
    probs = np.where(legal, hp.move_probs, 0.0)
    total = probs.sum()
    return probs / total if total > 0 else probs


def _forced(kind: str) -> Proposal:
    return Proposal(kind, None, forced=True)


class _Stats:
    """Per-leaf sufficient statistics of the current residual."""

    __slots__ = ("W", "S")

    def __init__(self, leaf_of, rprec, prec, size):
        self.S = np.bincount(leaf_of, weights=rprec, minlength=size)
        self.W = np.bincount(leaf_of, weights=prec, minlength=size)


def _subtree_rows(tree: Tree, k: int, leaf_of: np.ndarray) -> np.ndarray:
    sub = [j for j in tree.subtree(k) if tree.var[j] == LEAF]
    if len(sub) == 1:
        return np.flatnonzero(leaf_of == sub[0])
    return np.flatnonzero(np.isin(leaf_of, sub))


def _rebuild_subtree(kind, tree, new, k, leaf_of, rprec, prec, stats, X, hp, n_min):
    """Likelihood and prior ratios for an edit confined to the subtree at ``k``."""
    rows = _subtree_rows(tree, k, leaf_of)
    xr = X[rows]
    assign = new.route(xr, start=k)
    sub_leaves = [j for j in tree.subtree(k) if tree.var[j] == LEAF]
    size = new.size
    counts = np.bincount(assign, minlength=size)
    if min(counts[j] for j in sub_leaves) < n_min:
        return None
    S_new = np.bincount(assign, weights=rprec[rows], minlength=size)
    W_new = np.bincount(assign, weights=prec[rows], minlength=size)
    idx = np.asarray(sub_leaves)
    ll = float(
        node_loglik(W_new[idx], S_new[idx], hp.sigma_mu, hp.mu_mu).sum()
        - node_loglik(stats.W[idx], stats.S[idx], hp.sigma_mu, hp.mu_mu).sum()
    )
    ls = log_tree_prior(new, X, hp, start=k, rows=rows) - log_tree_prior(
        tree, X, hp, start=k, rows=rows
    )
    return Proposal(kind, new, 0.0, ll, ls, rows=rows, assign=assign)


def score_grow(
    tree: Tree,
    leaf: int,
    var: int,
    cut: float,
    leaf_of: np.ndarray,
    rprec: np.ndarray,
    prec: np.ndarray,
    X: np.ndarray,
    hp: Hyperparams,
    n_min: int = 1,
    stats: _Stats | None = None,
    probs: np.ndarray | None = None,
    rows: np.ndarray | None = None,
    eta: np.ndarray | None = None,
) -> Proposal:
    """Score splitting ``leaf`` on ``x[var] < cut``.

    ``rprec`` is the precision-weighted residual ``resid * prec``. The
    transition ratio is ``[P(prune | T*) / P(grow | T)] * b * p * eta / w2*``
    with ``b`` the leaves of ``T``, ``p`` the covariates with a cut available at
    the leaf, ``eta`` the cuts available for ``var`` and ``w2*`` the prune
    candidates of ``T*``.
    """
    if stats is None:
        stats = _Stats(leaf_of, rprec, prec, tree.size)
    if probs is None:
        probs = legal_move_probs(tree, hp)
    if rows is None:
        rows = np.flatnonzero(leaf_of == leaf)
    xr = X[rows]
    if eta is None:
        eta = cut_counts(xr)
    go_left = xr[:, var] < cut
    n_left = int(go_left.sum())
    if eta[var] == 0 or n_left < n_min or rows.size - n_left < n_min:
        return _forced("grow")
    new = grow_edit(tree, leaf, (var, cut))
    p_prune = legal_move_probs(new, hp)[1]
    if p_prune == 0.0 or probs[0] == 0.0:
        return _forced("grow")
    p_avail = int(np.count_nonzero(eta))
    sm, mm = hp.sigma_mu, hp.mu_mu
    rp, pr = rprec[rows], prec[rows]
    S_l, W_l = rp[go_left].sum(), pr[go_left].sum()
    S_r, W_r = stats.S[leaf] - S_l, stats.W[leaf] - W_l
    ll = float(
        node_loglik(W_l, S_l, sm, mm)
        + node_loglik(W_r, S_r, sm, mm)
        - node_loglik(stats.W[leaf], stats.S[leaf], sm, mm)
    )
    ls = log_tree_structure_ratio(tree.depth[leaf], p_avail, int(eta[var]), hp)
    lt = grow_log_transition(
        probs[0], p_prune, tree.n_leaves, p_avail, int(eta[var]), len(new.nog())
    )
    assign = np.where(go_left, new.left[leaf], new.right[leaf])
    return Proposal("grow", new, lt, ll, ls, rows=rows, assign=assign)


def score_prune(
    tree: Tree,
    node: int,
    leaf_of: np.ndarray,
    rprec: np.ndarray,
    prec: np.ndarray,
    X: np.ndarray,
    hp: Hyperparams,
    stats: _Stats | None = None,
    probs: np.ndarray | None = None,
) -> Proposal:
    """Score collapsing ``node`` (both children leaves); the exact inverse of a grow."""
    if stats is None:
        stats = _Stats(leaf_of, rprec, prec, tree.size)
    if probs is None:
        probs = legal_move_probs(tree, hp)
    a, b = tree.left[node], tree.right[node]
    new = prune_edit(tree, node)
    p_grow = legal_move_probs(new, hp)[0]
    if p_grow == 0.0 or probs[1] == 0.0:
        return _forced("prune")
    sm, mm = hp.sigma_mu, hp.mu_mu
    W_k = stats.W[a] + stats.W[b]
    S_k = stats.S[a] + stats.S[b]
    ll = float(
        node_loglik(W_k, S_k, sm, mm)
        - node_loglik(stats.W[a], stats.S[a], sm, mm)
        - node_loglik(stats.W[b], stats.S[b], sm, mm)
    )
    rows = np.flatnonzero((leaf_of == a) | (leaf_of == b))
    eta = cut_counts(X[rows])
    p_avail = int(np.count_nonzero(eta))
    v = tree.var[node]
    ls = -log_tree_structure_ratio(tree.depth[node], p_avail, int(eta[v]), hp)
    lt = -grow_log_transition(p_grow, probs[1], new.n_leaves, p_avail, int(eta[v]), len(tree.nog()))
    return Proposal("prune", new, lt, ll, ls, rows=rows, assign=np.full(rows.size, node))


def score_change(
    tree: Tree,
    node: int,
    var: int,
    cut: float,
    leaf_of: np.ndarray,
    rprec: np.ndarray,
    prec: np.ndarray,
    X: np.ndarray,
    hp: Hyperparams,
    n_min: int = 1,
    stats: _Stats | None = None,
    rows: np.ndarray | None = None,
    eta: np.ndarray | None = None,
) -> Proposal:
    """Score replacing the rule at internal ``node`` by ``x[var] < cut``.

    Forward and reverse both pick ``node`` uniformly and a variable uniformly
    among those with a cut, so only the per-variable cut counts remain in the
    transition ratio.
    """
    if stats is None:
        stats = _Stats(leaf_of, rprec, prec, tree.size)
    if rows is None:
        rows = _subtree_rows(tree, node, leaf_of)
    if eta is None:
        eta = cut_counts(X[rows])
    if eta[var] == 0:
        return _forced("change")
    new = change_edit(tree, node, (var, cut))
    prop = _rebuild_subtree("change", tree, new, node, leaf_of, rprec, prec, stats, X, hp, n_min)
    if prop is None:
        return _forced("change")
    prop.log_transition = math.log(eta[var]) - math.log(eta[tree.var[node]])
    return prop


def propose(
    tree: Tree,
    leaf_of: np.ndarray,
    resid: np.ndarray,
    prec: np.ndarray,
    X: np.ndarray,
    hp: Hyperparams,
    n_min: int,
    rng: np.random.Generator,
    stats: _Stats | None = None,
    rprec: np.ndarray | None = None,
) -> Proposal | None:
    """Draw one structural edit of ``tree`` and score it.

    ``leaf_of`` maps each training row to its current leaf, ``resid`` is the
    partial residual the tree is fitted to and ``prec`` the per-row noise
    precision. Returns ``None`` when no move is possible.
    """
    probs = legal_move_probs(tree, hp)
    if probs.sum() == 0:
        return None
    kind = MOVES[min(int(np.searchsorted(np.cumsum(probs), rng.random(), side="right")), 3)]
    if rprec is None:
        rprec = resid * prec
    if stats is None:
        stats = _Stats(leaf_of, rprec, prec, tree.size)

    if kind == "grow":
        leaves = tree.leaves()
        leaf = leaves[int(rng.integers(len(leaves)))]
        rows = np.flatnonzero(leaf_of == leaf)
        if rows.size < 2 * n_min:
            return _forced(kind)
        xr = X[rows]
        eta = cut_counts(xr)
        avail = np.flatnonzero(eta)
        if avail.size == 0:
            return _forced(kind)
        v = int(avail[rng.integers(avail.size)])
        cut = float(cut_candidates(xr[:, v])[rng.integers(eta[v])])
        return score_grow(tree, leaf, v, cut, leaf_of, rprec, prec, X, hp, n_min, stats, probs,
                          rows=rows, eta=eta)

    if kind == "prune":
        nogs = tree.nog()
        k = nogs[int(rng.integers(len(nogs)))]
        return score_prune(tree, k, leaf_of, rprec, prec, X, hp, stats, probs)

    if kind == "change":
        internals = tree.internals()
        k = internals[int(rng.integers(len(internals)))]
        rows = _subtree_rows(tree, k, leaf_of)
        xr = X[rows]
        eta = cut_counts(xr)
        avail = np.flatnonzero(eta)
        v = int(avail[rng.integers(avail.size)])
        cut = float(cut_candidates(xr[:, v])[rng.integers(eta[v])])
        return score_change(tree, k, v, cut, leaf_of, rprec, prec, X, hp, n_min, stats,
                            rows=rows, eta=eta)

    pairs = tree.swap_pairs()
    parent, child = pairs[int(rng.integers(len(pairs)))]
    new = swap_edit(tree, parent, child)
    prop = _rebuild_subtree("swap", tree, new, parent, leaf_of, rprec, prec, stats, X, hp, n_min)
    return _forced("swap") if prop is None else prop


def accept_or_reject(proposal: Proposal | None, rng: np.random.Generator) -> bool:
    """Metropolis-Hastings decision, ``min(1, exp(log_ratio))``."""
    if proposal is None or proposal.forced:
        return False
    r = proposal.log_ratio
    if r >= 0.0:
        return True
    return math.log(rng.random()) < r


# -- conjugate draws ---------------------------------------------------------


def leaf_posterior(W, S, hp: Hyperparams):
    """Mean and variance of a leaf value given its precision-weighted sums."""
    tau = 1.0 / (hp.sigma_mu * hp.sigma_mu)
    post = tau + np.asarray(W, dtype=float)
    return (np.asarray(S, dtype=float) + tau * hp.mu_mu) / post, 1.0 / post


def draw_leaf_means(
    tree: Tree,
    leaf_of: np.ndarray,
    resid: np.ndarray,
    prec: np.ndarray,
    hp: Hyperparams,
    rng: np.random.Generator,
    rprec: np.ndarray | None = None,
) -> np.ndarray:
    """Redraw every leaf value of ``tree`` in place; returns the tree's fit per row.

    An empty leaf draws from its prior.
    """
    if rprec is None:
        rprec = resid * prec
    size = tree.size
    S = np.bincount(leaf_of, weights=rprec, minlength=size)
    W = np.bincount(leaf_of, weights=prec, minlength=size)
    leaves = tree.leaves()
    mean, var = leaf_posterior(W[leaves], S[leaves], hp)
    values = mean + np.sqrt(var) * rng.standard_normal(len(leaves))
    mu = tree.mu
    for k, val in zip(leaves, values.tolist()):
        mu[k] = val
    return np.asarray(mu)[leaf_of]


def sigma2_posterior(resid, hp: Hyperparams) -> tuple[float, float]:
    """Shape and rate of the inverse-gamma full conditional of the noise variance."""
    r = np.asarray(resid, dtype=float)
    return 0.5 * (hp.nu + r.size), 0.5 * (hp.nu * hp.lam + float(r @ r))


def draw_sigma2(resid, hp: Hyperparams, rng: np.random.Generator) -> float:
    shape, rate = sigma2_posterior(resid, hp)
    return rate / rng.standard_gamma(shape)


def augment_latents(y, mean, rng: np.random.Generator) -> np.ndarray:
    """Probit latents: N(mean, 1) truncated to the side of zero given by ``y``."""
    return sample_latent(mean, np.asarray(y) == 1, rng)


# -- the chain ---------------------------------------------------------------


@dataclass
class PosteriorDraws:
    """Output of :func:`run_mcmc`.

    ``forests`` holds one :class:`PackedForest` per kept iteration when forests
    are kept; ``test_pred`` holds forest predictions at ``X_test`` per kept
    iteration. ``theta`` collects the H-component parameter vector per kept
    iteration. Acceptance counters cover post-burn-in iterations only.
    """

    sigma2_trace: np.ndarray
    kept_iters: np.ndarray
    sigma2: np.ndarray
    train_pred: np.ndarray
    test_pred: np.ndarray | None = None
    forests: list[PackedForest] | None = None
    theta: np.ndarray | None = None
    h_train: np.ndarray | None = None
    proposed: dict[str, int] = field(default_factory=dict)
    accepted: dict[str, int] = field(default_factory=dict)
    n_leaves_mean: np.ndarray | None = None
    n_clusters: np.ndarray | None = None

    @property
    def n_draws(self) -> int:
        return self.kept_iters.size

    def acceptance_rates(self) -> dict[str, float]:
        return {
            k: (self.accepted.get(k, 0) / self.proposed[k]) if self.proposed.get(k) else float("nan")
            for k in MOVES
        }


class Chain:
    """State of one MCMC chain plus the update schedule.

    Parameters
    ----------
    y : array of shape (n,)
        Outcome on the working scale (scaled continuous outcome, or 0/1).
    X : array of shape (n, p)
        Tree covariates.
    hp : Hyperparams
    config : MCMCConfig
    binary : bool
        Probit model with latent normal outcome and unit noise variance.
    h : HComponent, optional
        Additive component ``H(W, theta)``; already bound to the training rows.
    sigma2_init : float, optional
        Starting noise variance; defaults to the sample variance of ``y``.
    """

    def __init__(self, y, X, hp: Hyperparams, config: MCMCConfig, binary=False, h=None,
                 sigma2_init=None):
        self.y = np.asarray(y, dtype=float)
        self.X = np.ascontiguousarray(X, dtype=float)
        self.n = self.y.size
        self.hp = hp
        self.config = config
        self.binary = binary
        self.h = h
        self.error_model = h is not None and getattr(h, "error_model", False)
        if binary and self.error_model:
            raise ValueError("the mixture error model needs a continuous outcome")
        if not binary and hp.lam is None and config.sigma2_fixed is None and not self.error_model:
            raise ValueError("continuous outcome needs hp.lam (noise prior scale)")
        self.rng = np.random.default_rng(config.seed)
        self.iteration = 0
        self.proposed = dict.fromkeys(MOVES, 0)
        self.accepted = dict.fromkeys(MOVES, 0)

        m = hp.m
        if binary:
            self.sigma2 = 1.0
            self.z = augment_latents(self.y, np.zeros(self.n), self.rng)
            outcome = self.z
        else:
            if config.sigma2_fixed is not None:
                self.sigma2 = float(config.sigma2_fixed)
            elif sigma2_init is not None:
                self.sigma2 = float(sigma2_init)
            else:
                self.sigma2 = float(np.var(self.y))
            self.z = None
            outcome = self.y
        self.h_val = np.zeros(self.n) if h is None else h.evaluate()
        start = float(np.mean(outcome - self.h_val)) / m
        self.trees = [Tree(start) for _ in range(m)]
        self.leaf_of = np.zeros((m, self.n), dtype=np.int64)
        self.fits = np.full((m, self.n), start)
        self.G = self.fits.sum(axis=0)

    @property
    def outcome(self) -> np.ndarray:
        """Current working outcome: ``y`` or the probit latents."""
        return self.z if self.binary else self.y

    @property
    def forest(self) -> Forest:
        return Forest(self.trees)

    def _noise(self):
        """Tree-sweep target offset and per-row precision."""
        if self.error_model:
            offsets, variances = self.h.tree_sweep_weights()
            return offsets, 1.0 / variances
        return self.h_val, np.full(self.n, 1.0 / self.sigma2)

    def sweep_trees(self) -> None:
        offset, prec = self._noise()
        target = self.outcome - offset if self.h is not None else self.outcome
        hp, X, n_min, rng = self.hp, self.X, self.config.n_min, self.rng
        count = self.iteration >= self.config.burn_in
        G = self.G
        for j, tree in enumerate(self.trees):
            fit_j = self.fits[j]
            resid = target - (G - fit_j)
            rprec = resid * prec
            leaf_of = self.leaf_of[j]
            stats = _Stats(leaf_of, rprec, prec, tree.size)
            prop = propose(tree, leaf_of, resid, prec, X, hp, n_min, rng, stats, rprec)
            if prop is not None:
                if count:
                    self.proposed[prop.kind] += 1
                if accept_or_reject(prop, rng):
                    if count:
                        self.accepted[prop.kind] += 1
                    tree = prop.tree
                    self.trees[j] = tree
                    leaf_of[prop.rows] = prop.assign
            new_fit = draw_leaf_means(tree, leaf_of, resid, prec, hp, rng, rprec)
            G += new_fit - fit_j
            self.fits[j] = new_fit
        # resum to keep rounding drift out of the running total
        self.G = self.fits.sum(axis=0)

    def step(self) -> None:
        """One full iteration of the General BART schedule."""
        self.sweep_trees()
        h = self.h
        if h is not None:
            if self.error_model:
                h.draw(self.outcome - self.G, self.rng)
                # summary noise level for the trace: mean per-row variance
                self.sigma2 = float(np.mean(h.tree_sweep_weights()[1]))
            else:
                h.draw_theta(self.outcome - self.G, self.sigma2, self.rng)
                self.h_val = h.evaluate()
        if self.binary:
            self.z = augment_latents(self.y, self.G + self.h_val, self.rng)
            if np.any((self.z > 0) != (self.y == 1)):
                raise AssertionError("latent sign disagrees with the binary outcome")
        elif not self.error_model and self.config.sigma2_fixed is None:
            self.sigma2 = draw_sigma2(self.outcome - self.G - self.h_val, self.hp, self.rng)
        self.iteration += 1


def run_mcmc(
    y,
    X,
    hp: Hyperparams,
    config: MCMCConfig,
    binary: bool = False,
    h=None,
    X_test=None,
    sigma2_init=None,
    callback=None,
) -> PosteriorDraws:
    """Run one chain and collect the kept draws.

    ``callback(chain)`` is invoked after every iteration; it is meant for
    invariant checks in tests and must not touch the chain's generator.
    """
    chain = Chain(y, X, hp, config, binary=binary, h=h, sigma2_init=sigma2_init)
    n_kept = config.n_kept
    trace = np.empty(config.iters)
    kept = []
    train_pred = np.empty((n_kept, chain.n))
    test_pred = None
    if X_test is not None:
        X_test = np.atleast_2d(np.asarray(X_test, dtype=float))
        test_pred = np.empty((n_kept, X_test.shape[0]))
    forests = [] if config.keep_forests else None
    thetas, h_train, n_clusters = [], [], []
    n_leaves = np.empty(n_kept)
    for it in range(config.iters):
        chain.step()
        trace[it] = chain.sigma2
        if callback is not None:
            callback(chain)
        post = it - config.burn_in
        if post >= 0 and (post + 1) % config.thin == 0:
            i = len(kept)
            kept.append(it)
            train_pred[i] = chain.G
            n_leaves[i] = np.mean([t.n_leaves for t in chain.trees])
            if test_pred is not None or forests is not None:
                packed = PackedForest(chain.trees)
                if test_pred is not None:
                    test_pred[i] = packed.predict(X_test)
                if forests is not None:
                    forests.append(packed)
            if h is not None:
                thetas.append(h.theta())
                h_train.append(chain.h_val.copy() if not chain.error_model else h.tree_sweep_weights()[0])
                if chain.error_model:
                    n_clusters.append(h.n_clusters)
        if log.isEnabledFor(logging.DEBUG) and (it + 1) % 100 == 0:
            log.debug("iteration %d sigma2=%.5g", it + 1, chain.sigma2)
    kept_iters = np.asarray(kept, dtype=np.int64)
    return PosteriorDraws(
        sigma2_trace=trace,
        kept_iters=kept_iters,
        sigma2=trace[kept_iters],
        train_pred=train_pred,
        test_pred=test_pred,
        forests=forests,
        theta=np.asarray(thetas) if thetas else None,
        h_train=np.asarray(h_train) if h_train else None,
        proposed=dict(chain.proposed),
        accepted=dict(chain.accepted),
        n_leaves_mean=n_leaves,
        n_clusters=np.asarray(n_clusters) if n_clusters else None,
    )
