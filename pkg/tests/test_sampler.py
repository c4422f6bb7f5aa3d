import math

import numpy as np
import pytest
from conftest import closed_form_grow_loglr, quad_leaf_loglik, random_tree
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats

from sumtrees.dataset import scale_outcome, simulate_friedman_like
from sumtrees.priors import Hyperparams, calibrate_binary, calibrate_continuous, cut_counts
from sumtrees.sampler import (
    Chain,
    MCMCConfig,
    Proposal,
    accept_or_reject,
    augment_latents,
    draw_leaf_means,
    draw_sigma2,
    grow_log_transition,
    leaf_marginal_loglik,
    node_loglik,
    propose,
    residual_j,
    run_mcmc,
    score_change,
    score_grow,
    score_prune,
    sigma2_posterior,
)
from sumtrees.tree import Forest, Tree


def _grid(n_values, p, rng):
    """Rows whose every column has exactly ``n_values`` distinct values."""
    return np.column_stack([rng.permutation(np.arange(n_values, dtype=float)) for _ in range(p)])


class TestResidual:
    def test_single_tree_is_outcome(self, rng):
        y = rng.normal(size=7)
        X = rng.normal(size=(7, 2))
        assert_array_equal(residual_j(y, Forest([Tree(3.0)]), 0, X), y)

    def test_initial_stumps(self, rng):
        y = rng.normal(size=9)
        X = rng.normal(size=(9, 2))
        forest = Forest.constant(4, y.mean() / 4)
        assert_allclose(residual_j(y, forest, 0, X), y - 3 * y.mean() / 4, rtol=0, atol=1e-14)

    def test_identity(self, rng):
        X = rng.normal(size=(30, 3))
        trees = [random_tree(rng, X) for _ in range(5)]
        forest = Forest(trees)
        y = rng.normal(size=30)
        for j in range(5):
            r = residual_j(y, forest, j, X)
            assert_allclose(y - r - (forest.predict(X) - trees[j].predict(X)), 0, atol=1e-12)

    def test_exact_forest(self, rng):
        X = rng.normal(size=(20, 2))
        trees = [random_tree(rng, X) for _ in range(3)]
        y = Forest(trees).predict(X)
        assert_allclose(residual_j(y, Forest(trees), 1, X), trees[1].predict(X), atol=1e-12)

    @pytest.mark.parametrize("j", [-1, 2])
    def test_bad_index(self, j):
        with pytest.raises(IndexError):
            residual_j(np.zeros(2), Forest.constant(2, 0.0), j, np.zeros((2, 1)))


class TestLeafMarginal:
    def test_empty(self):
        assert leaf_marginal_loglik([], 1.0, 1.0) == 0.0

    def test_single_zero_residual(self):
        # N(0; 0, 2) after integrating out the mean
        assert leaf_marginal_loglik([0.0], 1.0, 1.0) == pytest.approx(-1.26551, abs=1e-5)
        assert quad_leaf_loglik([0.0], 1.0, 1.0, 0.0) == pytest.approx(-1.26551, abs=1e-5)

    @pytest.mark.parametrize("seed", range(8))
    def test_quadrature(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 15))
        r = rng.normal(0.3, 1.5, n)
        s2 = rng.uniform(0.2, 3.0, n) if seed % 2 else float(rng.uniform(0.2, 3.0))
        sigma_mu, mu_mu = rng.uniform(0.1, 2.0), rng.normal()
        assert_allclose(
            leaf_marginal_loglik(r, s2, sigma_mu, mu_mu), quad_leaf_loglik(r, s2, sigma_mu, mu_mu),
            rtol=0, atol=1e-8,
        )

    def test_node_loglik_differences(self, rng):
        # the dropped terms depend only on individual observations
        r = rng.normal(size=10)
        full = leaf_marginal_loglik(r[:4], 0.7, 0.4) + leaf_marginal_loglik(r[4:], 0.7, 0.4)
        base = leaf_marginal_loglik(r, 0.7, 0.4)
        W = lambda k: k / 0.7  # noqa: E731
        S = lambda x: x.sum() / 0.7  # noqa: E731
        short = (
            node_loglik(W(4), S(r[:4]), 0.4) + node_loglik(W(6), S(r[4:]), 0.4)
            - node_loglik(W(10), S(r), 0.4)
        )
        assert_allclose(full - base, short, atol=1e-12)

    def test_precision_limit(self):
        # a near-infinite variance observation carries no information
        a = leaf_marginal_loglik([1.3, 50.0], [1.0, 1e12], 0.8)
        b = leaf_marginal_loglik([1.3], 1.0, 0.8) + stats.norm.logpdf(50.0, 0, 1e6)
        assert a == pytest.approx(b, abs=1e-6)


def _setup(rng, n=None, p=None):
    n = int(rng.integers(10, 51)) if n is None else n
    p = int(rng.integers(1, 5)) if p is None else p
    X = np.round(rng.normal(size=(n, p)), 1)
    tree = random_tree(rng, X, max_leaves=5)
    leaf_of = tree.route(X)
    resid = rng.normal(size=n)
    prec = np.full(n, 1 / rng.uniform(0.3, 2.0))
    hp = Hyperparams(sigma_mu=float(rng.uniform(0.1, 1.0)))
    return X, tree, leaf_of, resid, prec, hp


def _random_grow(rng, X, tree, leaf_of):
    """A random legal split of a random leaf, or None."""
    for _ in range(50):
        leaves = tree.leaves()
        leaf = leaves[int(rng.integers(len(leaves)))]
        rows = np.flatnonzero(leaf_of == leaf)
        eta = cut_counts(X[rows])
        avail = np.flatnonzero(eta)
        if avail.size:
            v = int(avail[rng.integers(avail.size)])
            vals = np.unique(X[rows, v])
            k = int(rng.integers(eta[v]))
            return leaf, v, 0.5 * (vals[k] + vals[k + 1])
    return None


class TestGrowPrune:
    def test_transition_worked_example(self):
        assert math.exp(grow_log_transition(0.25, 0.25, 1, 3, 10, 1)) == pytest.approx(30.0)

    def test_stump_grow_scores(self, rng):
        X = _grid(11, 3, rng)
        n = X.shape[0]
        hp = Hyperparams()
        prec = np.ones(n)
        leaf_of = np.zeros(n, dtype=np.int64)
        prop = score_grow(Tree(), 0, 1, 4.5, leaf_of, rng.normal(size=n), prec, X, hp)
        # only grow is legal on a stump; after it, prune competes with grow and change
        assert math.exp(prop.log_transition) == pytest.approx(30 * 0.25 / 0.9)
        assert math.exp(prop.log_structure) == pytest.approx(0.36822, abs=5e-6)

    def test_closed_form_likelihood_ratio(self, rng):
        for _ in range(200):
            X, tree, leaf_of, resid, prec, hp = _setup(rng)
            pick = _random_grow(rng, X, tree, leaf_of)
            if pick is None:
                continue
            leaf, v, cut = pick
            prop = score_grow(tree, leaf, v, cut, leaf_of, resid * prec, prec, X, hp)
            rows = leaf_of == leaf
            left = rows & (X[:, v] < cut)
            right = rows & ~(X[:, v] < cut)
            s2 = 1 / prec[0]
            closed = closed_form_grow_loglr(resid[left], resid[right], s2, hp.sigma_mu)
            composed = (
                leaf_marginal_loglik(resid[left], s2, hp.sigma_mu)
                + leaf_marginal_loglik(resid[right], s2, hp.sigma_mu)
                - leaf_marginal_loglik(resid[rows], s2, hp.sigma_mu)
            )
            assert abs(closed - composed) < 1e-10
            assert abs(prop.log_likelihood - composed) < 1e-10

    def test_reversibility(self, rng):
        checked = 0
        for _ in range(300):
            X, tree, leaf_of, resid, prec, hp = _setup(rng)
            pick = _random_grow(rng, X, tree, leaf_of)
            if pick is None:
                continue
            leaf, v, cut = pick
            rprec = resid * prec
            fwd = score_grow(tree, leaf, v, cut, leaf_of, rprec, prec, X, hp)
            assert not fwd.forced
            new_leaf_of = leaf_of.copy()
            new_leaf_of[fwd.rows] = fwd.assign
            back = score_prune(fwd.tree, leaf, new_leaf_of, rprec, prec, X, hp)
            assert back.tree == tree
            for part in ("log_transition", "log_likelihood", "log_structure"):
                assert abs(getattr(fwd, part) + getattr(back, part)) < 1e-10
            checked += 1
        assert checked > 200

    def test_n_min_forces_reject(self, rng):
        X = _grid(10, 1, rng)
        leaf_of = np.zeros(10, dtype=np.int64)
        prop = score_grow(Tree(), 0, 0, 0.5, leaf_of, np.zeros(10), np.ones(10), X, Hyperparams(), 2)
        assert prop.forced and prop.log_ratio == -math.inf
        assert not accept_or_reject(prop, rng)

    def test_grow_without_prune_is_rejected(self, rng):
        # with prune disabled the reverse move has probability zero
        X = _grid(10, 2, rng)
        hp = Hyperparams(move_probs=(1, 0, 0, 0))
        leaf_of = np.zeros(10, dtype=np.int64)
        prop = propose(Tree(), leaf_of, rng.normal(size=10), np.ones(10), X, hp, 1, rng)
        assert prop.kind == "grow" and prop.forced

    def test_no_splittable_variable(self, rng):
        X = np.ones((12, 2))
        prop = propose(Tree(), np.zeros(12, dtype=np.int64), np.zeros(12), np.ones(12), X,
                       Hyperparams(), 1, rng)
        assert prop.forced


class TestChangeSwap:
    def test_same_rule_ratio_one(self, rng):
        for _ in range(50):
            X, tree, leaf_of, resid, prec, hp = _setup(rng)
            internals = tree.internals()
            if not internals:
                continue
            k = internals[int(rng.integers(len(internals)))]
            var, cut = tree.rule(k)
            prop = score_change(tree, k, var, cut, leaf_of, resid * prec, prec, X, hp)
            assert prop.log_ratio == pytest.approx(0.0, abs=1e-12)
            assert accept_or_reject(prop, rng)

    def test_moves_keep_tree_valid(self, rng):
        for _ in range(200):
            X, tree, leaf_of, resid, prec, hp = _setup(rng)
            prop = propose(tree, leaf_of, resid, prec, X, hp, 1, rng)
            if prop is None or prop.forced:
                continue
            assert np.isfinite(prop.log_transition)
            assert np.isfinite(prop.log_likelihood)
            assert np.isfinite(prop.log_structure)
            prop.tree.check()
            moved = leaf_of.copy()
            moved[prop.rows] = prop.assign
            assert_array_equal(moved, prop.tree.route(X))


class TestAccept:
    def test_forced_and_none(self, rng):
        assert not accept_or_reject(None, rng)
        assert not accept_or_reject(Proposal("grow", None, forced=True), rng)

    @pytest.mark.parametrize("r", [0.05, 0.3, 0.8, 2.0])
    def test_frequency(self, r):
        rng = np.random.default_rng(5)
        prop = Proposal("change", Tree(), log_transition=math.log(r))
        hits = sum(accept_or_reject(prop, rng) for _ in range(100_000))
        assert abs(hits / 100_000 - min(1.0, r)) < 0.005


class TestConjugateDraws:
    def test_leaf_posterior_example(self):
        rng = np.random.default_rng(11)
        tree = Tree()
        hp = Hyperparams(sigma_mu=1.0)
        draws = np.array([
            draw_leaf_means(tree, np.zeros(2, dtype=np.int64), np.array([0.5, 1.5]), np.ones(2), hp, rng)[0]
            for _ in range(20_000)
        ])
        assert abs(draws.mean() - 2 / 3) < 3 * math.sqrt(1 / 3 / 20_000)
        assert draws.var() == pytest.approx(1 / 3, rel=0.03)

    def test_empty_leaf_draws_prior(self, rng):
        tree = Tree.from_records(["I 0 0.5", "L 0", "L 0"])
        hp = Hyperparams(sigma_mu=0.7, mu_mu=0.2)
        vals = []
        for _ in range(10_000):
            draw_leaf_means(tree, np.full(3, tree.left[0]), np.ones(3), np.ones(3), hp, rng)
            vals.append(tree.mu[tree.right[0]])
        assert abs(np.mean(vals) - 0.2) < 3 * 0.7 / 100
        assert np.std(vals) == pytest.approx(0.7, rel=0.03)

    def test_large_leaf_tracks_data(self, rng):
        n = 10**6
        resid = np.full(n, 0.37)
        hp = Hyperparams(sigma_mu=0.1)
        leaf_of = np.zeros(n, dtype=np.int64)
        draws = [draw_leaf_means(Tree(), leaf_of, resid, np.ones(n), hp, rng)[0] for _ in range(200)]
        sd = math.sqrt(1 / (n + 100))
        assert abs(np.mean(draws) - 0.37) < 3 * sd

    def test_equal_precisions_reduce_to_homoscedastic(self, rng):
        tree = Tree()
        hp = Hyperparams(sigma_mu=0.5, mu_mu=0.1)
        resid = rng.normal(size=8)
        leaf_of = np.zeros(8, dtype=np.int64)
        a = draw_leaf_means(tree, leaf_of, resid, np.full(8, 1 / 0.3), hp, np.random.default_rng(1))
        # textbook form: mean (s_mu^2 sum R + s2 mu_mu)/(n s_mu^2 + s2)
        s2, a2 = 0.3, 0.25
        mean = (a2 * resid.sum() + s2 * 0.1) / (8 * a2 + s2)
        sd = math.sqrt(s2 * a2 / (8 * a2 + s2))
        z = np.random.default_rng(1).standard_normal()
        assert_allclose(a[0], mean + sd * z, rtol=1e-12)

    def test_sigma2_parameters(self):
        hp = Hyperparams(nu=3.0, lam=1.0)
        assert sigma2_posterior([1.0, -1.0], hp) == (2.5, 2.5)
        assert sigma2_posterior([], hp) == (1.5, 1.5)

    def test_sigma2_goodness_of_fit(self):
        rng = np.random.default_rng(3)
        hp = Hyperparams(nu=3.0, lam=1.0)
        draws = np.array([draw_sigma2([1.0, -1.0], hp, rng) for _ in range(100_000)])
        assert stats.kstest(draws, stats.invgamma(2.5, scale=2.5).cdf).pvalue > 1e-3

    def test_latents(self, rng):
        y = np.array([1, 0, 1, 0] * 500)
        z = augment_latents(y, rng.normal(size=y.size), rng)
        assert np.all((z > 0) == (y == 1))


def _friedman(n, seed):
    ds = simulate_friedman_like(n, seed)
    y, _ = scale_outcome(ds.y)
    return y, ds.x


class TestRunMCMC:
    def test_initial_state(self):
        y, X = _friedman(40, 0)
        hp = calibrate_continuous(y, X, m=4)
        chain = Chain(y, X, hp, MCMCConfig(iters=2, burn_in=1))
        assert all(t.n_leaves == 1 for t in chain.trees)
        assert_allclose([t.mu[0] for t in chain.trees], y.mean() / 4)
        assert_allclose(residual_j(y, chain.forest, 0, X), y - 3 * y.mean() / 4, atol=1e-14)

    @pytest.mark.parametrize("iters,burn,thin", [(30, 10, 1), (31, 10, 4), (12, 0, 5)])
    def test_kept_count(self, iters, burn, thin):
        y, X = _friedman(40, 1)
        hp = calibrate_continuous(y, X, m=5)
        d = run_mcmc(y, X, hp, MCMCConfig(iters=iters, burn_in=burn, thin=thin))
        assert d.n_draws == (iters - burn) // thin == len(d.forests)
        assert d.sigma2_trace.size == iters
        assert_array_equal(d.sigma2, d.sigma2_trace[d.kept_iters])

    def test_deterministic(self):
        y, X = _friedman(60, 2)
        hp = calibrate_continuous(y, X, m=10)
        cfg = MCMCConfig(iters=40, burn_in=10, seed=9)
        a, b = run_mcmc(y, X, hp, cfg), run_mcmc(y, X, hp, cfg)
        assert_array_equal(a.sigma2_trace, b.sigma2_trace)
        assert_array_equal(a.train_pred, b.train_pred)
        c = run_mcmc(y, X, hp, MCMCConfig(iters=40, burn_in=10, seed=10))
        assert not np.array_equal(a.sigma2_trace, c.sigma2_trace)

    def test_running_fit_matches_forest(self):
        y, X = _friedman(80, 3)
        hp = calibrate_continuous(y, X, m=8)

        def check(chain):
            assert_allclose(chain.G, chain.forest.predict(X), atol=1e-12)
            for j, t in enumerate(chain.trees):
                assert_array_equal(chain.leaf_of[j], t.route(X))
                assert np.bincount(chain.leaf_of[j])[t.leaves()].min() >= chain.config.n_min

        run_mcmc(y, X, hp, MCMCConfig(iters=40, burn_in=5), callback=check)

    def test_acceptance_rates_interior(self):
        y, X = _friedman(300, 4)
        hp = calibrate_continuous(y, X, m=20)
        d = run_mcmc(y, X, hp, MCMCConfig(iters=150, burn_in=50, keep_forests=False))
        for move, rate in d.acceptance_rates().items():
            assert 0 < rate < 1, move

    def test_frozen_stump_conjugate(self):
        rng = np.random.default_rng(8)
        y = rng.normal(0.2, 0.5, 25)
        X = rng.normal(size=(25, 1))
        hp = Hyperparams(sigma_mu=0.3, mu_mu=0.05, m=1, lam=1.0, move_probs=(0, 0, 0, 0))
        d = run_mcmc(y, X, hp, MCMCConfig(iters=4000, burn_in=0, sigma2_fixed=0.25,
                                          keep_forests=False))
        post_var = 1 / (25 / 0.25 + 1 / 0.09)
        post_mean = post_var * (y.sum() / 0.25 + 0.05 / 0.09)
        mu = d.train_pred[:, 0]
        assert abs(mu.mean() - post_mean) < 3 * math.sqrt(post_var / mu.size)
        assert mu.var() == pytest.approx(post_var, rel=0.08)

    def test_binary_sign_invariant(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(120, 2))
        y = (X[:, 0] + rng.normal(size=120) > 0).astype(float)
        hp = calibrate_binary(m=10)

        def check(chain):
            assert np.all((chain.z > 0) == (y == 1))
            assert chain.sigma2 == 1.0

        d = run_mcmc(y, X, hp, MCMCConfig(iters=30, burn_in=5), binary=True, callback=check)
        assert np.all(d.sigma2 == 1.0)

    def test_prior_only_chain_ignores_data(self):
        # an infinite noise variance makes every likelihood ratio exactly one
        rng = np.random.default_rng(2)
        X = rng.normal(size=(50, 2))
        hp = Hyperparams(m=1)
        cfg = MCMCConfig(iters=20, burn_in=0, sigma2_fixed=math.inf, n_min=1)
        a = run_mcmc(rng.normal(size=50), X, hp, cfg)
        b = run_mcmc(100 + rng.normal(size=50), X, hp, cfg)
        assert [f.to_records()[1:] for f in a.forests][-1] != []
        assert [str(t.to_records()) for f in a.forests for t in f.unpack()] == [
            str(t.to_records()) for f in b.forests for t in f.unpack()
        ]

    @pytest.mark.parametrize(
        "kwargs", [dict(iters=10, burn_in=10), dict(thin=0), dict(n_min=0), dict(sigma2_fixed=-1.0)]
    )
    def test_bad_config(self, kwargs):
        with pytest.raises(ValueError):
            MCMCConfig(**kwargs)

    def test_continuous_needs_lambda(self):
        with pytest.raises(ValueError, match="lam"):
            Chain(np.zeros(3), np.zeros((3, 1)), Hyperparams(), MCMCConfig(iters=2, burn_in=0))
