import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose

from sumtrees.metrics import auc, coverage, rmse


def test_rmse_zero_iff_equal():
    y = np.array([1.0, -2.0, 3.5])
    assert rmse(y, y) == 0.0
    assert rmse(y, y + 1e-9) > 0.0


def test_rmse_value():
    assert_allclose(rmse([0, 0], [3, 4]), np.sqrt(12.5))


def test_auc_perfect():
    assert auc([0.9, 0.1], [1, 0]) == 1.0


def test_auc_ties_count_half():
    assert auc([0.5, 0.5], [1, 0]) == 0.5


def test_auc_matches_pair_count(rng):
    s = rng.normal(size=60).round(1)
    lab = rng.integers(0, 2, 60)
    pos, neg = s[lab == 1], s[lab == 0]
    pairs = (pos[:, None] > neg[None, :]).mean() + 0.5 * (pos[:, None] == neg[None, :]).mean()
    assert_allclose(auc(s, lab), pairs, rtol=1e-12)


def test_auc_single_class():
    with pytest.raises(ValueError, match="both classes"):
        auc([0.1, 0.2], [1, 1])


def test_length_mismatch():
    with pytest.raises(ValueError, match="length mismatch"):
        rmse([1, 2], [1])


def test_coverage_half():
    assert coverage([0, 0], [1, 1], [0.5, 2]) == 0.5


@settings(max_examples=50, deadline=None)
@given(arrays(np.int64, 30, elements=st.integers(-50, 50)), st.integers(0, 2**31))
def test_auc_monotone_invariant(ticks, seed):
    # a coarse grid keeps ties exact under the transforms
    scores = ticks / 10.0
    lab = np.random.default_rng(seed).integers(0, 2, 30)
    if lab.min() == lab.max():
        return
    assert auc(np.exp(scores), lab) == pytest.approx(auc(scores, lab))
    assert auc(3 * scores - 1, lab) == pytest.approx(auc(scores, lab))
