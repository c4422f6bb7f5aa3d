import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import special, stats

from sumtrees.special import chi2_cdf, chi2_quantile, gammainc_lower


@pytest.mark.parametrize("a", [0.5, 1.0, 1.5, 3.0, 10.0, 55.0])
@pytest.mark.parametrize("x", [1e-8, 0.1, 1.0, 2.5, 9.0, 40.0, 120.0])
def test_gammainc_matches_scipy(a, x):
    assert_allclose(gammainc_lower(a, x), special.gammainc(a, x), rtol=1e-11, atol=1e-14)


@pytest.mark.parametrize("df", [1, 2, 3, 10, 30])
@pytest.mark.parametrize("q", [0.001, 0.05, 0.1, 0.5, 0.9, 0.999])
def test_chi2_quantile_matches_scipy(df, q):
    assert_allclose(chi2_quantile(q, df), stats.chi2.ppf(q, df), rtol=1e-9)


def test_chi2_quantile_three_df_tenth():
    assert_allclose(chi2_quantile(0.10, 3), 0.584375, atol=1e-6)


@settings(max_examples=60, deadline=None)
@given(q=st.floats(1e-6, 1 - 1e-6), df=st.floats(0.5, 80))
def test_quantile_inverts_cdf(q, df):
    x = chi2_quantile(q, df)
    assert_allclose(chi2_cdf(x, df), q, atol=1e-9)


def test_cdf_is_monotone():
    xs = np.linspace(0, 30, 301)
    vals = [chi2_cdf(x, 4.0) for x in xs]
    assert np.all(np.diff(vals) >= 0)


@pytest.mark.parametrize("q", [0.0, 1.0, -0.1, 1.5])
def test_quantile_rejects_endpoints(q):
    with pytest.raises(ValueError):
        chi2_quantile(q, 3)
