import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ks_2samp

from levybank.core import TimeGrid
from levybank.stable import (_standard_one_sided, increment_scale,
                             laplace_exponent, sample_stable_increment,
                             sample_subordinator_path, validate_sampler)


def rng_of(seed):
    return np.random.Generator(np.random.PCG64(seed))


def test_laplace_exponent_values():
    # lam^alpha gamma^alpha / cos(pi alpha / 2)
    assert laplace_exponent(0.75, 1.0, 1.0) == pytest.approx(
        2.6131259297527527, rel=1e-14)
    assert laplace_exponent(0.75, 2.0, 1.0) == pytest.approx(
        2 ** 0.75 * 2.6131259297527527, rel=1e-14)
    assert laplace_exponent(0.55, 1.0, 0.0) == 0.0


def test_increment_scale_values():
    assert increment_scale(0.75, 1.0, 1e-3) == pytest.approx(
        0.0003599264690303996, rel=1e-14)
    # linear in gamma_bar, dt^{1/alpha} scaling
    assert increment_scale(0.75, 3.0, 1e-3) == pytest.approx(
        3 * increment_scale(0.75, 1.0, 1e-3), rel=1e-14)
    assert increment_scale(0.5, 1.0, 0.25) == pytest.approx(
        0.25 ** 2 * increment_scale(0.5, 1.0, 1.0), rel=1e-14)


def test_unit_sampler_laplace_pins():
    """Kanter construction: E[exp(-lam S)] = exp(-lam^alpha)."""
    pins = [(0.55, 1.0, 0.36787944117144233),
            (0.75, 1.0, 0.36787944117144233),
            (0.75, 2.0, 0.18604013843591524),
            (0.85, 0.5, 0.574195851569996)]
    n = 200000
    for alpha, lam, want in pins:
        s = _standard_one_sided(alpha, rng_of(1234), n)
        emp = np.exp(-lam * s)
        se = emp.std(ddof=1) / math.sqrt(n)
        assert abs(emp.mean() - want) <= 4 * se, (alpha, lam)


def test_increment_laplace_full():
    """Full increments: E[exp(-lam L_1)] = exp(-gamma^a lam^a / cos(pi a/2))."""
    n = 100000
    draws = sample_stable_increment(0.75, 1.0, 1.0, rng_of(7), size=n)
    emp = np.exp(-draws)
    se = emp.std(ddof=1) / math.sqrt(n)
    assert abs(emp.mean() - 0.07330503883986966) <= 4 * se


def test_dt_additivity_in_law():
    """Sum of 10 dt=0.1 increments must match one dt=1 increment in law."""
    n = 20000
    parts = sample_stable_increment(0.65, 1.0, 0.1, rng_of(3), size=n * 10)
    whole = sample_stable_increment(0.65, 1.0, 1.0, rng_of(4), size=n)
    assert ks_2samp(parts.reshape(n, 10).sum(axis=1), whole).pvalue > 0.01


def test_gamma_bar_exact_ratio():
    a = sample_stable_increment(0.75, 1.0, 0.5, rng_of(11), size=1000)
    b = sample_stable_increment(0.75, 2.0, 0.5, rng_of(11), size=1000)
    np.testing.assert_array_equal(2.0 * a, b)


def test_positivity():
    draws = sample_stable_increment(0.55, 1.0, 1e-3, rng_of(5), size=1000000)
    assert draws.min() > 0.0
    assert np.isfinite(draws).all()


def test_scalar_draw():
    x = sample_stable_increment(0.75, 1.0, 1e-3, rng_of(1))
    assert np.isscalar(x) or np.ndim(x) == 0
    assert float(x) > 0.0


def test_subordinator_path_properties(spec3):
    grid = TimeGrid(0.0, 1.0, 1e-3)
    path = sample_subordinator_path(spec3, grid, seed=12)
    assert path.values.shape == (1001,)
    assert path.values[0] == 0.0
    assert (np.diff(path.values) > 0.0).all()
    again = sample_subordinator_path(spec3, grid, seed=12)
    np.testing.assert_array_equal(path.values, again.values)
    other = sample_subordinator_path(spec3, grid, seed=13)
    assert not np.array_equal(path.values, other.values)
    np.testing.assert_allclose(path.increments(), np.diff(path.values))


def test_increment_rank_independence():
    """Rank correlation of consecutive increments stays near zero.

    Plain autocorrelation is useless here (infinite variance), ranks are not.
    """
    draws = sample_stable_increment(0.65, 1.0, 1e-3, rng_of(21), size=100001)
    ranks = np.argsort(np.argsort(draws)).astype(float)
    corr = np.corrcoef(ranks[:-1], ranks[1:])[0, 1]
    assert abs(corr) < 0.02


def test_validate_sampler_clean_run():
    rows = validate_sampler(0.75, 1.0, 50000, [0.0, 0.5, 1.0, 2.0], seed=0)
    assert len(rows) == 4
    zero = rows[0]
    assert zero.empirical == 1.0 and zero.analytic == 1.0
    assert zero.std_error == 0.0 and not zero.flagged
    for row in rows[1:]:
        assert not row.flagged
        assert abs(row.empirical - row.analytic) <= 3 * row.std_error


def test_validate_sampler_negative_control():
    """A 2% distortion of the analytic value must be flagged."""
    def wrong(lam):
        return math.exp(-laplace_exponent(0.75, 1.0, lam)) * 1.02

    rows = validate_sampler(0.75, 1.0, 50000, [0.5], seed=0, analytic_fn=wrong)
    assert rows[0].flagged


def test_validate_sampler_rejects_tiny_n():
    with pytest.raises(ValueError):
        validate_sampler(0.75, 1.0, 100, [1.0])


@settings(max_examples=20, deadline=None)
@given(alpha=st.floats(0.51, 0.99), dt=st.floats(1e-4, 1.0),
       seed=st.integers(0, 2 ** 32))
def test_increment_determinism(alpha, dt, seed):
    a = sample_stable_increment(alpha, 1.0, dt, rng_of(seed), size=8)
    b = sample_stable_increment(alpha, 1.0, dt, rng_of(seed), size=8)
    np.testing.assert_array_equal(a, b)
    assert (a > 0).all()
