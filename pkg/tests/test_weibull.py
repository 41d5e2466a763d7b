import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from evmachine.errors import DegenerateTail, InvalidParameter, NonPositiveValue, TooFewSamples, ZeroMarginWarning
from evmachine.weibull import fit_weibull, fit_weibull_batch, weibull_loglik, weibull_survival

# Reference MLE of the two-point tail [1.0, 1.5], solved at 40 significant
# digits with mpmath from the profile-likelihood equation.
TAIL_1_15_KAPPA = 5.917543168413397
TAIL_1_15_LAM = 1.353933716575179


def test_recovers_weibull_2_1():
    x = stats.weibull_min.rvs(2.0, scale=1.0, size=10_000, random_state=np.random.default_rng(20))
    fit = fit_weibull(x)
    assert fit.converged
    assert 1.94 <= fit.kappa <= 2.06
    assert 0.98 <= fit.lam <= 1.02


def test_recovers_exponential():
    x = np.random.default_rng(21).exponential(2.0, size=10_000)
    fit = fit_weibull(x)
    assert 0.97 <= fit.kappa <= 1.03
    assert 1.94 <= fit.lam <= 2.06


def test_matches_scipy_mle():
    x = stats.weibull_min.rvs(3.5, scale=0.7, size=500, random_state=np.random.default_rng(5))
    kappa, _, lam = stats.weibull_min.fit(x, floc=0)
    fit = fit_weibull(x)
    assert fit.kappa == pytest.approx(kappa, rel=1e-4)
    assert fit.lam == pytest.approx(lam, rel=1e-4)


def test_two_point_tail_matches_high_precision_oracle():
    fit = fit_weibull([1.0, 1.5])
    assert fit.kappa == pytest.approx(TAIL_1_15_KAPPA, rel=1e-9)
    assert fit.lam == pytest.approx(TAIL_1_15_LAM, rel=1e-9)


def test_errors():
    with pytest.raises(DegenerateTail):
        fit_weibull([1.0, 1.0, 1.0])
    with pytest.raises(TooFewSamples):
        fit_weibull([1.0])
    with pytest.raises(NonPositiveValue):
        fit_weibull([1.0, -2.0])


def test_zero_values_are_clamped_with_warning():
    with pytest.warns(ZeroMarginWarning):
        fit = fit_weibull([0.0, 1.0, 2.0, 3.0])
    assert math.isfinite(fit.kappa) and fit.kappa > 0


def test_batch_marks_degenerate_rows():
    kappa, lam, converged, degenerate = fit_weibull_batch(np.array([[1.0, 1.5], [2.0, 2.0]]))
    assert degenerate.tolist() == [False, True]
    assert converged[0] and np.isnan(kappa[1]) and np.isnan(lam[1])


def test_batch_agrees_with_single_fits():
    rng = np.random.default_rng(3)
    tails = np.sort(rng.weibull(1.7, size=(30, 40)) * 2.5, axis=1)
    kappa, lam, _, _ = fit_weibull_batch(tails)
    for row, k, l in zip(tails, kappa, lam):
        fit = fit_weibull(row)
        assert (fit.kappa, fit.lam) == (k, l)


def test_survival_examples():
    assert weibull_survival(0.0, 3.0, 2.0) == 1.0
    assert weibull_survival(2.0, 7.0, 2.0) == pytest.approx(math.exp(-1), abs=1e-15)
    assert weibull_survival(4.0, 1.0, 2.0) == pytest.approx(0.135335283, rel=1e-8)
    with pytest.raises(InvalidParameter):
        weibull_survival(1.0, 0.0, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.3, 10.0), st.floats(0.05, 20.0))
def test_survival_non_increasing(kappa, lam):
    d = np.linspace(0, 5 * lam, 2000)
    s = weibull_survival(d, kappa, lam)
    assert np.all(np.diff(s) <= 0)
    assert s[0] == 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 1e3))
def test_scale_equivariance(seed, c):
    tail = np.random.default_rng(seed).weibull(2.0, size=50) + 0.01
    a, b = fit_weibull(tail), fit_weibull(c * tail)
    assert b.kappa == pytest.approx(a.kappa, rel=1e-5)
    assert b.lam == pytest.approx(c * a.lam, rel=1e-5)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    tail = rng.weibull(1.3, size=25) + 0.05
    a, b = fit_weibull(tail), fit_weibull(rng.permutation(tail))
    assert b.kappa == pytest.approx(a.kappa, rel=1e-9)
    assert b.lam == pytest.approx(a.lam, rel=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_loglik_is_local_max_on_grid(seed):
    rng = np.random.default_rng(100 + seed)
    tail = rng.weibull(rng.uniform(0.8, 5), size=12) * rng.uniform(0.5, 3)
    fit = fit_weibull(tail)
    best = weibull_loglik(tail, fit.kappa, fit.lam)
    for k in np.linspace(0.8 * fit.kappa, 1.2 * fit.kappa, 50):
        for l in np.linspace(0.8 * fit.lam, 1.2 * fit.lam, 50):
            assert weibull_loglik(tail, k, l) <= best + 1e-9
