import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from l2hmc.diagnostics import (TRUNCATION, AutocorrSeries, autocorrelation, chain_ess, ess,
                               mode_occupancy, multi_chain_ess, pooled_autocorrelation)


def ar1(phi, T, seed, dim=1):
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((T, dim)) * np.sqrt(1 - phi * phi)
    x = np.empty((T, dim))
    x[0] = rng.standard_normal(dim)
    for t in range(1, T):
        x[t] = phi * x[t - 1] + noise[t]
    return x


def naive_rho(x, mu, tr, t):
    c = x - mu
    return np.sum(c[: len(x) - t] * c[t:]) / (tr * (len(x) - t))


def test_fft_matches_direct_formula():
    x = ar1(0.7, 500, 0, dim=3)
    s = autocorrelation(x, np.zeros(3), 3.0)
    for t in range(len(s.values)):
        assert s.values[t] == pytest.approx(naive_rho(x, 0.0, 3.0, t), rel=1e-10, abs=1e-12)


def test_iid_rho0():
    x = np.random.default_rng(1).standard_normal((100_000, 2))
    s = autocorrelation(x, np.zeros(2), 2.0)
    assert abs(s.values[0] - 1) < 4 / np.sqrt(1e5)
    assert abs(ess(s).ess_per_step - 1) <= 0.1


def test_constant_chain():
    c = np.array([1.0, 2.0])
    s = autocorrelation(np.tile(c, (50, 1)), np.zeros(2), 2.0)
    np.testing.assert_allclose(s.values, 5 / 2)
    assert s.truncation_index == 50


def test_ar1_autocorrelation_and_ess():
    x = ar1(0.5, 100_000, 2)
    s = autocorrelation(x, [0.0], 1.0)
    for t in range(1, 5):
        assert abs(s.values[t] - 0.5 ** t) < 0.02
    assert abs(ess(s).ess_per_step - 0.3478) <= 0.03


def test_alternating_chain_truncates_immediately():
    x = np.array([[1.0], [-1.0]] * 50)
    s = autocorrelation(x, [0.0], 1.0)
    assert s.truncation_index == 1
    assert ess(s).ess_per_step == 1.0


def test_sample_moments_flagged():
    x = ar1(0.3, 200, 0)
    assert autocorrelation(x).sample_moments
    assert not autocorrelation(x, [0.0], 1.0).sample_moments


def test_empty_trace():
    with pytest.raises(ValueError):
        autocorrelation(np.zeros((0, 2)))


def test_per_gradient_ess():
    rep = ess(AutocorrSeries(np.array([1.0, 0.5]), 2), M=10, n_steps=100)
    assert rep.ess_per_step == pytest.approx(0.5)
    assert rep.ess_per_grad == pytest.approx(0.5 / 20)
    assert rep.n_grad_evals == 2000


@settings(max_examples=50, deadline=None)
@given(arrays(float, st.integers(2, 30), elements=st.floats(TRUNCATION, 1.0)),
       st.integers(1, 29), st.floats(0.0, 0.5))
def test_ess_monotone_and_bounded(rho, k, bump):
    rho = rho.copy()
    rho[0] = 1.0
    base = ess(AutocorrSeries(rho, len(rho))).ess_per_step
    assert 0 < base <= 1
    k = min(k, len(rho) - 1)
    rho[k] += bump
    assert ess(AutocorrSeries(rho, len(rho))).ess_per_step <= base


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.permutations(range(3)))
def test_permutation_invariance(seed, perm):
    x = ar1(0.6, 300, seed, dim=3)
    mu = np.array([0.1, -0.2, 0.3])
    a = autocorrelation(x, mu, 3.0)
    b = autocorrelation(x[:, perm], mu[list(perm)], 3.0)
    np.testing.assert_allclose(a.values, b.values, rtol=1e-12)


def test_pooled_equals_single_for_one_chain():
    x = ar1(0.5, 1000, 3)
    a = autocorrelation(x, [0.0], 1.0)
    b = pooled_autocorrelation([x], [0.0], 1.0)
    np.testing.assert_allclose(a.values, b.values, rtol=1e-12)


def test_multi_chain_summary():
    chains = [ar1(0.5, 20_000, s) for s in range(4)]
    m = multi_chain_ess(chains, [0.0], np.eye(1))
    assert len(m.per_chain) == 4
    assert m.min <= m.mean <= m.max
    assert abs(m.pooled - 0.3478) < 0.03
    assert chain_ess(chains[0], [0.0], 1.0) == m.per_chain[0]


def test_mode_occupancy():
    c = np.array([[-2.0, 0.0], [2.0, 0.0]])
    np.testing.assert_array_equal(mode_occupancy(np.full((10, 2), [1.5, 0.3]), c), [0.0, 1.0])
    np.testing.assert_array_equal(mode_occupancy(np.zeros((3, 2)) - 1, c), [1.0, 0.0])
    np.testing.assert_array_equal(mode_occupancy(np.random.default_rng(0).normal(size=(5, 2)),
                                                 c[:1]), [1.0])
    rng = np.random.default_rng(0)
    x = c[rng.integers(0, 2, 10_000)] + rng.normal(size=(10_000, 2)) * 0.3
    occ = mode_occupancy(x, c)
    assert occ.sum() == pytest.approx(1.0)
    assert abs(occ[0] - 0.5) < 4 * 0.5 / np.sqrt(10_000)
    with pytest.raises(ValueError):
        mode_occupancy(x, np.zeros((0, 2)))
