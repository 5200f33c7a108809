import numpy as np
import pytest
from hypothesis import given, strategies as st

from beamsec.channel import CouplingProfile, SystemDims, synth_coupling
from beamsec.detequiv import (de_fixed_point, de_secrecy_lower_bound, de_terms, de_user_rate, eta, eta_tilde,
                              fixed_point_residual)
from beamsec.errors import ConvergenceError, DimensionError
from beamsec.rates import interference_covs, user_rate_mc

from conftest import random_instance

OM = np.array([[1.0, 2.0], [3.0, 4.0]])


def test_eta_examples():
    assert np.array_equal(eta(OM, [1.0, 1.0]), [4.0, 6.0])
    assert np.array_equal(eta(OM, [0.0, 0.0]), [0.0, 0.0])
    assert np.array_equal(eta(OM, [1.0, 2.0]), [7.0, 10.0])


def test_eta_tilde_examples():
    assert np.array_equal(eta_tilde(OM, [1.0, 1.0]), [3.0, 7.0])
    assert np.array_equal(eta_tilde(OM, [0.0, 0.0]), [0.0, 0.0])
    assert np.array_equal(eta_tilde(OM, [2.0, 1.0]), [4.0, 10.0])


def test_eta_shape_mismatch():
    with pytest.raises(DimensionError):
        eta(OM, [1.0, 2.0, 3.0])


def test_zero_power_collapses_in_one_iteration():
    kbar = np.array([1.5, 2.0])
    st_ = de_fixed_point(OM, np.zeros(2), kbar)
    assert st_.iterations == 1
    assert np.array_equal(st_.phi_de, [1.0, 1.0]) and np.array_equal(st_.phi_tilde_de, [1.0, 1.0])
    assert np.array_equal(st_.gamma_tilde, [0.0, 0.0])
    assert np.allclose(st_.gamma, eta(OM, 1.0 / kbar))


@pytest.mark.parametrize("omega,p", [(1.0, 1.0), (0.3, 10.0), (2.5, 0.01)])
def test_scalar_fixed_point_matches_quadratic(omega, p):
    # with kbar = 1 the two equations are symmetric: phi = phi_tilde = 1 + a / phi, a = omega * p
    a = omega * p
    root = (1.0 + np.sqrt(1.0 + 4.0 * a)) / 2.0
    st_ = de_fixed_point([[omega]], [p], [1.0])
    assert st_.phi_de[0] == pytest.approx(root, rel=1e-9)
    assert st_.phi_tilde_de[0] == pytest.approx(root, rel=1e-9)
    assert fixed_point_residual([[omega]], [p], [1.0], st_) <= 1e-10


@given(st.integers(0, 2**31 - 1))
def test_fixed_point_self_consistency(seed):
    r = np.random.default_rng(seed)
    omegas, _ = random_instance(r, K=3, N_r=3, M=6, scale=r.uniform(0.1, 5))
    alloc = r.uniform(0, 5, size=(3, 6))
    kbar = interference_covs(alloc, omegas)
    st_ = de_fixed_point(omegas, alloc, kbar, xi1=1e-10)
    assert fixed_point_residual(omegas, alloc, kbar, st_) <= 1e-9


def test_trace_hook_and_residual_decay(rng):
    omegas, _ = random_instance(rng, K=1, N_r=4, M=32)
    seen = []
    st_ = de_fixed_point(omegas[0], rng.uniform(0, 3, 32), np.ones(4), trace=lambda it, r: seen.append((it, r)))
    assert [it for it, _ in seen] == list(range(1, st_.iterations + 1))
    assert seen[-1][1] <= 1e-10
    # the residual keeps shrinking after a short burn-in
    res = [r for _, r in seen]
    assert all(res[u + 5] < res[u] for u in range(3, len(res) - 5))


def test_iteration_cap_raises():
    with pytest.raises(ConvergenceError):
        de_fixed_point(OM, [5.0, 5.0], [1.0, 1.0], max_iter=2)


def test_zero_power_rate_equals_log_det_kbar():
    kbar = np.array([1.7, 3.2])
    st_ = de_fixed_point(OM, np.zeros(2), kbar)
    assert de_user_rate(st_, np.zeros(2), kbar) == pytest.approx(np.log2(kbar).sum(), abs=1e-14)


def test_rate_matches_monte_carlo_at_desk_scale():
    dims = SystemDims(M=64, K=1, N_r=2, N_e=1)
    omegas, _ = synth_coupling(dims, CouplingProfile("uniform"))
    alloc = np.full((1, 64), 10.0 / 64)
    st_ = de_fixed_point(omegas[0], alloc[0], np.ones(2))
    de = de_user_rate(st_, alloc[0], np.ones(2))
    mc, se = user_rate_mc(alloc, 0, omegas[0], 20_000, 17)
    assert abs(de - mc) <= max(0.02 * mc, 3 * se)


def test_rate_nondecreasing_in_each_power(rng):
    omega = rng.exponential(size=(3, 5)) + 0.1
    lam = rng.uniform(0, 2, 5)
    kbar = np.array([1.0, 1.5, 2.0])
    base = de_user_rate(de_fixed_point(omega, lam, kbar, xi1=1e-13), lam, kbar)
    for m in range(5):
        bumped = lam.copy()
        bumped[m] += 1e-4
        assert de_user_rate(de_fixed_point(omega, bumped, kbar, xi1=1e-13), bumped, kbar) >= base - 1e-12


@given(st.integers(0, 2**31 - 1))
def test_sum_rate_concave_along_segments(seed):
    r = np.random.default_rng(seed)
    omegas, omega_eve = random_instance(r, K=2, N_r=2, M=4)
    a, b = r.uniform(0, 3, size=(2, 2, 4))
    h = 0.05

    def f(t):
        return de_terms(a + t * (b - a), omegas, omega_eve, xi1=1e-13).r1.sum()

    for t in (0.2, 0.5, 0.8):
        assert f(t + h) + f(t - h) - 2 * f(t) <= 1e-9


def test_secrecy_bound_zero_allocation(rng):
    omegas, omega_eve = random_instance(rng)
    value, terms = de_secrecy_lower_bound(np.zeros((2, 4)), omegas, omega_eve)
    assert value == 0 and np.all(terms == 0)


def test_secrecy_bound_without_eavesdropper(rng):
    omegas, _ = random_instance(rng, K=1, M=4)
    alloc = rng.uniform(size=(1, 4))
    value, terms = de_secrecy_lower_bound(alloc, omegas, np.zeros((2, 4)))
    st_ = de_fixed_point(omegas[0], alloc[0], np.ones(2))
    assert value == pytest.approx(de_user_rate(st_, alloc[0], np.ones(2)), rel=1e-12)


def test_clamping_only_drops_negative_terms(rng):
    omegas, omega_eve = random_instance(rng, K=3, M=4)
    omega_eve = omega_eve * 50
    t = de_terms(rng.uniform(size=(3, 4)), omegas, omega_eve)
    assert t.lower_bound == pytest.approx(t.terms[t.terms > 0].sum())
    assert t.objective <= t.lower_bound
