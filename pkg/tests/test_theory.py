import numpy as np
import pytest
from hypothesis import given, strategies as st

from beamsec.channel import substream
from beamsec.detequiv import de_terms
from beamsec.errors import ScopeError
from beamsec.optimizer import SolverConfig, Surrogate, single_user_water_filling
from beamsec.theory import (lemma1_check, lemma1_exact, oracle_projected_gradient, project_capped_simplex,
                            theorem1_rotation_test, theorem2_excluded_beams)

from conftest import random_instance


# -- beam exclusion ----------------------------------------------------------

def test_exclusion_example():
    rep = theorem2_excluded_beams([[[3.0, 1.0]]], [[2.0, 2.0]])
    assert rep.excluded == frozenset({(0, 1)})


def test_no_eavesdropper_excludes_nothing():
    assert theorem2_excluded_beams(np.ones((2, 1, 3)), np.zeros((1, 3))).excluded == frozenset()


def test_equal_gain_counts_as_excluded():
    assert (0, 0) in theorem2_excluded_beams([[[2.0, 5.0]]], [[1.0, 1.0], [1.0, 0.0]]).excluded


def test_exclusion_scope():
    with pytest.raises(ScopeError):
        theorem2_excluded_beams(np.ones((1, 2, 3)), np.ones((1, 3)))


# -- lemma -------------------------------------------------------------------

def test_lemma_degenerate_equality():
    chk = lemma1_exact([1.7], [1.0], 0.3, 2.0)
    assert abs(chk.lhs - chk.rhs) <= 1e-12
    mc = lemma1_check(lambda r, n: np.full(n, 2.5), 1.0, 1.0, 1000, substream(0, 0))
    assert abs(mc.lhs - mc.rhs) <= 1e-12


def test_lemma_two_point_enumeration():
    chk = lemma1_exact([0.0, 2.0], [0.5, 0.5], 1.0, 1.0)
    assert chk.lhs == pytest.approx(1 / 3, abs=1e-15)
    assert chk.rhs == pytest.approx(2 / 3, abs=1e-15)
    assert chk.holds


def test_lemma_exponential_monte_carlo():
    chk = lemma1_check(lambda r, n: r.exponential(1.0, n), 1.0, 1.0, 1_000_000, substream(1, 0), mean=1.0)
    assert chk.holds and chk.lhs < chk.rhs


@given(st.lists(st.floats(0, 50), min_size=1, max_size=6), st.floats(0.01, 10), st.floats(0.01, 10))
def test_lemma_holds_on_discrete_laws(values, a, b):
    probs = np.full(len(values), 1.0 / len(values))
    assert lemma1_exact(values, probs, a, b).holds


def test_lemma_rejects_bad_parameters():
    with pytest.raises(ValueError):
        lemma1_check(lambda r, n: r.exponential(1.0, n), 0.0, 1.0, 10, substream(0, 0))


# -- rotation test -----------------------------------------------------------

def test_identity_rotation_leaves_value_unchanged(rng):
    omegas, omega_eve = random_instance(rng, K=2, M=4)
    alloc = rng.uniform(size=(2, 4))
    rep = theorem1_rotation_test(omegas, omega_eve, alloc, trials=1, samples=300, rotations=[np.eye(4)])
    t = rep.trials[0]
    assert t.diag_value == pytest.approx(t.rotated_value, abs=1e-12)


def test_beam_permutation_equal_in_distribution():
    # with identical coupling on every beam, permuting beams does not change the law of the rate
    M = 4
    omegas = np.ones((2, 2, M))
    omega_eve = np.full((2, M), 0.3)
    alloc = np.array([[0.5, 1.0, 0.0, 0.2], [0.1, 0.0, 0.7, 0.4]])
    perm = np.eye(M)[[2, 0, 3, 1]]
    t = theorem1_rotation_test(omegas, omega_eve, alloc, trials=1, samples=4000, rotations=[perm], seed=3).trials[0]
    assert t.diag_value != t.rotated_value
    assert abs(t.diag_value - t.rotated_value) <= 3 * t.se


def test_diagonal_input_wins_on_small_instances(rng):
    omegas, omega_eve = random_instance(rng, K=2, M=8)
    alloc = rng.uniform(size=(2, 8))
    alloc *= 10 / alloc.sum()
    rep = theorem1_rotation_test(omegas, omega_eve, alloc, trials=10, samples=1000, seed=5)
    assert rep.win_rate >= 0.95 and rep.passed


# -- projection and oracle ---------------------------------------------------

@given(st.lists(st.floats(-5, 5), min_size=1, max_size=12), st.floats(0.01, 10))
def test_projection_feasible_and_nearest(v, P):
    v = np.array(v)
    x = project_capped_simplex(v, P)
    assert x.min() >= 0 and x.sum() <= P * (1 + 1e-12)
    r = np.random.default_rng(len(v))
    for _ in range(20):
        y = project_capped_simplex(r.normal(size=v.size) * 3, P)
        assert np.linalg.norm(v - x) <= np.linalg.norm(v - y) + 1e-12


def test_oracle_linear_objective_puts_all_power_on_argmax():
    c = np.array([0.2, 1.5, 0.7, 1.1])
    res = oracle_projected_gradient(lambda x: x @ c, (4,), 2.0, iters=2000)
    assert res.alloc[1] == pytest.approx(2.0, abs=1e-6)
    assert res.value == pytest.approx(3.0, abs=1e-5)


def test_oracle_quadratic_interior_optimum():
    target = np.array([0.2, 0.5, 0.1])

    def f(x):
        return -((x - target) ** 2).sum(axis=-1)

    res = oracle_projected_gradient(f, (3,), 2.0, iters=5000)
    assert np.abs(res.alloc - target).max() <= 1e-5


def test_oracle_matches_single_user_closed_form(rng):
    omegas, omega_eve = random_instance(rng, K=1, M=4)
    P = 3.0
    x0 = np.full((1, 4), P / 4)
    s = Surrogate.at(x0, de_terms(x0, omegas, omega_eve), omegas, omega_eve)
    ref, _ = single_user_water_filling(s.gamma[0], s.delta[0], P)
    res = oracle_projected_gradient(s.value, (1, 4), P, iters=20_000)
    assert np.abs(res.alloc[0] - ref).max() <= 1e-4


def test_oracle_zero_budget():
    res = oracle_projected_gradient(lambda x: x.sum(axis=-1), (3,), 0.0)
    assert np.all(res.alloc == 0) and res.iterations == 0
