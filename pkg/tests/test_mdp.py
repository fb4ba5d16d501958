import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from conftest import random_mdp, random_policy

from mfomo.errors import StructuralError
from mfomo.mdp import (
    FiniteMdp,
    check_policy,
    greedy_policy,
    lp_oracle,
    occupation_constraints,
    policy_evaluation,
    policy_from_occupation,
    propagate_occupation,
    unvec,
    value_iteration,
    vec,
)


def _value_by_occupation(mdp, pi):
    d = propagate_occupation(mdp, pi)
    return float((d * mdp.rewards).sum())


def _deterministic_policies(S, A, T):
    for choice in itertools.product(range(A), repeat=S * (T + 1)):
        pi = np.zeros((T + 1, S, A))
        pi[np.repeat(np.arange(T + 1), S), np.tile(np.arange(S), T + 1), choice] = 1.0
        yield pi


def test_value_iteration_matches_brute_force(rng):
    for _ in range(10):
        S, A, T = rng.integers(1, 3, endpoint=True), rng.integers(1, 3, endpoint=True), rng.integers(0, 2, endpoint=True)
        mdp = random_mdp(rng, S, A, T)
        best = max(_value_by_occupation(mdp, pi) for pi in _deterministic_policies(S, A, T))
        assert value_iteration(mdp).mu0_value == pytest.approx(best, abs=1e-12)


def test_policy_evaluation_matches_occupation_sum(rng):
    for _ in range(20):
        mdp = random_mdp(rng, 3, 2, 4)
        pi = random_policy(rng, 3, 2, 4)
        assert policy_evaluation(mdp, pi).mu0_value == pytest.approx(_value_by_occupation(mdp, pi), abs=1e-12)


def test_greedy_policy_attains_optimal_value(rng):
    mdp = random_mdp(rng, 4, 3, 5)
    vt = value_iteration(mdp)
    assert policy_evaluation(mdp, greedy_policy(vt)).mu0_value == pytest.approx(vt.mu0_value, abs=1e-12)


def test_lp_oracle_agrees_with_dp(rng):
    mdp = random_mdp(rng, 3, 2, 3)
    value, d = lp_oracle(mdp)
    assert value == pytest.approx(value_iteration(mdp).mu0_value, abs=1e-9)
    pi = policy_from_occupation(d)
    assert policy_evaluation(mdp, pi).mu0_value == pytest.approx(value, abs=1e-9)


def test_occupation_satisfies_linear_constraints(rng):
    mdp = random_mdp(rng, 3, 2, 4)
    d = propagate_occupation(mdp, random_policy(rng, 3, 2, 4))
    A_eq, b = occupation_constraints(mdp.mu0, mdp.transitions, 3, 2, 4)
    np.testing.assert_allclose(A_eq @ vec(d), b, atol=1e-13)
    np.testing.assert_allclose(d.sum(axis=(1, 2)), 1.0, atol=1e-13)


def test_horizon_zero_is_a_bandit():
    mdp = FiniteMdp([0.25, 0.75], np.zeros((0, 2, 2, 2)), [[[1.0, 2.0], [3.0, -1.0]]])
    assert value_iteration(mdp).mu0_value == pytest.approx(0.25 * 2.0 + 0.75 * 3.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 4), st.integers(0, 2**31 - 1))
def test_vec_roundtrip(S, A, T, seed):
    x = np.random.default_rng(seed).normal(size=(T + 1, S, A))
    v = vec(x)
    np.testing.assert_array_equal(unvec(v, S, A), x)
    # state index runs fastest inside a slice
    np.testing.assert_array_equal(v[:S * A], x[0].T.ravel())


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_policy_from_occupation_reproduces_flow(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, 3, 3, 3)
    pi = random_policy(rng, 3, 3, 3)
    d = propagate_occupation(mdp, pi)
    np.testing.assert_allclose(propagate_occupation(mdp, policy_from_occupation(d)), d, atol=1e-12)


def test_zero_mass_rows_fall_back_to_uniform():
    d = np.zeros((1, 2, 2))
    d[0, 0] = [0.3, 0.7]
    pi = policy_from_occupation(d)
    np.testing.assert_allclose(pi[0, 1], [0.5, 0.5])


@pytest.mark.parametrize("bad", [
    dict(mu0=[0.5, 0.6]),
    dict(transitions=np.full((1, 2, 2, 1), 0.7)),
    dict(rewards=np.zeros((3, 2, 1))),
])
def test_structural_errors(bad):
    args = dict(mu0=[0.5, 0.5], transitions=np.full((1, 2, 2, 1), 0.5), rewards=np.zeros((2, 2, 1)))
    args.update(bad)
    with pytest.raises(StructuralError):
        FiniteMdp(**args)


def test_renormalized_constructor_absorbs_drift():
    P = np.full((1, 2, 2, 1), 0.5 + 1e-9)
    mdp = FiniteMdp.renormalized([0.5 + 1e-9, 0.5], P, np.zeros((2, 2, 1)))
    assert abs(mdp.mu0.sum() - 1) < 1e-15


def test_check_policy_rejects_non_stochastic_rows():
    with pytest.raises(StructuralError):
        check_policy(np.full((1, 2, 2), 0.4))
