import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from conftest import random_policy

from mfomo.errors import ConfigurationError, ModelError, StructuralError
from mfomo.game import (
    GameModel,
    _fd_jacobian,
    evaluate_flow,
    exploitability,
    flow_norms,
    propagate_flow,
    verify_nash,
    weak_monotonicity_witness,
)
from mfomo.games import (
    CongregationGameParams,
    SisGameParams,
    coordination_game,
    congregation_game,
    game_from_json,
    nash_construction,
    random_game,
    random_linear_game,
    sis_game,
)


def _instance_params(seed=0):
    return CongregationGameParams.paper_instance(seed=seed)


def _random_slice(rng, S, A):
    return rng.dirichlet(np.ones(S * A)).reshape(S, A)


ALL_GAMES = [
    lambda: congregation_game(_instance_params()),
    lambda: sis_game(SisGameParams(T=4)),
    lambda: random_game(3, 2, 3, seed=4),
    lambda: random_linear_game(2, 3, 2, seed=1),
]


@pytest.mark.parametrize("make", ALL_GAMES)
def test_transition_rows_are_distributions(make, rng):
    game = make()
    for _ in range(100):
        t = int(rng.integers(0, game.T))
        P = game.transition(t, _random_slice(rng, game.S, game.A))
        assert P.min() >= 0
        np.testing.assert_allclose(P.sum(axis=0), 1.0, atol=1e-13)


@pytest.mark.parametrize("make", ALL_GAMES)
def test_analytic_jacobians_match_finite_differences(make, rng):
    game = make()
    for t in range(min(game.T, 3)):
        Lt = _random_slice(rng, game.S, game.A)
        np.testing.assert_allclose(game.transition_jacobian(t, Lt), _fd_jacobian(lambda x: game.transition(t, x), Lt),
                                   atol=1e-7)
        np.testing.assert_allclose(game.reward_jacobian(t, Lt), _fd_jacobian(lambda x: game.reward(t, x), Lt),
                                   atol=1e-7)


@pytest.mark.parametrize("make", ALL_GAMES)
def test_flows_are_probability_distributions(make, rng):
    game = make()
    L = propagate_flow(game, random_policy(rng, game.S, game.A, game.T))
    assert L.min() >= 0
    np.testing.assert_allclose(L.sum(axis=(1, 2)), 1.0, atol=1e-12)
    assert exploitability(game, random_policy(rng, game.S, game.A, game.T)) >= 0


def test_congregation_full_mass_slice():
    params = _instance_params()
    game = congregation_game(params)
    for i in range(params.n):
        Lt = np.zeros((params.n, params.n))
        Lt[i, i] = 1.0
        P = game.transition(2, Lt)
        np.testing.assert_allclose(P[:, i, :], np.eye(params.n), atol=1e-15)
        R = game.reward(2, Lt)
        assert R[i, i] == pytest.approx(params.r[i])
        # other diagonal entries sit at distance 2 from full congregation: reward 0
        assert np.count_nonzero(R) == 1


def test_congregation_time_zero_is_free():
    game = congregation_game(_instance_params())
    Lt = _random_slice(np.random.default_rng(0), game.S, game.A)
    assert not game.reward(0, Lt).any()
    np.testing.assert_array_equal(game.transition(0, Lt)[:, 0, :], np.eye(game.S))


@pytest.mark.parametrize("j", [0, 1, 2])
def test_nash_constructions_are_equilibria(j):
    params = _instance_params()
    pi, L = nash_construction(params, j)
    game = congregation_game(params)
    assert verify_nash(game, pi, L, 1e-8).is_nash
    assert exploitability(game, pi) <= 1e-10


def test_nash_construction_warns_off_argmax():
    params = CongregationGameParams(n=3, T=2, r=[1.0, 2.0, 0.5], C=[0.1, 0.1])
    with pytest.warns(UserWarning):
        nash_construction(params, 0)


def test_distinct_equilibria_and_monotonicity_witness():
    params = _instance_params()
    game = congregation_game(params)
    flows = [nash_construction(params, j)[1] for j in range(3)]
    for a in range(3):
        for b in range(a + 1, 3):
            assert np.abs(flows[a] - flows[b]).sum() > 0
            w = weak_monotonicity_witness(game, flows[a], flows[b])
            assert w == pytest.approx(2 * params.T * max(params.r))


def test_sis_zero_infection_mass_keeps_susceptibles():
    game = sis_game()
    Lt = np.array([[0.6, 0.4], [0.0, 0.0]])
    P = game.transition(0, Lt)
    np.testing.assert_array_equal(P[:, 0, :], [[1.0, 1.0], [0.0, 0.0]])


def test_sis_zero_rate_sets_independence_flag():
    assert sis_game(SisGameParams(infection_rate=0.0)).mean_field_independent_dynamics
    assert not sis_game().mean_field_independent_dynamics


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 2**31 - 1))
def test_sis_conservation(beta, gamma, seed):
    game = sis_game(SisGameParams(infection_rate=beta, recovery_rate=gamma, T=8))
    pi = random_policy(np.random.default_rng(seed), 2, 2, 8)
    L = propagate_flow(game, pi)
    np.testing.assert_allclose(L.sum(axis=(1, 2)), 1.0, atol=1e-12)
    assert L.min() >= 0


def test_sis_parameter_validation():
    with pytest.raises(ConfigurationError):
        SisGameParams(infection_rate=1.5)
    with pytest.raises(ConfigurationError):
        SisGameParams(distancing_cost=-1.0)


def test_random_game_is_deterministic_per_seed():
    a, b = random_game(3, 2, 4, seed=7), random_game(3, 2, 4, seed=7)
    L = propagate_flow(a, np.full((5, 3, 2), 0.5))
    for x, y in zip(evaluate_flow(a, L, True), evaluate_flow(b, L, True)):
        np.testing.assert_array_equal(x, y)
    c = random_game(3, 2, 4, seed=8)
    assert not np.array_equal(evaluate_flow(a, L)[1], evaluate_flow(c, L)[1])


def test_random_game_reward_bound(rng):
    game = random_game(3, 3, 2, seed=1, lipschitz_knob=2.0)
    for _ in range(100):
        assert np.abs(game.reward(1, _random_slice(rng, 3, 3))).max() <= game.r_max


def test_coordination_game_has_pure_equilibria():
    game = coordination_game(seed=0)
    for a in range(2):
        pi = np.zeros((2, 2, 2))
        pi[:, :, a] = 1.0
        assert exploitability(game, pi) <= 1e-12


@pytest.mark.parametrize("make", ALL_GAMES + [lambda: coordination_game(seed=2)])
def test_json_roundtrip(make):
    game = make()
    clone = game_from_json(json.loads(json.dumps(game.to_json())))
    L = propagate_flow(game, np.full((game.T + 1, game.S, game.A), 1.0 / game.A))
    for x, y in zip(evaluate_flow(game, L), evaluate_flow(clone, L)):
        np.testing.assert_allclose(x, y, atol=1e-15)


def test_game_from_json_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        game_from_json({"builtin": "nope"})
    with pytest.raises(ConfigurationError):
        game_from_json({"S": 2})
    with pytest.raises(StructuralError):
        game_from_json({"S": 1, "A": 1, "T": 1, "mu0": [1.0], "r_bar": [[[0.0]]], "transitions": [[[[1.0]]]]})


class _Broken(GameModel):
    def __init__(self):
        super().__init__(1, 1, 1, [1.0], 1.0)

    def transition(self, t, Lt):
        raise RuntimeError("boom")

    def reward(self, t, Lt):
        return np.zeros((1, 1))


def test_callback_failures_become_model_errors():
    with pytest.raises(ModelError):
        evaluate_flow(_Broken(), np.ones((2, 1, 1)))
    with pytest.raises(ModelError):
        propagate_flow(_Broken(), np.ones((2, 1, 1)))


def test_flow_norms():
    p = np.zeros((2, 2, 2, 1))
    p[0, :, 0, 0] = [0.1, -0.2]
    x = np.array([[[0.5], [-1.0]], [[0.25], [0.0]]])
    assert flow_norms(p, x) == pytest.approx((0.3, 1.25))
