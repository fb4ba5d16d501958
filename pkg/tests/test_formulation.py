import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from conftest import random_policy

from mfomo.errors import StructuralError
from mfomo.formulation import (
    Evaluation,
    ThetaPoint,
    build_system,
    extract_solution,
    gradient,
    load_checkpoint,
    n_terms,
    objective,
    objective_matrix,
    random_theta,
    save_checkpoint,
    solution_modification,
    term_weights,
    theorem4_constant,
    theta_bounds,
    warm_start,
)
from mfomo.game import exploitability, propagate_flow
from mfomo.games import CongregationGameParams, congregation_game, nash_construction, random_game, sis_game
from mfomo.mdp import vec


def _fd_gradient(game, theta, h=1e-6):
    x = theta.to_vector()
    S, A, T = theta.S, theta.A, theta.T
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        fp = objective(game, ThetaPoint.from_vector(x + e, S, A, T)).total
        fm = objective(game, ThetaPoint.from_vector(x - e, S, A, T)).total
        g[i] = (fp - fm) / (2 * h)
    return g


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 3), st.integers(0, 2**31 - 1))
def test_expansion_matches_dense_system(S, A, T, seed):
    game = random_game(S, A, T, seed)
    theta = random_theta(np.random.default_rng(seed), S, A, T, theta_bounds(game))
    a, b = objective(game, theta), objective_matrix(game, theta)
    for x, y in [(a.consistency, b.consistency), (a.bellman, b.bellman), (a.complementarity, b.complementarity)]:
        assert x == pytest.approx(y, rel=1e-10, abs=1e-10)


def test_warm_start_value_equals_exploitability(rng):
    for seed in range(10):
        game = random_game(3, 2, 3, seed)
        pi = random_policy(rng, 3, 2, 3)
        theta = warm_start(game, propagate_flow(game, pi))
        assert objective(game, theta).total == pytest.approx(exploitability(game, pi), abs=1e-10)


def test_warm_start_is_feasible_and_satisfies_dual_rows(rng):
    game = random_game(3, 3, 4, seed=3)
    L = propagate_flow(game, random_policy(rng, 3, 3, 4))
    theta = warm_start(game, L)
    assert theta.is_feasible(theta_bounds(game))
    bd = objective(game, theta)
    assert bd.consistency < 1e-25 and bd.bellman < 1e-25
    assert theta.z.min() >= 0


def test_gradient_matches_finite_differences(rng):
    for seed in range(3):
        game = random_game(2, 2, 2, seed)
        theta = random_theta(rng, 2, 2, 2, theta_bounds(game), interior=True)
        g = gradient(game, theta).to_vector()
        fd = _fd_gradient(game, theta)
        assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(g)


def test_weighted_gradient_is_linear_in_weights(rng):
    game = random_game(2, 3, 2, seed=5)
    theta = random_theta(rng, 2, 3, 2, theta_bounds(game))
    ev = Evaluation(game, theta.y, theta.z, theta.L)
    n = n_terms(2, 3, 2)
    full = np.concatenate([np.ravel(g) for g in ev.gradient()])
    parts = sum(np.concatenate([np.ravel(g) for g in ev.gradient(term_weights(2, 3, 2, [i]))]) for i in range(n))
    np.testing.assert_allclose(parts, full, rtol=1e-10, atol=1e-10)


def test_nash_point_has_zero_objective():
    params = CongregationGameParams.paper_instance()
    game = congregation_game(params)
    _, L = nash_construction(params, 1)
    assert objective(game, warm_start(game, L)).total <= 1e-12


def test_solution_modification_keeps_flow_and_lowers_dual_terms(rng):
    game = sis_game()
    theta = random_theta(rng, 2, 2, game.T, theta_bounds(game))
    mod = solution_modification(game, theta)
    np.testing.assert_array_equal(mod.L, theta.L)
    assert objective(game, mod).bellman <= objective(game, theta).bellman


def test_extract_solution_reports_nash():
    params = CongregationGameParams.paper_instance()
    game = congregation_game(params)
    _, L = nash_construction(params, 2)
    pi, report = extract_solution(game, warm_start(game, L), 1e-8)
    assert report.is_nash
    np.testing.assert_allclose(pi.sum(axis=2), 1.0)


def test_system_blocks():
    game = random_game(2, 2, 2, seed=0)
    L = propagate_flow(game, np.full((3, 2, 2), 0.5))
    system = build_system(game, L)
    assert system.A_L.shape == (2 * 3, 4 * 3)
    np.testing.assert_allclose(system.A_L @ vec(L), system.b, atol=1e-13)
    np.testing.assert_array_equal(system.block(0, 1), -system.Z)


def test_theta_vector_roundtrip_and_bounds(rng):
    game = random_game(2, 3, 4, seed=0)
    bounds = theta_bounds(game)
    assert bounds.y_radius == pytest.approx(2 * 5 * 6 * game.r_max / 2)
    assert bounds.z_budget == pytest.approx(2 * 3 * (16 + 4 + 2) * game.r_max)
    theta = random_theta(rng, 2, 3, 4, bounds)
    back = ThetaPoint.from_vector(theta.to_vector(), 2, 3, 4)
    np.testing.assert_array_equal(back.L, theta.L)
    np.testing.assert_array_equal(back.z, theta.z)
    with pytest.raises(StructuralError):
        ThetaPoint.from_vector(np.zeros(5), 2, 3, 4)


def test_checkpoint_roundtrip(tmp_path, rng):
    game = random_game(2, 2, 1, seed=0)
    theta = random_theta(rng, 2, 2, 1, theta_bounds(game))
    path = tmp_path / "theta.json"
    save_checkpoint(theta, path, note="x")
    back, doc = load_checkpoint(path)
    np.testing.assert_array_equal(back.to_vector(), theta.to_vector())
    assert doc["note"] == "x"


def test_bound_constant_grows_with_lipschitz_constants():
    a = theorem4_constant(2, 2, 3, 0.5, 0.5, 1.0)
    b = theorem4_constant(2, 2, 3, 1.0, 0.5, 1.0)
    assert 0 < a < b
    with pytest.raises(ValueError):
        theorem4_constant(2, 2, 3, -1.0, 0.5, 1.0)
