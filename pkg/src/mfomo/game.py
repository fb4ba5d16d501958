"""Mean-field game interface, flow propagation, exploitability and Nash checks."""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ModelError, StructuralError
from .mdp import (
    FiniteMdp,
    check_policy,
    policy_evaluation,
    propagate_occupation,
    value_iteration,
)

EXPL_CLAMP = 1e-10


class GameModel:
    """Base class for discrete-time finite-horizon mean-field games.

    Subclasses implement :meth:`transition` and :meth:`reward`.  Both receive a
    single time slice ``Lt`` of shape ``(S, A)`` that may lie slightly outside
    the simplex and must not fail there.  Jacobians are optional; when a
    subclass returns ``None`` the central finite-difference fallback is used
    unless ``fd_fallback`` is False.

    Shapes: ``transition(t, Lt)[s_next, s, a]`` (only ``t < T`` is queried),
    ``reward(t, Lt)[s, a]``, ``transition_jacobian(t, Lt)[s_next, s, a, i, j]``
    and ``reward_jacobian(t, Lt)[s, a, i, j]`` differentiate with respect to
    ``Lt[i, j]``.
    """

    mean_field_independent_dynamics = False
    linear_rewards = False
    fd_fallback = True
    C_P = None
    C_r = None

    def __init__(self, S, A, T, mu0, r_max):
        mu0 = np.asarray(mu0, dtype=np.float64)
        if mu0.shape != (S,):
            raise StructuralError(f"mu0 must have shape ({S},)")
        if np.any(mu0 < -1e-12) or abs(mu0.sum() - 1.0) > 1e-12:
            raise StructuralError("mu0 must be a probability vector")
        self.S, self.A, self.T = int(S), int(A), int(T)
        self.mu0 = mu0
        self.r_max = float(r_max)

    def transition(self, t, Lt):
        raise NotImplementedError

    def reward(self, t, Lt):
        raise NotImplementedError

    def transition_jacobian(self, t, Lt):
        return None

    def reward_jacobian(self, t, Lt):
        return None

    # payload for linear-reward games: r_t(s,a,L) = r_bar[t,s,a] + <R_bar[t,s,a], L_t>
    r_bar = None
    R_bar = None

    def to_json(self):
        """JSON-ready description; builtins override this with name + params."""
        raise NotImplementedError(f"{type(self).__name__} is not serializable")


def _fd_jacobian(fn, Lt):
    h = 1e-6 * max(1.0, float(np.abs(Lt).max()))
    S, A = Lt.shape
    base = np.asarray(fn(Lt))
    jac = np.zeros(base.shape + (S, A))
    for i in range(S):
        for j in range(A):
            Lp = Lt.copy()
            Lm = Lt.copy()
            Lp[i, j] += h
            Lm[i, j] -= h
            jac[..., i, j] = (np.asarray(fn(Lp)) - np.asarray(fn(Lm))) / (2 * h)
    return jac


def transition_jacobian(game, t, Lt):
    if game.mean_field_independent_dynamics:
        return np.zeros((game.S, game.S, game.A, game.S, game.A))
    jac = game.transition_jacobian(t, Lt)
    if jac is None:
        if not game.fd_fallback:
            raise ConfigurationError("game has no transition Jacobian and finite differences are disabled")
        jac = _fd_jacobian(lambda x: game.transition(t, x), Lt)
    return np.asarray(jac, dtype=np.float64)


def reward_jacobian(game, t, Lt):
    jac = game.reward_jacobian(t, Lt)
    if jac is None:
        if game.linear_rewards and game.R_bar is not None:
            return np.asarray(game.R_bar[t], dtype=np.float64)
        if not game.fd_fallback:
            raise ConfigurationError("game has no reward Jacobian and finite differences are disabled")
        jac = _fd_jacobian(lambda x: game.reward(t, x), Lt)
    return np.asarray(jac, dtype=np.float64)


def evaluate_flow(game, L, jacobians=False):
    """Evaluate transitions and rewards (and optionally Jacobians) along a flow.

    Returns ``(P, R)`` or ``(P, R, dP, dR)`` in the kernel layout.
    """
    S, A, T = game.S, game.A, game.T
    L = np.asarray(L, dtype=np.float64)
    if L.shape != (T + 1, S, A):
        raise StructuralError(f"flow must have shape {(T + 1, S, A)}, got {L.shape}")
    try:
        P = np.empty((T, S, S, A))
        R = np.empty((T + 1, S, A))
        for t in range(T + 1):
            R[t] = game.reward(t, L[t])
            if t < T:
                P[t] = game.transition(t, L[t])
        if not jacobians:
            return P, R
        dP = np.zeros((T, S, S, A, S, A))
        dR = np.empty((T + 1, S, A, S, A))
        for t in range(T + 1):
            dR[t] = reward_jacobian(game, t, L[t])
            if t < T and not game.mean_field_independent_dynamics:
                dP[t] = transition_jacobian(game, t, L[t])
    except (ConfigurationError, StructuralError):
        raise
    except Exception as exc:  # noqa: BLE001 - wrap arbitrary user callback failures
        raise ModelError(f"game evaluation failed: {exc}") from exc
    if not (np.all(np.isfinite(P)) and np.all(np.isfinite(R))):
        raise ModelError("game returned non-finite transitions or rewards")
    return P, R, dP, dR


def check_flow(L, S, A, T, tol=1e-10):
    L = np.asarray(L, dtype=np.float64)
    if L.shape != (T + 1, S, A):
        raise StructuralError(f"flow must have shape {(T + 1, S, A)}, got {L.shape}")
    if np.any(L < -tol) or np.any(np.abs(L.sum(axis=(1, 2)) - 1.0) > tol):
        raise StructuralError("flow slices must be probability distributions")
    return L


def induced_mdp(game, L):
    """Freeze the flow and return the MDP faced by a single agent."""
    P, R = evaluate_flow(game, L)
    return FiniteMdp(game.mu0, P, R, r_max=max(game.r_max, float(np.abs(R).max())), validate=False)


def propagate_flow(game, pi):
    """The population flow generated when everybody plays ``pi``.

    Transitions at time ``t`` are evaluated at the flow slice being propagated.
    """
    S, A, T = game.S, game.A, game.T
    pi = check_policy(pi, S, A, T)
    L = np.zeros((T + 1, S, A))
    L[0] = game.mu0[:, None] * pi[0]
    for t in range(T):
        try:
            P = np.asarray(game.transition(t, L[t]), dtype=np.float64)
        except Exception as exc:  # noqa: BLE001
            raise ModelError(f"game evaluation failed: {exc}") from exc
        nxt = np.einsum("psa,sa->p", P, L[t])
        L[t + 1] = nxt[:, None] * pi[t + 1]
    return L


def exploitability(game, pi, flow=None):
    """Best-response gain at the flow induced by ``pi`` (clamped at 0 within 1e-10)."""
    L = propagate_flow(game, pi) if flow is None else flow
    mdp = induced_mdp(game, L)
    gap = value_iteration(mdp).mu0_value - policy_evaluation(mdp, pi).mu0_value
    if -EXPL_CLAMP <= gap < 0:
        gap = 0.0
    return float(gap)


@dataclass(frozen=True)
class NashReport:
    consistency_residual: float
    optimality_gap: float
    is_nash: bool
    tol: float

    def to_dict(self):
        return {
            "consistency_residual": self.consistency_residual,
            "optimality_gap": self.optimality_gap,
            "is_nash": self.is_nash,
            "tol": self.tol,
        }


def verify_nash(game, pi, L, tol):
    """Check both equilibrium conditions for the pair (pi, L)."""
    gamma = propagate_flow(game, pi)
    residual = float(np.abs(gamma - np.asarray(L)).sum())
    gap = exploitability(game, pi, flow=gamma)
    return NashReport(residual, gap, bool(residual <= tol and gap <= tol), tol)


def flow_norms(p_diff, x_diff):
    """Return ``(max_{t,s,a} sum_s' |p|, sum_t max_{s,a} |x|)``.

    ``p_diff`` has shape (T, S, S, A) with the next state on axis 1.
    """
    p = np.abs(np.asarray(p_diff, dtype=np.float64))
    x = np.abs(np.asarray(x_diff, dtype=np.float64))
    p_norm = float(p.sum(axis=1).max()) if p.size else 0.0
    x_norm = float(x.reshape(x.shape[0], -1).max(axis=1).sum()) if x.size else 0.0
    return p_norm, x_norm


def weak_monotonicity_witness(game, L1, L2):
    """sum_t <L1_t - L2_t, r_t(L1_t) - r_t(L2_t)>; positive means not weakly monotone."""
    L1 = np.asarray(L1, dtype=np.float64)
    L2 = np.asarray(L2, dtype=np.float64)
    total = 0.0
    for t in range(game.T + 1):
        dr = np.asarray(game.reward(t, L1[t])) - np.asarray(game.reward(t, L2[t]))
        total += float(((L1[t] - L2[t]) * dr).sum())
    return total
