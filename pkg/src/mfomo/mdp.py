"""Finite-horizon tabular MDPs: dynamic programming, occupation measures and the LP view.

Times run over ``t = 0..T`` inclusive.  Per-time S x A matrices are stored as
arrays of shape ``(T+1, S, A)``; when a flat vector is needed the per-time
slice is flattened column-major (state index fastest), see :func:`vec`.
"""
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import SolverInternalError, StructuralError

PROB_TOL = 1e-12


def vec(x):
    """Flatten a ``(T+1, S, A)`` stack column-major per slice into one vector."""
    x = np.asarray(x)
    return np.transpose(x, (0, 2, 1)).reshape(-1)


def unvec(v, S, A):
    """Inverse of :func:`vec`."""
    v = np.asarray(v, dtype=np.float64)
    return np.transpose(v.reshape(-1, A, S), (0, 2, 1)).copy()


def _check_distribution(p, axis, what, tol=PROB_TOL):
    if np.any(p < -tol):
        raise StructuralError(f"{what} has negative entries")
    if not np.allclose(p.sum(axis=axis), 1.0, rtol=0.0, atol=tol):
        raise StructuralError(f"{what} does not sum to one")


@dataclass(frozen=True)
class FiniteMdp:
    """A finite-horizon MDP.

    ``transitions[t, s_next, s, a]`` for ``t < T`` and ``rewards[t, s, a]``
    for ``t <= T``.
    """

    mu0: np.ndarray
    transitions: np.ndarray
    rewards: np.ndarray
    r_max: float = None
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        mu0 = np.asarray(self.mu0, dtype=np.float64)
        P = np.asarray(self.transitions, dtype=np.float64)
        R = np.asarray(self.rewards, dtype=np.float64)
        if R.ndim != 3:
            raise StructuralError("rewards must have shape (T+1, S, A)")
        T1, S, A = R.shape
        if mu0.shape != (S,):
            raise StructuralError(f"mu0 must have shape ({S},), got {mu0.shape}")
        if T1 == 1 and P.size == 0:
            P = np.zeros((0, S, S, A))
        if P.shape != (T1 - 1, S, S, A):
            raise StructuralError(f"transitions must have shape {(T1 - 1, S, S, A)}, got {P.shape}")
        if self.validate:
            _check_distribution(mu0, 0, "mu0")
            if T1 > 1:
                _check_distribution(P, 1, "transition kernel")
        r_max = float(np.abs(R).max()) if self.r_max is None else float(self.r_max)
        if self.validate and np.abs(R).max() > r_max * (1 + 1e-12) + 1e-15:
            raise StructuralError("reward exceeds r_max")
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "transitions", np.ascontiguousarray(P))
        object.__setattr__(self, "rewards", np.ascontiguousarray(R))
        object.__setattr__(self, "r_max", r_max)

    @property
    def S(self):
        return self.rewards.shape[1]

    @property
    def A(self):
        return self.rewards.shape[2]

    @property
    def T(self):
        return self.rewards.shape[0] - 1

    @classmethod
    def renormalized(cls, mu0, transitions, rewards, r_max=None):
        """Build from slightly drifted inputs (e.g. parsed JSON) by clipping and renormalizing."""
        mu0 = np.clip(np.asarray(mu0, dtype=np.float64), 0.0, None)
        mu0 = mu0 / mu0.sum()
        P = np.clip(np.asarray(transitions, dtype=np.float64), 0.0, None)
        if P.size:
            P = P / P.sum(axis=1, keepdims=True)
        return cls(mu0, P, rewards, r_max)


@dataclass(frozen=True)
class ValueTable:
    V: np.ndarray  # (T+1, S)
    Q: np.ndarray  # (T+1, S, A)
    mu0_value: float


def check_policy(pi, S=None, A=None, T=None, tol=PROB_TOL):
    pi = np.asarray(pi, dtype=np.float64)
    if pi.ndim != 3:
        raise StructuralError("policy must have shape (T+1, S, A)")
    expect = (None if T is None else T + 1, S, A)
    for got, want in zip(pi.shape, expect):
        if want is not None and got != want:
            raise StructuralError(f"policy shape {pi.shape} does not match {expect}")
    _check_distribution(pi, 2, "policy", tol)
    return pi


def value_iteration(mdp):
    """Optimal values and Q-tables by backward recursion (ties: lowest action)."""
    dummy = np.zeros((1, 1, 1))
    V, Q = _kernels.backward_recursion(mdp.transitions, mdp.rewards, dummy, True)
    return ValueTable(V, Q, float(mdp.mu0 @ V[0]))


def greedy_policy(values):
    Q = values.Q
    pi = np.zeros_like(Q)
    best = np.argmax(Q, axis=2)
    np.put_along_axis(pi, best[..., None], 1.0, axis=2)
    return pi


def policy_evaluation(mdp, pi):
    pi = check_policy(pi, mdp.S, mdp.A, mdp.T)
    V, Q = _kernels.backward_recursion(mdp.transitions, mdp.rewards, np.ascontiguousarray(pi), False)
    return ValueTable(V, Q, float(mdp.mu0 @ V[0]))


def propagate_occupation(mdp, pi):
    pi = check_policy(pi, mdp.S, mdp.A, mdp.T)
    return _kernels.forward_occupation(mdp.transitions, mdp.mu0, np.ascontiguousarray(pi))


def policy_from_occupation(d, tie_policy=None):
    """Row-normalize each ``d[t, s, :]``; zero-mass rows fall back to ``tie_policy`` or uniform."""
    d = np.asarray(d, dtype=np.float64)
    A = d.shape[-1]
    mass = d.sum(axis=-1, keepdims=True)
    positive = mass > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        pi = np.where(positive, d / np.where(positive, mass, 1.0), 0.0)
    fallback = np.full_like(d, 1.0 / A) if tie_policy is None else np.asarray(tie_policy, dtype=np.float64)
    pi = np.where(positive, pi, fallback)
    # tiny negative entries can appear when d is only near-feasible
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum(axis=-1, keepdims=True)


def occupation_constraints(mu0, transitions, S, A, T):
    """Dense (A_eq, b) of the occupation-measure polytope in :func:`vec` order."""
    n = S * A
    A_eq = np.zeros((S * (T + 1), n * (T + 1)))
    Z = np.tile(np.eye(S), (1, A))
    for t in range(T):
        W = np.transpose(transitions[t], (0, 2, 1)).reshape(S, n)
        A_eq[t * S:(t + 1) * S, t * n:(t + 1) * n] = W
        A_eq[t * S:(t + 1) * S, (t + 1) * n:(t + 2) * n] = -Z
    A_eq[T * S:, :n] = Z
    b = np.zeros(S * (T + 1))
    b[T * S:] = mu0
    return A_eq, b


def lp_oracle(mdp, max_size=200):
    """Solve the occupation-measure LP with the in-house simplex; returns (value, d)."""
    from .lcp import LpProblem, simplex_lp

    S, A, T = mdp.S, mdp.A, mdp.T
    if S * A * (T + 1) > max_size:
        raise StructuralError(f"LP oracle limited to S*A*(T+1) <= {max_size}")
    A_eq, b = occupation_constraints(mdp.mu0, mdp.transitions, S, A, T)
    c = -vec(mdp.rewards)
    res = simplex_lp(LpProblem(c, A_eq, b))
    if res.status != "optimal":
        raise SolverInternalError(f"occupation LP returned status {res.status}")
    d = np.clip(unvec(res.x, S, A), 0.0, None)
    return -res.value, d
