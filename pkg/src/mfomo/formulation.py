"""The MF-OMO optimization problem: system matrices, objective, gradient and warm starts.

A point ``theta = (y, z, L)`` is stored with ``y`` as a flat vector of length
S(T+1) (blocks ``y_0..y_T``) and ``z``, ``L`` as (T+1, S, A) stacks.  The
objective is

    ||A_L L - b||^2 + ||A_L^T y + z - c_L||^2 + z^T L

and vanishes exactly at Nash equilibria.
"""
import json
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import StructuralError
from .game import evaluate_flow, induced_mdp, verify_nash
from .mdp import occupation_constraints, policy_from_occupation, unvec, value_iteration, vec
from .projections import ThetaBounds, project_components


@dataclass(frozen=True)
class ThetaPoint:
    y: np.ndarray
    z: np.ndarray
    L: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.float64)
        L = np.asarray(self.L, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if z.ndim != 3 or z.shape != L.shape:
            raise StructuralError("z and L must both have shape (T+1, S, A)")
        if y.size != L.shape[0] * L.shape[1]:
            raise StructuralError("y must have length S*(T+1)")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "L", L)

    @property
    def S(self):
        return self.L.shape[1]

    @property
    def A(self):
        return self.L.shape[2]

    @property
    def T(self):
        return self.L.shape[0] - 1

    def y_blocks(self):
        return self.y.reshape(self.T + 1, self.S)

    def to_vector(self):
        """Concatenate ``[y, vec(z), vec(L)]`` (column-major per time slice)."""
        return np.concatenate([self.y, vec(self.z), vec(self.L)])

    @classmethod
    def from_vector(cls, v, S, A, T):
        ny, n = S * (T + 1), S * A * (T + 1)
        v = np.asarray(v, dtype=np.float64)
        if v.size != ny + 2 * n:
            raise StructuralError("vector length does not match dimensions")
        return cls(v[:ny].copy(), unvec(v[ny:ny + n], S, A), unvec(v[ny + n:], S, A))

    def is_feasible(self, bounds, tol=1e-9):
        L, z = self.L, self.z
        return bool(
            L.min() >= -tol
            and np.abs(L.sum(axis=(1, 2)) - 1.0).max() <= tol
            and z.min() >= -tol
            and z.sum() <= bounds.z_budget * (1 + tol) + tol
            and np.linalg.norm(self.y) <= bounds.y_radius * (1 + tol) + tol
        )

    def to_json(self):
        """Plain-JSON checkpoint with explicit dimensions."""
        return {"S": self.S, "A": self.A, "T": self.T,
                "y": self.y.tolist(), "z": self.z.tolist(), "L": self.L.tolist()}

    @classmethod
    def from_json(cls, doc):
        S, A, T = int(doc["S"]), int(doc["A"]), int(doc["T"])
        theta = cls(np.asarray(doc["y"]), np.asarray(doc["z"]), np.asarray(doc["L"]))
        if (theta.S, theta.A, theta.T) != (S, A, T):
            raise StructuralError("checkpoint arrays do not match declared dimensions")
        return theta


def save_checkpoint(theta, path, **extra):
    doc = theta.to_json()
    doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    with open(path) as fh:
        doc = json.load(fh)
    return ThetaPoint.from_json(doc), doc


def theta_bounds(game):
    return ThetaBounds.for_game(game.S, game.A, game.T, game.r_max)


# ---------------------------------------------------------------------------
# system matrices


@dataclass(frozen=True)
class LinearSystem:
    A_L: np.ndarray
    b: np.ndarray
    c_L: np.ndarray
    W: np.ndarray  # (T, S, S*A)
    Z: np.ndarray  # (S, S*A)

    def block(self, row, col):
        S = self.Z.shape[0]
        n = self.Z.shape[1]
        return self.A_L[row * S:(row + 1) * S, col * n:(col + 1) * n]


def build_system(game, L):
    """Dense A_L, b and c_L for a fixed flow."""
    S, A, T = game.S, game.A, game.T
    P, R = evaluate_flow(game, _game_view(L))
    A_L, b = occupation_constraints(game.mu0, P, S, A, T)
    W = np.transpose(P, (0, 1, 3, 2)).reshape(T, S, S * A)
    Z = np.tile(np.eye(S), (1, A))
    return LinearSystem(A_L, b, -vec(R), W, Z)


# ---------------------------------------------------------------------------
# objective and gradient


@dataclass(frozen=True)
class ObjectiveBreakdown:
    consistency: float
    bellman: float
    complementarity: float

    @property
    def total(self):
        return self.consistency + self.bellman + self.complementarity


def _game_view(L):
    # games are only guaranteed near the simplex; clip stray entries before evaluating them
    L = np.asarray(L, dtype=np.float64)
    if L.min() < 0.0 or L.max() > 1.0:
        return np.clip(L, 0.0, 1.0)
    return L


def n_terms(S, A, T):
    """Number of summands in the time-decoupled expansion of the objective."""
    return S * (T + 1) * (2 * A + 1)


def _unit_weights(S, A, T):
    return (np.ones(S), np.ones((T, S)), np.ones((T + 1, S, A)), np.ones((T + 1, S, A)))


def term_weights(S, A, T, batch, scale=1.0):
    """Weights selecting the summands with flat indices ``batch`` (each weighted by ``scale``).

    Flat term order: initial consistency (S), transition consistency (T*S),
    Bellman residuals (SA(T+1)), complementarity (SA(T+1)).
    """
    w = np.zeros(n_terms(S, A, T))
    np.add.at(w, np.asarray(batch, dtype=np.int64), scale)
    sizes = [S, T * S, S * A * (T + 1), S * A * (T + 1)]
    parts = np.split(w, np.cumsum(sizes)[:-1])
    return (parts[0], parts[1].reshape(T, S), parts[2].reshape(T + 1, S, A), parts[3].reshape(T + 1, S, A))


class Evaluation:
    """Residuals and (lazily) gradient of the objective at one point."""

    def __init__(self, game, y, z, L, jacobians=True):
        self.game = game
        self.y = np.ascontiguousarray(np.asarray(y, dtype=np.float64).reshape(game.T + 1, game.S))
        self.z = np.ascontiguousarray(z, dtype=np.float64)
        self.L = np.ascontiguousarray(L, dtype=np.float64)
        Lg = _game_view(self.L)
        if jacobians:
            self.P, self.R, self.dP, self.dR = evaluate_flow(game, Lg, jacobians=True)
        else:
            self.P, self.R = evaluate_flow(game, Lg)
            self.dP = self.dR = None
        self.e_init, self.e, self.g = _kernels.mfomo_residuals(self.P, self.R, game.mu0, self.y, self.z, self.L)

    def breakdown(self):
        return ObjectiveBreakdown(
            float(self.e_init @ self.e_init + (self.e * self.e).sum()),
            float((self.g * self.g).sum()),
            float((self.z * self.L).sum()),
        )

    def gradient(self, weights=None):
        game = self.game
        if weights is None:
            weights = _unit_weights(game.S, game.A, game.T)
        w_init, w_cons, w_bell, w_comp = (np.ascontiguousarray(w, dtype=np.float64) for w in weights)
        gy, gz, gL = _kernels.mfomo_gradient(
            self.P, self.R, self.dP, self.dR, not game.mean_field_independent_dynamics,
            self.y, self.z, self.L, self.e_init, self.e, self.g, w_init, w_cons, w_bell, w_comp)
        return gy.reshape(-1), gz, gL


def objective(game, theta):
    """Objective terms via the time-decoupled expansion."""
    return Evaluation(game, theta.y, theta.z, theta.L, jacobians=False).breakdown()


def objective_matrix(game, theta):
    """Objective terms via the assembled dense system (cross-check of :func:`objective`)."""
    system = build_system(game, theta.L)
    Lv = vec(theta.L)
    r1 = system.A_L @ Lv - system.b
    r2 = system.A_L.T @ theta.y + vec(theta.z) - system.c_L
    return ObjectiveBreakdown(float(r1 @ r1), float(r2 @ r2), float(vec(theta.z) @ Lv))


def gradient(game, theta, weights=None):
    gy, gz, gL = Evaluation(game, theta.y, theta.z, theta.L).gradient(weights)
    return ThetaPoint(gy, gz, gL)


# ---------------------------------------------------------------------------
# warm start and solution modification


def _value_based(game, L):
    mdp = induced_mdp(game, _game_view(L))
    vt = value_iteration(mdp)
    T = game.T
    y = np.concatenate([vt.V[1:].reshape(-1), -vt.V[0]]) if T > 0 else -vt.V[0].copy()
    z = vt.V[:, :, None] - vt.Q
    return y, z


def warm_start(game, L0):
    """y from optimal values, z from optimal advantages of the MDP induced by ``L0``."""
    L0 = np.asarray(L0, dtype=np.float64)
    y, z = _value_based(game, L0)
    return ThetaPoint(y, z, L0.copy())


def solution_modification(game, theta):
    """Replace (y, z) by value functions and advantages at ``theta.L``."""
    return warm_start(game, theta.L)


def extract_solution(game, theta, tol):
    pi = policy_from_occupation(theta.L)
    return pi, verify_nash(game, pi, theta.L, tol)


def _binomial_tail(c, m):
    # ((1+c)^m - m c - 1) / c^2 evaluated without cancellation
    return sum(math.comb(m, k) * c ** (k - 2) for k in range(2, m + 1))


def theorem4_constant(S, A, T, C_P, C_r, r_max):
    """Constant f(S, A, T, C_P, C_r, r_max) bounding exploitability by f*eps + eps^2."""
    if C_P < 0 or C_r < 0:
        raise ValueError("Lipschitz constants must be non-negative")
    rs = math.sqrt(S)
    value = T * (T + 1) * r_max * ((C_P + 1) ** (T + 1) - 1) * rs
    value += 2 * C_r * _binomial_tail(C_P, T + 2) * rs
    value += S ** 1.5 * A * (T + 2) ** 3 * r_max + math.sqrt(S * A * (T + 1)) + math.sqrt(T)
    return float(value)


def random_theta(rng, S, A, T, bounds, interior=False):
    """A random point of the feasible set (strictly interior in L and z when requested)."""
    alpha = 1.0 if not interior else 2.0
    L = rng.dirichlet(np.full(S * A, alpha), size=T + 1).reshape(T + 1, S, A)
    ny = S * (T + 1)
    direction = rng.normal(size=ny)
    y = direction / np.linalg.norm(direction) * bounds.y_radius * rng.uniform() ** (1.0 / ny)
    nz = S * A * (T + 1)
    z = rng.dirichlet(np.full(nz + 1, alpha))[:nz] * bounds.z_budget
    if interior:
        y *= 0.9
        L = 0.98 * L + 0.02 / (S * A)
    return ThetaPoint(y, z.reshape(T + 1, S, A), L)


def project(theta, bounds):
    y, z, L = project_components(theta.y, theta.z, theta.L, bounds)
    return ThetaPoint(y, z, L)
