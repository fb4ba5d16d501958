"""Built-in games: congregation (multiple equilibria), SIS epidemic, tabular and random."""
import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigurationError, StructuralError
from .game import GameModel


class TabularGame(GameModel):
    """Mean-field-independent dynamics with rewards ``r_bar + <R_bar, L_t>``.

    ``R_bar`` may be omitted (plain MDP rewards).  ``transitions`` has shape
    (T, S, S, A) with the next state on axis 1, ``r_bar`` (T+1, S, A) and
    ``R_bar`` (T+1, S, A, S, A).
    """

    mean_field_independent_dynamics = True
    linear_rewards = True

    def __init__(self, mu0, transitions, r_bar, R_bar=None, r_max=None, renormalize=False):
        r_bar = np.asarray(r_bar, dtype=np.float64)
        T1, S, A = r_bar.shape
        P = np.asarray(transitions, dtype=np.float64).reshape(T1 - 1, S, S, A)
        mu0 = np.asarray(mu0, dtype=np.float64)
        if renormalize:
            mu0 = np.clip(mu0, 0, None)
            mu0 = mu0 / mu0.sum()
            P = np.clip(P, 0, None)
            if P.size:
                P = P / P.sum(axis=1, keepdims=True)
        if P.size and (np.any(P < -1e-12) or np.abs(P.sum(axis=1) - 1).max() > 1e-12):
            raise StructuralError("transition kernels must be conditional distributions")
        R_bar = np.zeros((T1, S, A, S, A)) if R_bar is None else np.asarray(R_bar, dtype=np.float64)
        if R_bar.shape != (T1, S, A, S, A):
            raise StructuralError(f"R_bar must have shape {(T1, S, A, S, A)}")
        if r_max is None:
            # on the simplex |<R, L>| <= max |R|
            r_max = float((np.abs(r_bar) + np.abs(R_bar).reshape(T1, S, A, -1).max(axis=-1)).max())
        super().__init__(S, A, T1 - 1, mu0, r_max)
        self.P = P
        self.r_bar = r_bar
        self.R_bar = R_bar
        self.C_P = 0.0
        self.C_r = float(np.abs(R_bar).max()) if R_bar.size else 0.0

    def transition(self, t, Lt):
        return self.P[t]

    def reward(self, t, Lt):
        return self.r_bar[t] + np.einsum("saij,ij->sa", self.R_bar[t], Lt)

    def transition_jacobian(self, t, Lt):
        return np.zeros((self.S, self.S, self.A, self.S, self.A))

    def reward_jacobian(self, t, Lt):
        return self.R_bar[t]

    def to_json(self):
        return {
            "S": self.S, "A": self.A, "T": self.T,
            "mu0": self.mu0.tolist(),
            "transitions": self.P.tolist(),
            "r_bar": self.r_bar.tolist(),
            "R_bar": self.R_bar.tolist(),
            "r_max": self.r_max,
        }


# ---------------------------------------------------------------------------
# congregation game with several equilibria


@dataclass
class CongregationGameParams:
    n: int
    T: int
    r: list
    C: list
    mu0: list = None

    def __post_init__(self):
        self.r = [float(v) for v in self.r]
        self.C = [float(v) for v in self.C]
        if len(self.r) != self.n:
            raise ConfigurationError("need one reward level per state")
        if len(self.C) != self.T:
            raise ConfigurationError("need one C_t for each t = 1..T")
        if min(self.r) <= 0:
            raise ConfigurationError("reward levels must be positive")
        if self.C and min(self.C) < 0:
            raise ConfigurationError("C_t must be non-negative")
        if self.mu0 is None:
            self.mu0 = [1.0 / self.n] * self.n

    @classmethod
    def paper_instance(cls, seed=0, n=5, T=10, top=1.5, n_top=3):
        """Three top states at ``top`` and the rest plus all ``C_t`` drawn from U(0, 1)."""
        rng = np.random.default_rng(seed)
        rest = rng.uniform(0.0, 1.0, size=n - n_top)
        C = rng.uniform(0.0, 1.0, size=T)
        return cls(n=n, T=T, r=[top] * n_top + rest.tolist(), C=C.tolist())


class CongregationGame(GameModel):
    """Agents earn ``r^i`` for staying at state i when the whole population is there.

    ``D_i(L) = ||L - e_(i,i)||^2`` measures the distance from full congregation
    at (i, i); rewards shrink and transitions get noisier as it grows.  At
    t = 0 rewards vanish and moves are deterministic.
    """

    def __init__(self, params):
        self.params = params
        n = params.n
        super().__init__(n, n, params.T, params.mu0, max(params.r))
        self.r = np.asarray(params.r)
        self.C = np.concatenate([[0.0], np.asarray(params.C)])
        self.mean_field_independent_dynamics = bool(np.all(self.C[: params.T] == 0.0))
        self._eye = np.eye(n)
        # |dD_i/dL| <= 2 entrywise on the simplex, so these are valid l1-Lipschitz bounds
        self.C_r = float(self.r.max())
        self.C_P = 4.0 * (n - 1) * float(self.C.max())

    def _dist(self, Lt):
        # ||L - e_ii||^2 = ||L||^2 - 2 L_ii + 1
        return float((Lt * Lt).sum()) - 2.0 * np.diagonal(Lt) + 1.0

    def reward(self, t, Lt):
        if t == 0:
            return np.zeros((self.S, self.A))
        D = self._dist(Lt)
        return np.diag(self.r * (1.0 - D / 2.0))

    def transition(self, t, Lt):
        n = self.S
        if t == 0:
            return np.broadcast_to(self._eye[:, None, :], (n, n, n)).copy()
        D = self._dist(Lt)
        c = self.C[t]
        # P[i', i, j] = (1{i'=j} + c D_i) / (1 + n c D_i)
        num = self._eye[:, None, :] + (c * D)[None, :, None]
        return num / (1.0 + n * c * D)[None, :, None]

    def _dist_jacobian(self, Lt):
        # dD_i / dL[s, a] = 2 (L[s, a] - 1{s = a = i})
        n = self.S
        jac = np.broadcast_to(2.0 * Lt, (n, n, n)).copy()
        idx = np.arange(n)
        jac[idx, idx, idx] -= 2.0
        return jac

    def reward_jacobian(self, t, Lt):
        n = self.S
        out = np.zeros((n, n, n, n))
        if t == 0:
            return out
        dD = self._dist_jacobian(Lt)
        idx = np.arange(n)
        out[idx, idx] = -(self.r / 2.0)[:, None, None] * dD
        return out

    def transition_jacobian(self, t, Lt):
        n = self.S
        if t == 0:
            return np.zeros((n, n, n, n, n))
        D = self._dist(Lt)
        c = self.C[t]
        dD = self._dist_jacobian(Lt)
        # dP[i', i, j]/dD_i = c (1 - n 1{i'=j}) / (1 + n c D_i)^2
        factor = c * (1.0 - n * self._eye)[:, None, :] / ((1.0 + n * c * D) ** 2)[None, :, None]
        return factor[..., None, None] * dD[None, :, None, :, :]

    def to_json(self):
        return {"builtin": "congregation", "params": asdict(self.params)}


def congregation_game(params):
    return CongregationGame(params)


def nash_construction(params, j_star):
    """Closed-form equilibrium where everybody moves to and stays at ``j_star`` (0-based)."""
    n, T = params.n, params.T
    r = np.asarray(params.r)
    if not np.isclose(r[j_star], r.max()):
        warnings.warn(f"state {j_star} is not a reward maximizer; the pair is not an equilibrium", stacklevel=2)
    pi = np.zeros((T + 1, n, n))
    pi[:, :, j_star] = 1.0
    L = np.zeros((T + 1, n, n))
    L[0] = np.asarray(params.mu0)[:, None] * pi[0]
    L[1:, j_star, j_star] = 1.0
    return pi, L


# ---------------------------------------------------------------------------
# SIS epidemic

SUSCEPTIBLE, INFECTED = 0, 1
GO_OUT, DISTANCE = 0, 1


@dataclass
class SisGameParams:
    infection_rate: float = 0.8
    recovery_rate: float = 0.3
    distancing_cost: float = 0.5
    infection_cost: float = 2.0
    T: int = 50
    mu0: list = field(default_factory=lambda: [0.9, 0.1])

    def __post_init__(self):
        for name in ("infection_rate", "recovery_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1]")
        if self.distancing_cost < 0 or self.infection_cost < 0:
            raise ConfigurationError("costs must be non-negative")


class SisGame(GameModel):
    """Two states (susceptible, infected), two actions (go out, distance).

    A susceptible agent going out is infected with probability
    ``infection_rate * infected_mass``; distancing keeps it healthy.  Infected
    agents recover with ``recovery_rate``.  Rewards are negated costs.
    """

    def __init__(self, params):
        self.params = params
        cd, ci = params.distancing_cost, params.infection_cost
        super().__init__(2, 2, params.T, params.mu0, cd + ci)
        self.mean_field_independent_dynamics = params.infection_rate == 0.0
        self.linear_rewards = True
        R = np.array([[0.0, -cd], [-ci, -ci - cd]])
        self._R = R
        self.r_bar = np.broadcast_to(R, (params.T + 1, 2, 2)).copy()
        self.R_bar = np.zeros((params.T + 1, 2, 2, 2, 2))
        self.C_r = 0.0
        self.C_P = 2.0 * params.infection_rate

    def reward(self, t, Lt):
        return self._R.copy()

    def reward_jacobian(self, t, Lt):
        return np.zeros((2, 2, 2, 2))

    def transition(self, t, Lt):
        beta, gamma = self.params.infection_rate, self.params.recovery_rate
        m = Lt[INFECTED].sum()
        P = np.zeros((2, 2, 2))
        P[INFECTED, SUSCEPTIBLE, GO_OUT] = beta * m
        P[SUSCEPTIBLE, SUSCEPTIBLE, GO_OUT] = 1.0 - beta * m
        P[SUSCEPTIBLE, SUSCEPTIBLE, DISTANCE] = 1.0
        P[SUSCEPTIBLE, INFECTED, :] = gamma
        P[INFECTED, INFECTED, :] = 1.0 - gamma
        return P

    def transition_jacobian(self, t, Lt):
        beta = self.params.infection_rate
        J = np.zeros((2, 2, 2, 2, 2))
        J[INFECTED, SUSCEPTIBLE, GO_OUT, INFECTED, :] = beta
        J[SUSCEPTIBLE, SUSCEPTIBLE, GO_OUT, INFECTED, :] = -beta
        return J

    def to_json(self):
        return {"builtin": "sis", "params": asdict(self.params)}


def sis_game(params=None):
    return SisGame(params or SisGameParams())


# ---------------------------------------------------------------------------
# random smooth games for property tests


class RandomGame(GameModel):
    """Rewards quadratic in L_t, transitions a softmax of logits affine in L_t.

    With coefficients in [-1/2, 1/2] the reward is ``knob``-Lipschitz and the
    transition kernel ``knob``-Lipschitz (both w.r.t. the l1 norm of L_t).
    """

    def __init__(self, S, A, T, seed, lipschitz_knob=1.0):
        rng = np.random.default_rng(seed)
        k = float(lipschitz_knob)
        self.seed, self.knob = seed, k
        mu0 = rng.dirichlet(np.ones(S))
        self.r0 = rng.uniform(-0.5, 0.5, size=(T + 1, S, A))
        self.c1 = rng.uniform(-0.5, 0.5, size=(T + 1, S, A, S, A))
        self.c2 = rng.uniform(-0.5, 0.5, size=(T + 1, S, A, S, A))
        self.g0 = rng.normal(0.0, 1.0, size=(T, S, S, A))
        self.G1 = rng.uniform(-0.5, 0.5, size=(T, S, S, A, S, A))
        # |r| <= 1/2 + k/2 + k/4 on the simplex; 1% slack covers the neighbourhood
        super().__init__(S, A, T, mu0, 1.01 * (0.5 + 0.75 * k))
        self.mean_field_independent_dynamics = k == 0.0
        self.C_r = k
        self.C_P = k

    def reward(self, t, Lt):
        k = self.knob
        lin = np.einsum("saij,ij->sa", self.c1[t], Lt)
        quad = np.einsum("saij,ij->sa", self.c2[t], Lt)
        return self.r0[t] + k * lin + k * quad * quad

    def reward_jacobian(self, t, Lt):
        k = self.knob
        quad = np.einsum("saij,ij->sa", self.c2[t], Lt)
        return k * self.c1[t] + 2.0 * k * quad[:, :, None, None] * self.c2[t]

    def _logits(self, t, Lt):
        return self.g0[t] + self.knob * np.einsum("psaij,ij->psa", self.G1[t], Lt)

    def transition(self, t, Lt):
        z = self._logits(t, Lt)
        z = z - z.max(axis=0, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=0, keepdims=True)

    def transition_jacobian(self, t, Lt):
        P = self.transition(t, Lt)
        dz = self.knob * self.G1[t]
        mean = np.einsum("psa,psaij->saij", P, dz)
        return P[..., None, None] * (dz - mean[None])

    def to_json(self):
        return {"builtin": "random", "params": {"S": self.S, "A": self.A, "T": self.T,
                                                 "seed": self.seed, "lipschitz_knob": self.knob}}


def random_game(S, A, T, seed, lipschitz_knob=1.0):
    return RandomGame(S, A, T, seed, lipschitz_knob)


def random_linear_game(S, A, T, seed, scale=1.0):
    """Random mean-field-independent game with rewards linear in L_t."""
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(S), size=(T, S, A))  # (T, S, A, S_next)
    P = np.transpose(P, (0, 3, 1, 2))
    r_bar = rng.uniform(-0.5, 0.5, size=(T + 1, S, A))
    R_bar = scale * rng.uniform(-0.5, 0.5, size=(T + 1, S, A, S, A))
    return TabularGame(rng.dirichlet(np.ones(S)), P, r_bar, R_bar)


def coordination_game(S=2, A=2, T=1, bias=0.1, seed=0, mu0=None):
    """Linear game where action ``a`` pays the population mass playing ``a`` and
    leads to state ``a mod S``.

    Small random state-action biases keep mixed equilibria isolated (without
    them the mixed ones form a continuum).  Everybody-plays-``a`` profiles are
    equilibria whenever ``bias`` is below ``1/2``.
    """
    rng = np.random.default_rng(seed)
    P = np.zeros((T, S, S, A))
    for a in range(A):
        P[:, a % S, :, a] = 1.0
    r_bar = bias * rng.uniform(-1.0, 1.0, size=(T + 1, S, A))
    R_bar = np.zeros((T + 1, S, A, S, A))
    for a in range(A):
        R_bar[:, :, a, :, a] = 1.0
    mu0 = np.full(S, 1.0 / S) if mu0 is None else mu0
    return TabularGame(mu0, P, r_bar, R_bar)


# ---------------------------------------------------------------------------
# (de)serialization

BUILTINS = {
    "congregation": lambda p: CongregationGame(CongregationGameParams(**p)),
    "congregation_paper": lambda p: CongregationGame(CongregationGameParams.paper_instance(**p)),
    "sis": lambda p: SisGame(SisGameParams(**p)),
    "random": lambda p: RandomGame(**p),
    "random_linear": lambda p: random_linear_game(**p),
    "coordination": lambda p: coordination_game(**p),
}


def game_from_json(doc):
    """Build a game from a parsed JSON document (builtin name or explicit tensors)."""
    if isinstance(doc, str):
        if doc in BUILTINS:
            return BUILTINS[doc]({})
        with open(doc) as fh:
            doc = json.load(fh)
    name = doc.get("builtin", doc.get("name"))
    if name is not None:
        if name not in BUILTINS:
            raise ConfigurationError(f"unknown builtin game {name!r}; choose from {sorted(BUILTINS)}")
        return BUILTINS[name](dict(doc.get("params", {})))
    try:
        S, A, T = int(doc["S"]), int(doc["A"]), int(doc["T"])
        r_bar = np.asarray(doc.get("r_bar", doc.get("rewards")), dtype=np.float64)
        transitions = np.asarray(doc["transitions"], dtype=np.float64) if T > 0 else np.zeros((0, S, S, A))
    except KeyError as exc:
        raise ConfigurationError(f"game document misses field {exc}") from exc
    if r_bar.shape != (T + 1, S, A) or transitions.shape != (T, S, S, A):
        raise StructuralError("tensor shapes do not match the declared S, A, T")
    R_bar = doc.get("R_bar")
    return TabularGame(doc["mu0"], transitions, r_bar, None if R_bar is None else np.asarray(R_bar),
                       r_max=doc.get("r_max"), renormalize=bool(doc.get("renormalize", False)))
