"""First-order solvers over the feasible set: PGD, SPGD, projected Adam/NAdam and a
reparametrized unconstrained mode.
"""
import math
import time
import warnings
from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import ConfigurationError, DivergenceError
from .formulation import (
    Evaluation,
    ThetaPoint,
    n_terms,
    random_theta,
    term_weights,
    theta_bounds,
)
from .game import exploitability
from .mdp import policy_from_occupation, vec
from .projections import project_components, project_components_weighted

METHODS = ("pgd", "spgd", "adam", "nadam")
DIVERGENCE_FACTOR = 1e3


@dataclass(frozen=True)
class SolverConfig:
    """Solver settings.

    ``step_size`` is the fixed PGD step (default ``1/smoothness``), the SPGD
    multiplier of the diminishing schedule, or the Adam learning rate.
    ``lr_decay`` multiplies the Adam learning rate by ``1/(1 + lr_decay*k)``;
    ``y_lr_scale`` / ``z_lr_scale`` multiply it on the y and z blocks, whose
    natural scale is far larger than that of the flow.
    ``consistency_weight`` (Adam family only) multiplies the consistency
    residuals inside the minimized objective; its zero set is unchanged and
    records always report the unweighted terms.
    """

    method: str = "pgd"
    max_iters: int = 1000
    step_size: float = None
    schedule: str = None  # "constant" | "diminishing"; method default when None
    smoothness: float = None
    batch_size: int = None
    seed: int = 0
    objective_tol: float = 0.0
    stationarity_tol: float = 0.0
    wall_clock_budget: float = None
    eval_every: int = 10
    reparametrized: bool = False
    armijo: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_decay: float = 0.0
    y_lr_scale: float = 1.0
    z_lr_scale: float = 1.0
    smoothness_samples: int = 10
    consistency_weight: float = 1.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.max_iters < 0 or self.eval_every < 1:
            raise ConfigurationError("max_iters must be >= 0 and eval_every >= 1")
        if self.step_size is not None and self.step_size <= 0:
            raise ConfigurationError("step_size must be positive")
        if self.schedule not in (None, "constant", "diminishing"):
            raise ConfigurationError(f"unknown schedule {self.schedule!r}")
        if (self.method == "pgd" and not self.armijo and self.step_size is not None
                and self.smoothness is not None and self.step_size >= 2.0 / self.smoothness):
            raise ConfigurationError("PGD step must lie in (0, 2/M)")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive")
        if self.consistency_weight <= 0:
            raise ConfigurationError("consistency_weight must be positive")
        if self.consistency_weight != 1.0 and self.method in ("pgd", "spgd") and not self.reparametrized:
            raise ConfigurationError("consistency_weight applies to the Adam family and the reparametrized mode")

    @classmethod
    def from_dict(cls, doc):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise ConfigurationError(f"unknown solver settings: {sorted(extra)}")
        return cls(**doc)

    def to_dict(self):
        return asdict(self)


@dataclass
class IterationRecord:
    iter: int
    wall_time_s: float
    f_consistency: float
    f_bellman: float
    f_complementarity: float
    f_total: float
    grad_map_norm: float
    expl: float = None
    expl_normalized: float = None
    step_size: float = None
    note: str = ""

    def to_dict(self):
        return asdict(self)


class ListSink:
    """Trace sink collecting records in memory."""

    def __init__(self):
        self.records = []

    def __call__(self, record):
        self.records.append(record)


def flow_exploitability(game, L):
    """Exploitability of the policy read off a flow."""
    return exploitability(game, policy_from_occupation(np.clip(L, 0.0, None)))


def stationarity(game, theta, eta):
    """Norm of the gradient mapping ``(theta - Proj(theta - eta * grad f)) / eta``."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    ev = Evaluation(game, theta.y, theta.z, theta.L)
    return _grad_map(theta, ev.gradient(), eta, theta_bounds(game))


def _grad_map(theta, grad, eta, bounds):
    gy, gz, gL = grad
    y, z, L = project_components(theta.y - eta * gy, theta.z - eta * gz, theta.L - eta * gL, bounds)
    diff = np.concatenate([(theta.y - y), (theta.z - z).ravel(), (theta.L - L).ravel()])
    return float(np.linalg.norm(diff) / eta)


def _flat(grad):
    """Gradient blocks in the :meth:`ThetaPoint.to_vector` layout."""
    gy, gz, gL = grad
    return np.concatenate([gy.ravel(), vec(gz), vec(gL)])


# ---------------------------------------------------------------------------
# smoothness


def estimate_smoothness(game, n_samples=10, seed=0, safety=1.5, power_iters=15, extra_points=()):
    """Sampled estimate of the gradient Lipschitz constant, inflated by ``safety``.

    Uses random feasible pairs (far and near) plus a finite-difference power
    iteration on the Hessian at each sample; every quotient is a ratio of
    gradient differences over point differences.
    """
    rng = np.random.default_rng(seed)
    bounds = theta_bounds(game)
    S, A, T = game.S, game.A, game.T

    def grad_at(v):
        th = ThetaPoint.from_vector(v, S, A, T)
        return _flat(Evaluation(game, th.y, th.z, th.L).gradient())

    points = [random_theta(rng, S, A, T, bounds, interior=True).to_vector() for _ in range(n_samples)]
    points += [np.asarray(p.to_vector() if isinstance(p, ThetaPoint) else p) for p in extra_points]
    grads = [grad_at(p) for p in points]
    best = 0.0
    for i in range(len(points)):
        j = (i + 1) % len(points)
        if j != i:
            d = np.linalg.norm(points[i] - points[j])
            if d > 0:
                best = max(best, np.linalg.norm(grads[i] - grads[j]) / d)
        scale = max(1.0, np.linalg.norm(points[i]))
        h = 1e-5 * scale
        v = rng.normal(size=points[i].size)
        v /= np.linalg.norm(v)
        for _ in range(power_iters):
            gp, gm = grad_at(points[i] + h * v), grad_at(points[i] - h * v)
            hv = (gp - gm) / (2 * h)
            nrm = np.linalg.norm(hv)
            if not np.isfinite(nrm) or nrm == 0:
                break
            best = max(best, nrm)
            v = hv / nrm
    return float(safety * best)


# ---------------------------------------------------------------------------
# main loop


class _Tracker:
    """Shared bookkeeping: records, stopping rules, divergence guard."""

    def __init__(self, game, cfg, sink, eta_ref):
        self.game = game
        self.cfg = cfg
        self.sink = sink
        self.eta_ref = eta_ref
        self.bounds = theta_bounds(game)
        self.records = []
        self.t0 = time.perf_counter()
        self.f0 = None
        self.expl0 = None
        self.note = ""

    def elapsed(self):
        return time.perf_counter() - self.t0

    def step(self, k, theta, bd, grad, step):
        """Build the record for iterate ``k``, emit it and report whether to stop."""
        gm = _grad_map(theta, grad, self.eta_ref, self.bounds)
        rec = IterationRecord(k, self.elapsed(), bd.consistency, bd.bellman, bd.complementarity,
                              bd.total, gm, step_size=step, note=self.note)
        self.note = ""
        stop = self.should_stop(k, rec)
        if stop or k % self.cfg.eval_every == 0:
            rec.expl = flow_exploitability(self.game, theta.L)
            if self.expl0 is None:
                self.expl0 = rec.expl
            rec.expl_normalized = rec.expl / self.expl0 if self.expl0 > 0 else rec.expl
        self.records.append(rec)
        if self.sink is not None:
            self.sink(rec)
        return stop

    def check_divergence(self, total, theta):
        if self.f0 is None:
            self.f0 = total
        if not math.isfinite(total) or total > DIVERGENCE_FACTOR * max(self.f0, 1.0):
            raise DivergenceError(
                f"objective {total!r} exceeded {DIVERGENCE_FACTOR:g}x max(initial value {self.f0!r}, 1)",
                last_theta=theta, records=self.records)

    def should_stop(self, k, rec):
        cfg = self.cfg
        if k >= cfg.max_iters:
            return True
        if rec.f_total <= cfg.objective_tol:
            return True
        if rec.grad_map_norm <= cfg.stationarity_tol:
            return True
        return cfg.wall_clock_budget is not None and self.elapsed() >= cfg.wall_clock_budget

    @property
    def expl_flag(self):
        """True when normalization was impossible (initial exploitability zero)."""
        return self.expl0 is not None and self.expl0 == 0


def _start(game, theta0, tracker):
    if not theta0.is_feasible(tracker.bounds):
        warnings.warn("initial point is outside the feasible set; projecting it", stacklevel=3)
        y, z, L = project_components(theta0.y, theta0.z, theta0.L, tracker.bounds)
        theta0 = ThetaPoint(y, z, L)
        tracker.note = "projected initial point"
    return theta0


def _consistency_weights(game, w):
    if w == 1.0:
        return None
    S, A, T = game.S, game.A, game.T
    return (np.full(S, w), np.full((T, S), w), np.ones((T + 1, S, A)), np.ones((T + 1, S, A)))


def _evaluate(game, theta, tracker, weights=None):
    ev = Evaluation(game, theta.y, theta.z, theta.L)
    bd = ev.breakdown()
    tracker.check_divergence(bd.total, theta)
    grad = ev.gradient(weights)
    if not all(np.all(np.isfinite(g)) for g in grad):
        raise DivergenceError("non-finite gradient", last_theta=theta, records=tracker.records)
    return ev, bd, grad


def _finish(theta, tracker):
    return theta, tracker.records


def _resolve_step(game, theta0, cfg):
    M = cfg.smoothness
    if cfg.step_size is not None:
        return cfg.step_size, M
    if M is None:
        M = estimate_smoothness(game, n_samples=cfg.smoothness_samples, seed=cfg.seed, extra_points=[theta0])
    return 1.0 / M, M


def _project_step(theta, grad, eta, bounds):
    gy, gz, gL = grad
    y, z, L = project_components(theta.y - eta * gy, theta.z - eta * gz, theta.L - eta * gL, bounds)
    return ThetaPoint(y, z, L)


def _spgd_step(k):
    return 1.0 / (math.sqrt(k + 3) * math.log2(k + 3))


def _gradient_descent(game, theta0, cfg, sink, stochastic):
    schedule = cfg.schedule or ("diminishing" if stochastic else "constant")
    if schedule == "constant":
        eta, _ = _resolve_step(game, theta0, cfg)
    else:
        eta = cfg.step_size if cfg.step_size is not None else 1.0
    tracker = _Tracker(game, cfg, sink, eta if schedule == "constant" else eta * _spgd_step(0))
    theta = _start(game, theta0, tracker)
    rng = np.random.default_rng(cfg.seed)
    S, A, T = game.S, game.A, game.T
    n = n_terms(S, A, T)
    batch = n if cfg.batch_size is None else cfg.batch_size
    if stochastic and not 1 <= batch <= n:
        raise ConfigurationError(f"batch_size must lie in [1, {n}]")
    k = 0
    while True:
        ev, bd, grad = _evaluate(game, theta, tracker)
        step = eta if schedule == "constant" else eta * _spgd_step(k)
        if tracker.step(k, theta, bd, grad, step):
            break
        if stochastic:
            est = _sampled_gradient(ev, rng, batch)
        else:
            est = grad
        new = _project_step(theta, est, step, tracker.bounds)
        if cfg.armijo and not stochastic and schedule == "constant":
            new, eta = _armijo(game, theta, bd.total, grad, eta, tracker.bounds)
        theta = new
        k += 1
    return _finish(theta, tracker)


def _sampled_gradient(ev, rng, batch):
    S, A, T = ev.game.S, ev.game.A, ev.game.T
    n = n_terms(S, A, T)
    idx = rng.choice(n, size=batch, replace=False)
    return ev.gradient(term_weights(S, A, T, idx, scale=n / batch))


def spgd_estimate(game, theta, batch, rng):
    """One SPGD gradient estimate: ``batch`` of the objective's summands drawn
    without replacement, each reweighted by ``n / batch`` (unbiased)."""
    return _sampled_gradient(Evaluation(game, theta.y, theta.z, theta.L), rng, batch)


def _armijo(game, theta, f, grad, eta, bounds, shrink=0.5, max_halvings=60):
    g = _flat(grad)
    for _ in range(max_halvings):
        new = _project_step(theta, grad, eta, bounds)
        d = new.to_vector() - theta.to_vector()
        f_new = Evaluation(game, new.y, new.z, new.L, jacobians=False).breakdown().total
        if f_new <= f + g @ d + (d @ d) / (2 * eta):
            return new, eta
        eta *= shrink
    return new, eta


def pgd(game, theta0, cfg, sink=None):
    """Projected gradient descent; returns ``(theta, records)``."""
    return _gradient_descent(game, theta0, replace(cfg, method="pgd") if cfg.method != "pgd" else cfg, sink, False)


def spgd(game, theta0, cfg, sink=None):
    """Projected SGD with uniformly sampled objective terms (no replacement)."""
    return _gradient_descent(game, theta0, cfg, sink, True)


def _adam_moments(kind, m, v, g, k, cfg):
    """Update the moment estimates in place; return (numerator, denominator) of the step."""
    b1, b2 = cfg.beta1, cfg.beta2
    m *= b1
    m += (1 - b1) * g
    v *= b2
    v += (1 - b2) * g * g
    mhat = m / (1 - b1 ** (k + 1))
    vhat = v / (1 - b2 ** (k + 1))
    if kind == "nadam":
        mhat = b1 * mhat + (1 - b1) * g / (1 - b1 ** (k + 1))
    return mhat, np.sqrt(vhat) + cfg.adam_eps


def _adam_direction(kind, m, v, g, k, cfg):
    num, den = _adam_moments(kind, m, v, g, k, cfg)
    return num / den


def _block_scale(game, cfg):
    ny, n = game.S * (game.T + 1), game.S * game.A * (game.T + 1)
    return np.concatenate([np.full(ny, cfg.y_lr_scale), np.full(n, cfg.z_lr_scale), np.ones(n)])


def adam_family(game, theta0, cfg, sink=None):
    """Projected Adam / NAdam.

    The step ``x - lr * m / d`` (with ``d = sqrt(v) + eps``) is projected in the
    metric ``sum_i d_i (x_i - u_i)^2`` rather than the Euclidean one, so that
    fixed points of the iteration are exactly the stationary points of the
    constrained problem (a Euclidean projection of a preconditioned step does
    not have that property).
    """
    if cfg.method not in ("adam", "nadam"):
        raise ConfigurationError("adam_family needs method 'adam' or 'nadam'")
    lr = cfg.step_size if cfg.step_size is not None else 1e-2
    tracker = _Tracker(game, cfg, sink, lr)
    theta = _start(game, theta0, tracker)
    S, A, T = game.S, game.A, game.T
    weights = _consistency_weights(game, cfg.consistency_weight)
    x = theta.to_vector()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    scale = _block_scale(game, cfg)
    k = 0
    while True:
        _, bd, grad = _evaluate(game, theta, tracker, weights)
        step = lr / (1.0 + cfg.lr_decay * k)
        if tracker.step(k, theta, bd, grad, step):
            break
        num, den = _adam_moments(cfg.method, m, v, _flat(grad), k, cfg)
        raw = ThetaPoint.from_vector(x - step * scale * num / den, S, A, T)
        wts = ThetaPoint.from_vector(den / scale, S, A, T)
        y, z, L = project_components_weighted(raw.y, raw.z, raw.L, wts.y, wts.z, wts.L, tracker.bounds)
        theta = ThetaPoint(y, z, L)
        x = theta.to_vector()
        k += 1
    return _finish(theta, tracker)


# ---------------------------------------------------------------------------
# reparametrized mode


@dataclass
class Reparam:
    """Unconstrained coordinates ``(u, v, w0, w)`` mapped onto the feasible set.

    ``L_t = softmax(u_t)``, ``z = budget * exp(v) / (sum exp(v) + exp(w0))``
    (normalized over all times at once so the budget holds) and
    ``y = radius / sqrt(S(T+1)) * sin(w)``.  Softmaxes subtract the maximum
    before exponentiating.
    """

    u: np.ndarray
    v: np.ndarray
    w0: float
    w: np.ndarray

    def to_vector(self):
        return np.concatenate([self.u.ravel(), self.v.ravel(), [self.w0], self.w])

    @classmethod
    def from_vector(cls, x, S, A, T):
        n = S * A * (T + 1)
        return cls(x[:n].reshape(T + 1, S, A), x[n:2 * n].reshape(T + 1, S, A), float(x[2 * n]), x[2 * n + 1:])

    @classmethod
    def from_theta(cls, theta, bounds, floor=1e-12):
        u = np.log(np.maximum(theta.L, floor))
        zs = np.maximum(theta.z, 0.0).ravel() / bounds.z_budget
        rest = max(1.0 - zs.sum(), floor)
        v = np.log(np.maximum(zs, floor)).reshape(theta.z.shape)
        c = bounds.y_radius / math.sqrt(theta.y.size)
        w = np.arcsin(np.clip(theta.y / c, -1.0, 1.0))
        return cls(u, v, math.log(rest), w)


def _softmax(x, axis=-1):
    x = x - x.max(axis=axis, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=axis, keepdims=True)


def reparam_to_theta(p, bounds):
    T1, S, A = p.u.shape
    L = _softmax(p.u.reshape(T1, -1)).reshape(T1, S, A)
    probs = _softmax(np.concatenate([p.v.ravel(), [p.w0]]))
    z = (bounds.z_budget * probs[:-1]).reshape(p.v.shape)
    y = bounds.y_radius / math.sqrt(p.w.size) * np.sin(p.w)
    return ThetaPoint(y, z, L), probs


def _reparam_grad(p, grad, theta, probs, bounds):
    gy, gz, gL = grad
    T1 = gL.shape[0]
    Lf = theta.L.reshape(T1, -1)
    gLf = gL.reshape(T1, -1)
    gu = Lf * (gLf - (gLf * Lf).sum(axis=1, keepdims=True))
    gp = np.concatenate([bounds.z_budget * gz.ravel(), [0.0]])
    glog = probs * (gp - gp @ probs)
    gw = bounds.y_radius / math.sqrt(p.w.size) * np.cos(p.w) * gy
    return np.concatenate([gu.ravel(), glog[:-1], [glog[-1]], gw])


def reparametrized_solve(game, cfg, theta0=None, params0=None, sink=None):
    """Unconstrained first-order method on ``(u, v, w0, w)``.

    ``cfg.method`` selects plain gradient steps (pgd/spgd) or Adam/NAdam.
    Starts from ``params0`` (a :class:`Reparam`), else from ``theta0`` mapped
    back, else from all-zero coordinates.
    """
    bounds = theta_bounds(game)
    S, A, T = game.S, game.A, game.T
    if params0 is None:
        if theta0 is not None:
            params0 = Reparam.from_theta(theta0, bounds)
        else:
            params0 = Reparam(np.zeros((T + 1, S, A)), np.zeros((T + 1, S, A)), 0.0, np.zeros(S * (T + 1)))
    lr = cfg.step_size if cfg.step_size is not None else 1e-2
    tracker = _Tracker(game, cfg, sink, lr)
    weights = _consistency_weights(game, cfg.consistency_weight)
    x = params0.to_vector().astype(np.float64)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    k = 0
    while True:
        p = Reparam.from_vector(x, S, A, T)
        theta, probs = reparam_to_theta(p, bounds)
        _, bd, grad = _evaluate(game, theta, tracker, weights)
        step = lr / (1.0 + cfg.lr_decay * k)
        if tracker.step(k, theta, bd, grad, step):
            break
        gx = _reparam_grad(p, grad, theta, probs, bounds)
        if cfg.method in ("adam", "nadam"):
            x = x - step * _adam_direction(cfg.method, m, v, gx, k, cfg)
        else:
            x = x - step * gx
        k += 1
    return _finish(theta, tracker)


def solve(game, theta0, cfg, sink=None):
    """Dispatch on ``cfg.method`` / ``cfg.reparametrized``."""
    if cfg.reparametrized:
        return reparametrized_solve(game, cfg, theta0=theta0, sink=sink)
    if cfg.method == "pgd":
        return pgd(game, theta0, cfg, sink)
    if cfg.method == "spgd":
        return spgd(game, theta0, cfg, sink)
    return adam_family(game, theta0, cfg, sink)
