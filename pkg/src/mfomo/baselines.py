"""Reference reconstructions of classical mean-field game solvers used for comparison:
fictitious play, online mirror descent and a damped best-response iteration.

They emit the same :class:`~mfomo.optim.IterationRecord` rows as the MF-OMO
solvers.  Objective columns are NaN (these methods have no MF-OMO iterate);
exploitability is evaluated every ``eval_every`` iterations.
"""
import time
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError
from .game import exploitability, induced_mdp, propagate_flow
from .mdp import check_policy, greedy_policy, policy_evaluation, policy_from_occupation, value_iteration
from .optim import IterationRecord

BASELINES = ("fictitious_play", "online_mirror_descent", "damped_fixed_point")


@dataclass(frozen=True)
class BaselineConfig:
    method: str = "fictitious_play"
    learning_rate: float = 1.0
    damping: float = 0.5
    max_iters: int = 100
    eval_every: int = 1
    seed: int = 0
    wall_clock_budget: float = None

    def __post_init__(self):
        if self.method not in BASELINES:
            raise ConfigurationError(f"unknown baseline {self.method!r}; expected one of {BASELINES}")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if not 0 < self.damping <= 1:
            raise ConfigurationError("damping must lie in (0, 1]")
        if self.max_iters < 0 or self.eval_every < 1:
            raise ConfigurationError("max_iters must be >= 0 and eval_every >= 1")

    @classmethod
    def from_dict(cls, doc):
        extra = set(doc) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigurationError(f"unknown baseline settings: {sorted(extra)}")
        return cls(**doc)

    def to_dict(self):
        return asdict(self)


def uniform_policy(game):
    return np.full((game.T + 1, game.S, game.A), 1.0 / game.A)


def best_response(game, L):
    return greedy_policy(value_iteration(induced_mdp(game, L)))


class _Recorder:
    def __init__(self, game, cfg, sink):
        self.game, self.cfg, self.sink = game, cfg, sink
        self.records = []
        self.t0 = time.perf_counter()
        self.expl0 = None

    def __call__(self, k, pi, step):
        elapsed = time.perf_counter() - self.t0
        last = k >= self.cfg.max_iters or (
            self.cfg.wall_clock_budget is not None and elapsed >= self.cfg.wall_clock_budget)
        nan = float("nan")
        rec = IterationRecord(k, elapsed, nan, nan, nan, nan, nan, step_size=step)
        if last or k % self.cfg.eval_every == 0:
            rec.expl = exploitability(self.game, pi)
            if self.expl0 is None:
                self.expl0 = rec.expl
            rec.expl_normalized = rec.expl / self.expl0 if self.expl0 > 0 else rec.expl
        self.records.append(rec)
        if self.sink is not None:
            self.sink(rec)
        return last


def fictitious_play(game, pi0=None, cfg=BaselineConfig(), sink=None):
    """Average the flows of successive best responses; report the averaged policy.

    Iteration k mixes in the new best-response flow with weight 1/(k+1), so
    the initial flow only serves to compute the first best response.
    """
    pi = uniform_policy(game) if pi0 is None else check_policy(pi0, game.S, game.A, game.T)
    L_bar = propagate_flow(game, pi)
    rec = _Recorder(game, cfg, sink)
    k = 0
    while not rec(k, pi, 1.0 / (k + 1)):
        br = best_response(game, L_bar)
        L_bar = L_bar + (propagate_flow(game, br) - L_bar) / (k + 1)
        pi = policy_from_occupation(L_bar)
        k += 1
    return pi, rec.records


def _softmax_rows(x):
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=-1, keepdims=True)


def online_mirror_descent(game, pi0=None, cfg=BaselineConfig(method="online_mirror_descent"), sink=None):
    """Accumulate Q-values of the current policy at its own flow; play their softmax."""
    pi = uniform_policy(game) if pi0 is None else check_policy(pi0, game.S, game.A, game.T)
    scores = np.log(np.maximum(pi, 1e-300))
    rec = _Recorder(game, cfg, sink)
    k = 0
    while not rec(k, pi, cfg.learning_rate):
        L = propagate_flow(game, pi)
        scores = scores + cfg.learning_rate * policy_evaluation(induced_mdp(game, L), pi).Q
        pi = _softmax_rows(scores)
        k += 1
    return pi, rec.records


def damped_fixed_point(game, pi0=None, cfg=BaselineConfig(method="damped_fixed_point"), sink=None):
    """pi <- (1 - damping) pi + damping * BR(Gamma(pi))."""
    pi = uniform_policy(game) if pi0 is None else check_policy(pi0, game.S, game.A, game.T)
    rec = _Recorder(game, cfg, sink)
    k = 0
    while not rec(k, pi, cfg.damping):
        br = best_response(game, propagate_flow(game, pi))
        pi = (1.0 - cfg.damping) * pi + cfg.damping * br
        k += 1
    return pi, rec.records


def run_baseline(game, cfg, pi0=None, sink=None):
    fn = {"fictitious_play": fictitious_play,
          "online_mirror_descent": online_mirror_descent,
          "damped_fixed_point": damped_fixed_point}[cfg.method]
    return fn(game, pi0, cfg, sink)
