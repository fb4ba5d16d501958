"""Config-driven experiment harness: runs a (solver x seed) matrix on one game,
writes one CSV trace per run plus a summary JSON with basin statistics.
"""
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import BASELINES, BaselineConfig, run_baseline, uniform_policy
from .errors import ConfigurationError, MfomoError
from .formulation import ThetaPoint, load_checkpoint, save_checkpoint, theta_bounds, warm_start
from .game import propagate_flow
from .games import CongregationGame, game_from_json, nash_construction
from .mdp import policy_from_occupation
from .optim import SolverConfig, flow_exploitability, solve
from .projections import project_simplex

CSV_COLUMNS = ("iter", "time_s", "f_total", "f_consistency", "f_bellman", "f_complementarity",
               "grad_map_norm", "expl", "expl_normalized")
OUTPUT_ROOT_ENV = "MFOMO_OUTPUT_ROOT"
INIT_KINDS = ("uniform", "warm_start_near_ne", "from_checkpoint")


def neighborhood_init(game, ne_flow, epsilon, seed):
    """Warm-started point whose flow is a random perturbation of ``ne_flow``.

    Each slice gets uniform noise with l1 norm at most ``epsilon`` and is then
    projected back onto the simplex.
    """
    if epsilon < 0:
        raise ConfigurationError("epsilon must be non-negative")
    ne_flow = np.asarray(ne_flow, dtype=np.float64)
    T1, S, A = ne_flow.shape
    rng = np.random.default_rng(seed)
    noise = rng.uniform(-1.0, 1.0, size=(T1, S * A))
    norms = np.abs(noise).sum(axis=1, keepdims=True)
    noise *= epsilon * rng.uniform(size=(T1, 1)) / np.maximum(norms, 1e-300)
    L0 = project_simplex(ne_flow.reshape(T1, -1) + noise).reshape(T1, S, A)
    return warm_start(game, L0)


def _fmt(x):
    if x is None:
        return ""
    return format(float(x), ".17g")


def write_trace(records, path, timestamps=True):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for r in records:
            row = [str(r.iter), _fmt(r.wall_time_s) if timestamps else "", _fmt(r.f_total),
                   _fmt(r.f_consistency), _fmt(r.f_bellman), _fmt(r.f_complementarity),
                   _fmt(r.grad_map_norm), _fmt(r.expl), _fmt(r.expl_normalized)]
            fh.write(",".join(row) + "\n")


def read_trace(path):
    """Parse a CSV trace back into a dict of float arrays (blank cells become NaN)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    return {name: np.array([float(r[i]) if r[i] else math.nan for r in rows]) for i, name in enumerate(header)}


@dataclass
class ExperimentConfig:
    """One game, a list of solvers, a list of seeds and an initialization rule.

    ``init`` is ``{"kind": "uniform"}``, ``{"kind": "warm_start_near_ne",
    "j_star": j, "epsilon": eps}`` (``j_star`` may be a list, giving one cell
    per reference) or ``{"kind": "from_checkpoint", "path": p}``.
    """

    game: dict
    solvers: list
    seeds: list
    init: dict = field(default_factory=lambda: {"kind": "uniform"})
    outputs: str = "results"
    ne_references: list = None
    expl_tol: float = 1e-3
    workers: int = 1
    timestamps: bool = True

    def __post_init__(self):
        if not self.solvers:
            raise ConfigurationError("need at least one solver")
        if not self.seeds:
            raise ConfigurationError("need at least one seed")
        self.solvers = [_solver_from(s) for s in self.solvers]
        kind = self.init.get("kind", "uniform")
        if kind not in INIT_KINDS:
            raise ConfigurationError(f"unknown init kind {kind!r}; expected one of {INIT_KINDS}")
        if kind == "warm_start_near_ne":
            if float(self.init.get("epsilon", 0.0)) < 0:
                raise ConfigurationError("epsilon must be non-negative")
            if "j_star" not in self.init:
                raise ConfigurationError("warm_start_near_ne needs j_star")
        if kind == "from_checkpoint" and "path" not in self.init:
            raise ConfigurationError("from_checkpoint needs a path")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")

    @classmethod
    def from_dict(cls, doc):
        extra = set(doc) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigurationError(f"unknown experiment settings: {sorted(extra)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def output_dir(self):
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not os.path.isabs(self.outputs):
            return os.path.join(root, self.outputs)
        return self.outputs


def _solver_from(doc):
    if isinstance(doc, (SolverConfig, BaselineConfig)):
        return doc
    if not isinstance(doc, dict) or "method" not in doc:
        raise ConfigurationError("each solver needs a 'method'")
    if doc["method"] in BASELINES:
        return BaselineConfig.from_dict(doc)
    return SolverConfig.from_dict(doc)


def _reference_flows(game, cfg):
    if cfg.ne_references is not None:
        return [np.asarray(L, dtype=np.float64) for L in cfg.ne_references]
    if isinstance(game, CongregationGame):
        r = np.asarray(game.params.r)
        tops = np.flatnonzero(np.isclose(r, r.max()))
        return [nash_construction(game.params, int(j))[1] for j in tops]
    return None


def _cells(cfg):
    """List of (label, j_star or None, epsilon) initialization cells."""
    init = cfg.init
    kind = init.get("kind", "uniform")
    if kind != "warm_start_near_ne":
        return [(kind, None, None)]
    stars = init["j_star"] if isinstance(init["j_star"], list) else [init["j_star"]]
    eps = float(init.get("epsilon", 0.0))
    return [(f"ne{j}_eps{eps:g}", int(j), eps) for j in stars]


def _initial_point(game, cfg, refs, j_star, epsilon, seed):
    kind = cfg.init.get("kind", "uniform")
    if kind == "uniform":
        return warm_start(game, propagate_flow(game, uniform_policy(game)))
    if kind == "from_checkpoint":
        theta, _ = load_checkpoint(cfg.init["path"])
        return theta
    if refs is None or not 0 <= j_star < len(refs):
        raise ConfigurationError(f"no reference equilibrium with index {j_star}")
    return neighborhood_init(game, refs[j_star], epsilon, seed)


def nearest_reference(L, refs):
    d = [float(np.linalg.norm((np.asarray(L) - R).ravel())) for R in refs]
    return int(np.argmin(d))


def _run_one(job):
    """Execute one (solver, seed, cell) run; never raises."""
    game_doc, solver, seed, cell, cfg_doc, out_dir, idx = job
    cfg = ExperimentConfig.from_dict(cfg_doc)
    game = game_from_json(game_doc)
    label, j_star, eps = cell
    name = f"{idx:02d}_{solver.method}_{label}_seed{seed}"
    entry = {"run": name, "solver": solver.to_dict(), "seed": seed, "cell": label,
             "j_star": j_star, "epsilon": eps, "status": "completed", "error": None}
    records, theta = [], None
    try:
        refs = _reference_flows(game, cfg)
        theta0 = _initial_point(game, cfg, refs, j_star, eps, seed)
        if isinstance(solver, BaselineConfig):
            pi0 = policy_from_occupation(theta0.L)
            pi, records = run_baseline(game, replace(solver, seed=seed), pi0=pi0)
            final_L = propagate_flow(game, pi)
        else:
            theta, records = solve(game, theta0, replace(solver, seed=seed))
            final_L = theta.L
    except MfomoError as exc:
        entry.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        records = getattr(exc, "records", records) or records
        final_L = None
    except Exception as exc:  # a failing run must not bring down the sweep
        entry.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        final_L = None
    csv_path = os.path.join(out_dir, name + ".csv")
    write_trace(records, csv_path, cfg.timestamps)
    entry["csv"] = os.path.basename(csv_path)
    entry["iterations"] = records[-1].iter if records else 0
    evaluated = [r for r in records if r.expl_normalized is not None]
    if records:
        last = records[-1]
        entry["final_f_total"] = None if math.isnan(last.f_total) else last.f_total
        entry["final_expl"] = last.expl
        entry["final_expl_normalized"] = last.expl_normalized
        entry["min_expl_normalized"] = min(r.expl_normalized for r in evaluated) if evaluated else None
        entry["wall_time_s"] = last.wall_time_s
    if final_L is not None and entry["final_expl"] is None:
        entry["final_expl"] = flow_exploitability(game, final_L)
    if theta is not None:
        ckpt = os.path.join(out_dir, name + ".theta.json")
        save_checkpoint(theta, ckpt, game=game.to_json() if hasattr(game, "to_json") else None)
        entry["checkpoint"] = os.path.basename(ckpt)
    entry["final_L"] = None if final_L is None else final_L
    return entry


def _basin_table(entries, refs, tol):
    """p0: did not reach ``tol``; p1: reached the seeding NE; p2: reached another one."""
    table = {}
    for e in entries:
        if e["j_star"] is None:
            continue
        key = f"{e['solver']['method']}|{e['cell']}"
        cell = table.setdefault(key, {"j_star": e["j_star"], "epsilon": e["epsilon"],
                                      "method": e["solver"]["method"], "n": 0, "p0": 0, "p1": 0, "p2": 0})
        cell["n"] += 1
        reached = (e["status"] == "completed" and e.get("final_expl_normalized") is not None
                   and e["final_expl_normalized"] <= tol and e["final_L"] is not None)
        if not reached:
            cell["p0"] += 1
        elif nearest_reference(e["final_L"], refs) == e["j_star"]:
            cell["p1"] += 1
        else:
            cell["p2"] += 1
    for cell in table.values():
        for k in ("p0", "p1", "p2"):
            cell[k] = cell[k] / cell["n"]
    return table


def run_experiment(cfg):
    """Run every (solver, seed, init cell); returns the summary dict (also written to disk)."""
    if isinstance(cfg, dict):
        cfg = ExperimentConfig.from_dict(cfg)
    game = game_from_json(cfg.game)
    out_dir = cfg.output_dir()
    os.makedirs(out_dir, exist_ok=True)
    cfg_doc = {
        "game": cfg.game, "solvers": [s.to_dict() for s in cfg.solvers], "seeds": list(cfg.seeds),
        "init": cfg.init, "outputs": cfg.outputs, "ne_references": cfg.ne_references,
        "expl_tol": cfg.expl_tol, "workers": 1, "timestamps": cfg.timestamps,
    }
    jobs = []
    for i, solver in enumerate(cfg.solvers):
        for cell in _cells(cfg):
            for seed in cfg.seeds:
                jobs.append((cfg.game, solver, seed, cell, cfg_doc, out_dir, i))
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            entries = list(pool.map(_run_one, jobs))
    else:
        entries = [_run_one(job) for job in jobs]

    refs = _reference_flows(game, cfg)
    summary = {"game": cfg.game, "expl_tol": cfg.expl_tol, "init": cfg.init,
               "all_completed": all(e["status"] == "completed" for e in entries)}
    if refs is not None and any(e["j_star"] is not None for e in entries):
        summary["basins"] = _basin_table(entries, refs, cfg.expl_tol)
        for e in entries:
            if e["final_L"] is not None:
                e["nearest_ne"] = nearest_reference(e["final_L"], refs)
    for e in entries:
        e.pop("final_L")
    summary["runs"] = entries
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, default=_json_default)
    return summary


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def validate_checkpoint(path, game=None):
    """Reload a checkpoint and check it lies in the feasible set of ``game``."""
    theta, doc = load_checkpoint(path)
    if game is None:
        if not doc.get("game"):
            raise ConfigurationError("checkpoint carries no game; pass one explicitly")
        game = game_from_json(doc["game"])
    return theta, theta.is_feasible(theta_bounds(game)), game


__all__ = ["CSV_COLUMNS", "ExperimentConfig", "neighborhood_init", "read_trace",
           "run_experiment", "validate_checkpoint", "write_trace", "nearest_reference"]
