"""Command line entry point: ``mfomo run | verify | enumerate-lcp``.

Exit codes: 0 success, 1 completed with a negative outcome (a failed run, a
point that is not an equilibrium), 2 bad input.
"""
import argparse
import json
import logging
import os
import sys

from .errors import MfomoError
from .experiment import ExperimentConfig, run_experiment
from .formulation import extract_solution, load_checkpoint, objective, theta_bounds
from .games import game_from_json
from .lcp import assemble_lcp, solve_by_enumeration

log = logging.getLogger("mfomo")


def _load_game(spec):
    spec = spec.strip()
    if spec.startswith("{"):
        return game_from_json(json.loads(spec))
    return game_from_json(spec)


def _cmd_run(args):
    cfg = ExperimentConfig.from_file(args.config)
    if args.workers is not None:
        cfg.workers = args.workers
    summary = run_experiment(cfg)
    failed = [r["run"] for r in summary["runs"] if r["status"] != "completed"]
    out = os.path.join(cfg.output_dir(), "summary.json")
    print(f"{len(summary['runs'])} runs, {len(failed)} failed; summary written to {out}")
    for name in failed:
        log.warning("run %s failed", name)
    return 0 if summary["all_completed"] else 1


def _cmd_verify(args):
    theta, doc = load_checkpoint(args.checkpoint)
    if args.game is not None:
        game = _load_game(args.game)
    elif doc.get("game"):
        game = game_from_json(doc["game"])
    else:
        raise MfomoError("checkpoint carries no game description; pass --game")
    feasible = theta.is_feasible(theta_bounds(game))
    _, report = extract_solution(game, theta, args.tol)
    result = {"feasible": feasible, "objective": objective(game, theta).total, **report.to_dict()}
    print(json.dumps(result, indent=2))
    return 0 if feasible and report.is_nash else 1


def _cmd_enumerate(args):
    with open(args.config) as fh:
        doc = json.load(fh)
    game = game_from_json(doc["game"])
    cap = int(doc.get("cap", 20))
    solutions = solve_by_enumeration(assemble_lcp(game), cap=cap, game=game)
    payload = {"n_equilibria": len(solutions), "equilibria": []}
    for theta in solutions:
        _, report = extract_solution(game, theta, float(doc.get("tol", 1e-8)))
        payload["equilibria"].append({"L": theta.L.tolist(), "objective": objective(game, theta).total,
                                      "exploitability": report.optimality_gap})
    if doc.get("output"):
        with open(doc["output"], "w") as fh:
            json.dump(payload, fh, indent=2)
    print(f"{len(solutions)} equilibria found")
    for i, eq in enumerate(payload["equilibria"]):
        print(f"  [{i}] objective={eq['objective']:.3e} exploitability={eq['exploitability']:.3e}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="mfomo", description="Mean-field game equilibria by optimization.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("config")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("verify", help="check whether a checkpoint is an equilibrium")
    p.add_argument("checkpoint")
    p.add_argument("--game", default=None, help="builtin name, JSON file or inline JSON")
    p.add_argument("--tol", type=float, default=1e-8)
    p.set_defaults(fn=_cmd_verify)

    p = sub.add_parser("enumerate-lcp", help="all equilibria of a linear game by support enumeration")
    p.add_argument("config")
    p.set_defaults(fn=_cmd_enumerate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (MfomoError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
