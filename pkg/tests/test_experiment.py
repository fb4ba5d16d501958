import json
import os

import numpy as np
import pytest

from mfomo.cli import main
from mfomo.errors import ConfigurationError
from mfomo.experiment import (
    CSV_COLUMNS,
    ExperimentConfig,
    neighborhood_init,
    read_trace,
    run_experiment,
    validate_checkpoint,
)
from mfomo.formulation import objective, save_checkpoint, theta_bounds, warm_start
from mfomo.games import CongregationGameParams, congregation_game, nash_construction

GAME = {"builtin": "random", "params": {"S": 2, "A": 2, "T": 2, "seed": 1}}


def _cfg(tmp_path, **kw):
    doc = {"game": GAME, "solvers": [{"method": "pgd", "max_iters": 30, "eval_every": 10}],
           "seeds": [0], "outputs": str(tmp_path / "out")}
    doc.update(kw)
    return doc


def test_config_validation(tmp_path):
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict(_cfg(tmp_path, solvers=[]))
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict(_cfg(tmp_path, seeds=[]))
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict(_cfg(tmp_path, init={"kind": "warm_start_near_ne", "j_star": 0, "epsilon": -1}))
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict(_cfg(tmp_path, solvers=[{"method": "bfgs"}]))
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict(_cfg(tmp_path, colour="red"))
    with pytest.raises(ConfigurationError):
        run_experiment(_cfg(tmp_path, game={"builtin": "nope"}))


def test_csv_schema_and_monotone_pgd_trace(tmp_path):
    summary = run_experiment(_cfg(tmp_path))
    run = summary["runs"][0]
    path = tmp_path / "out" / run["csv"]
    with open(path) as fh:
        assert fh.readline().strip() == ",".join(CSV_COLUMNS)
    trace = read_trace(path)
    assert np.all(np.diff(trace["f_total"]) <= 1e-12)
    assert np.isnan(trace["expl"][1]) and not np.isnan(trace["expl"][10])
    # 17 significant digits round-trip exactly
    with open(path) as fh:
        fh.readline()
        cell = fh.readline().split(",")[2]
    assert float(cell) == trace["f_total"][0] and format(float(cell), ".17g") == cell


def test_reruns_are_byte_identical(tmp_path):
    doc = _cfg(tmp_path, timestamps=False,
               solvers=[{"method": "spgd", "batch_size": 5, "max_iters": 20},
                        {"method": "adam", "max_iters": 20},
                        {"method": "online_mirror_descent", "max_iters": 5}],
               seeds=[0, 1])
    run_experiment(doc)
    first = {p: (tmp_path / "out" / p).read_bytes() for p in os.listdir(tmp_path / "out") if p.endswith(".csv")}
    run_experiment(doc)
    second = {p: (tmp_path / "out" / p).read_bytes() for p in first}
    assert len(first) == 6 and first == second


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv("MFOMO_OUTPUT_ROOT", str(tmp_path / "root"))
    run_experiment(_cfg(tmp_path, outputs="rel"))
    assert (tmp_path / "root" / "rel" / "summary.json").exists()


def test_failed_runs_are_recorded_not_fatal(tmp_path):
    doc = _cfg(tmp_path, init={"kind": "from_checkpoint", "path": str(tmp_path / "missing.json")},
               solvers=[{"method": "pgd", "max_iters": 3}])
    summary = run_experiment(doc)
    assert not summary["all_completed"]
    assert summary["runs"][0]["status"] == "failed"


def test_checkpoints_revalidate(tmp_path):
    summary = run_experiment(_cfg(tmp_path, solvers=[{"method": "adam", "max_iters": 10}]))
    ckpt = tmp_path / "out" / summary["runs"][0]["checkpoint"]
    _, feasible, _ = validate_checkpoint(ckpt)
    assert feasible


def test_neighborhood_init_properties():
    params = CongregationGameParams.paper_instance()
    game = congregation_game(params)
    _, L = nash_construction(params, 1)
    theta = neighborhood_init(game, L, 0.0, seed=3)
    np.testing.assert_array_equal(theta.L, L)
    assert objective(game, theta).total <= 1e-12
    for seed in range(20):
        theta = neighborhood_init(game, L, 0.05, seed)
        assert theta.is_feasible(theta_bounds(game))
        # projection onto the simplex at most doubles the l1 perturbation
        assert np.abs(theta.L - L).sum(axis=(1, 2)).max() <= 2 * 0.05 + 1e-12
    with pytest.raises(ConfigurationError):
        neighborhood_init(game, L, -0.1, 0)


def test_basin_proportions_sum_to_one(tmp_path):
    doc = {"game": {"builtin": "congregation_paper", "params": {"seed": 0, "T": 3}},
           "solvers": [{"method": "nadam", "max_iters": 60, "eval_every": 60}], "seeds": [0, 1, 2],
           "init": {"kind": "warm_start_near_ne", "j_star": [0, 2], "epsilon": 0.1},
           "outputs": str(tmp_path / "basin")}
    summary = run_experiment(doc)
    assert len(summary["basins"]) == 2
    for cell in summary["basins"].values():
        assert cell["n"] == 3
        assert cell["p0"] + cell["p1"] + cell["p2"] == pytest.approx(1.0)
    assert all("nearest_ne" in r for r in summary["runs"])


def test_parallel_workers_match_serial(tmp_path):
    doc = _cfg(tmp_path, timestamps=False, seeds=[0, 1])
    run_experiment(doc)
    serial = {p: (tmp_path / "out" / p).read_bytes() for p in os.listdir(tmp_path / "out") if p.endswith(".csv")}
    doc["workers"] = 2
    run_experiment(doc)
    assert serial == {p: (tmp_path / "out" / p).read_bytes() for p in serial}


def test_cli_run_verify_and_enumerate(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(_cfg(tmp_path)))
    assert main(["run", str(cfg)]) == 0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    ckpt = tmp_path / "out" / summary["runs"][0]["checkpoint"]
    assert main(["verify", str(ckpt)]) == 1  # 30 PGD steps do not reach an equilibrium

    params = CongregationGameParams.paper_instance()
    game = congregation_game(params)
    _, L = nash_construction(params, 0)
    ne = tmp_path / "ne.json"
    save_checkpoint(warm_start(game, L), ne)
    assert main(["verify", str(ne), "--game", json.dumps(game.to_json())]) == 0

    lcp_cfg = tmp_path / "lcp.json"
    lcp_cfg.write_text(json.dumps({"game": {"builtin": "coordination", "params": {"seed": 0}},
                                   "output": str(tmp_path / "eq.json")}))
    assert main(["enumerate-lcp", str(lcp_cfg)]) == 0
    assert json.loads((tmp_path / "eq.json").read_text())["n_equilibria"] == 9


def test_cli_errors(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"game": GAME, "solvers": [], "seeds": [0]}))
    assert main(["run", str(bad)]) == 2
    assert "error" in capsys.readouterr().err
