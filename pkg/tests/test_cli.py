import csv
import json
import math
import shutil
import subprocess
import textwrap
from pathlib import Path

import numpy as np
import pytest

from flowcompute.cli import EXIT_CONFIG, EXIT_OK, EXIT_SIM, EXIT_SOLVER, main
from flowcompute.config import load_scenario, parse_scenario
from flowcompute.experiments import cmd_threshold, threshold_table
from flowcompute.model import Complexity

SCEN = Path(__file__).resolve().parents[1] / "scenarios"


def read_table(path):
    lines = Path(path).read_text().splitlines()
    meta = [l for l in lines if l.startswith("#")]
    rows = list(csv.DictReader(l for l in lines if not l.startswith("#")))
    return meta, rows


def run_cli(*args):
    return main([str(a) for a in args])


# ------------------------------------------------------------------ threshold

def test_threshold_mapreduce_values():
    t = threshold_table([0.5, 1.0, 2.0], [Complexity.MAPREDUCE])
    # d = M for MapReduce: sqrt(d^2/4 + d) - d/2
    assert t.column("rho_th_mapreduce") == pytest.approx([0.5, 0.6180339887, 0.7320508076], abs=1e-9)


def test_threshold_ordering_and_zero_row():
    t = cmd_threshold(load_scenario(SCEN / "fig3_threshold.yaml", require_network=False))
    first = t.rows[0]
    assert first["M"] == 0.0 and first["rho_th_search"] == first["rho_th_classification"] == 0.0
    for r in t.rows:
        assert r["rho_th_search"] <= r["rho_th_mapreduce"] <= r["rho_th_classification"]
    for col in t.columns[1:]:
        vals = t.column(col)
        assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_threshold_cli_output(tmp_path):
    assert run_cli("threshold", "--config", SCEN / "fig3_threshold.yaml", "--out", tmp_path) == EXIT_OK
    meta, rows = read_table(tmp_path / "fig3_threshold_threshold.csv")
    assert meta[0].startswith("# tool: flowcompute ")
    assert any(m.startswith("# config_sha256: ") for m in meta)
    assert rows[0].keys() == {"M", "rho_th_search", "rho_th_mapreduce", "rho_th_classification"}


def test_threshold_rejects_wrong_sweep(tmp_path):
    assert run_cli("threshold", "--config", SCEN / "fig6_convex_k.yaml", "--out", tmp_path) == EXIT_CONFIG


# ------------------------------------------------------------------ mincost

def test_mincost_k_sweep_nondecreasing(tmp_path):
    assert run_cli("mincost", "--config", SCEN / "fig5_linear_k.yaml", "--out", tmp_path) == EXIT_OK
    _, rows = read_table(tmp_path / "fig5_linear_k_mincost.csv")
    obj = [float(r["objective"]) for r in rows]
    assert all(b >= a - 1e-6 for a, b in zip(obj, obj[1:]))
    assert all(float(r["normalized"]) <= 1 + 1e-6 for r in rows)
    assert all(r["converged"] == "true" for r in rows)


def test_mincost_convex_k10_above_bound(tmp_path):
    assert run_cli("mincost", "--config", SCEN / "fig7_convex_surjectivity_k10.yaml", "--out", tmp_path) == 0
    _, rows = read_table(tmp_path / "fig7_convex_surjectivity_k10_mincost.csv")
    for r in rows[1:-1]:
        for v in (0, 1):
            assert float(r[f"gamma_c1_{v}"]) > float(r[f"gamma_lb_c1_{v}"])


def test_mincost_custom_and_auto(tmp_path):
    assert run_cli("mincost", "--config", SCEN / "custom_grid.yaml", "--out", tmp_path) == EXIT_OK
    _, rows = read_table(tmp_path / "custom_grid_mincost.csv")
    assert json.loads(rows[0]["param"]) == {"k": 2.0, "surjectivity": 0.2}
    assert run_cli("mincost", "--config", SCEN / "auto_surjectivity.yaml", "--out", tmp_path) == EXIT_OK


def test_mincost_failed_rows_flagged(tmp_path):
    doc = (SCEN / "fig5_linear_k.yaml").read_text().replace("surjectivity: 0.3}", "surjectivity: 0.3, h_func: 1000.0}")
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(doc)
    assert run_cli("mincost", "--config", cfg, "--out", tmp_path) == EXIT_SOLVER
    _, rows = read_table(tmp_path / "fig5_linear_k_mincost.csv")
    assert len(rows) == 8 and all(r["status"] == "InfeasibleError" for r in rows)


def test_outputs_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run_cli("mincost", "--config", SCEN / "fig4_concave_k.yaml", "--out", d) == 0
        assert run_cli("simulate", "--config", SCEN / "sim_mm1.yaml", "--out", d,
                       "--replications", 2) == 0
    for name in ("fig4_concave_k_mincost.csv", "sim_mm1_sim.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


# ------------------------------------------------------------------ simulate

def test_simulate_baseline_passes(tmp_path):
    assert run_cli("simulate", "--config", SCEN / "sim_mm1.yaml", "--out", tmp_path, "--replications", 3) == 0
    meta, rows = read_table(tmp_path / "sim_mm1_sim.csv")
    assert rows[0]["littles_pass"] == "true"
    assert "# replications: 3" in meta


def test_simulate_overload_aborts(tmp_path, capsys):
    assert run_cli("simulate", "--config", SCEN / "sim_overload.yaml", "--out", tmp_path) == EXIT_SIM
    assert "diverged" in capsys.readouterr().err
    assert (tmp_path / "sim_overload_sim_partial.csv").exists()


def test_simulate_two_node_traffic(tmp_path):
    doc = (SCEN / "sim_two_node.yaml").read_text().replace("max_events: 1000000", "max_events: 200000")
    cfg = tmp_path / "two.yaml"
    cfg.write_text(doc)
    assert run_cli("simulate", "--config", cfg, "--out", tmp_path) == EXIT_OK
    _, rows = read_table(tmp_path / "sim_two_node_sim.csv")
    assert all(float(r["traffic_gap"]) < 0.05 for r in rows)


# ------------------------------------------------------------------ entropy, validate, errors

def test_entropy_command(tmp_path):
    assert run_cli("entropy", "--config", SCEN / "tables" / "xor.csv", "--out", tmp_path) == 0
    rec = json.loads((tmp_path / "xor_entropy.json").read_text())
    assert rec["value_bits"] == pytest.approx(1.0, abs=1e-9)
    assert run_cli("entropy", "--config", SCEN / "tables" / "xor.csv", "--target", 0, "--out", tmp_path) == 0
    assert json.loads((tmp_path / "xor_entropy.json").read_text())["target"] == "x1"


def test_validate(tmp_path, capsys):
    for f in sorted(SCEN.glob("*.yaml")):
        assert run_cli("validate", "--config", f) == EXIT_OK
    bad = tmp_path / "bad.yaml"
    bad.write_text((SCEN / "sim_mm1.yaml").read_text().replace("arrival_split: {c1: [1.0]}",
                                                              "arrival_split: {c1: [0.9]}"))
    assert run_cli("validate", "--config", bad) == EXIT_CONFIG
    assert "arrival split not stochastic" in capsys.readouterr().err


def test_config_error_has_location(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text((SCEN / "sim_mm1.yaml").read_text().replace("node_count: 1", "node_count: zero"))
    assert run_cli("validate", "--config", bad) == EXIT_CONFIG
    assert "bad.yaml:3:" in capsys.readouterr().err


def test_console_script(tmp_path):
    exe = shutil.which("flowcompute")
    if exe is None:
        pytest.skip("console script not installed")
    proc = subprocess.run([exe, "validate", "--config", str(SCEN / "sim_mm1.yaml")],
                          capture_output=True, text=True, env={"FLOWCOMPUTE_LOG_LEVEL": "DEBUG", "PATH": ""})
    assert proc.returncode == 0 and "ok" in proc.stdout
