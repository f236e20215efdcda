"""Experiment pipelines behind the command line: sweeps, simulation, tables."""

from __future__ import annotations

import dataclasses
import io
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .config import Scenario
from .errors import ConfigError, ConvergenceError, FlowComputeError, InfeasibleError
from .flowlaws import relaxed_threshold
from .graphentropy import read_function_table, surjectivity_from_table
from .mincost import CostModel, MinCostProblem, MinCostSolution, solve_mincost
from .model import Complexity, FlowAssignment, FunctionClass, NetworkSpec, validate_network
from .simqueue import SimConfig, SimReport, littles_law_audit, run

log = logging.getLogger(__name__)

THRESHOLD_FAMILIES = (Complexity.SEARCH, Complexity.MAPREDUCE, Complexity.CLASSIFICATION)


# ------------------------------------------------------------------ tables

@dataclass
class Table:
    columns: list[str]
    rows: list[dict]
    meta: dict

    def to_csv(self) -> str:
        buf = io.StringIO()
        for key, val in self.meta.items():
            buf.write(f"# {key}: {val}\n")
        buf.write(",".join(self.columns) + "\n")
        for row in self.rows:
            buf.write(",".join(_cell(row.get(c)) for c in self.columns) + "\n")
        return buf.getvalue()

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv())
        return path

    def column(self, name: str) -> list:
        return [r.get(name) for r in self.rows]


def _cell(x: Any) -> str:
    if x is None:
        return ""
    if isinstance(x, bool | np.bool_):
        return "true" if x else "false"
    if isinstance(x, float | np.floating):
        return repr(float(x))
    s = str(x)
    if any(ch in s for ch in ',"\n'):
        s = '"' + s.replace('"', '""') + '"'
    return s


def provenance(scenario: Scenario | None, command: str, **extra) -> dict:
    meta = {"tool": f"flowcompute {__version__}", "command": command}
    if scenario is not None:
        meta["scenario"] = scenario.name
        meta["config_sha256"] = scenario.digest
    meta.update(extra)
    return meta


# ------------------------------------------------------------------ scenario prep

def resolve_surjectivity(scenario: Scenario) -> NetworkSpec:
    """Fill every ``surjectivity: auto`` class from its function table."""
    spec = scenario.spec
    classes = []
    for fc in spec.classes:
        if fc.surjectivity is None:
            path = scenario.base_dir / fc.function_table
            table = read_function_table(path)
            g = surjectivity_from_table(table)
            log.info("class %s: surjectivity %.6g from %s", fc.id, g, path)
            fc = dataclasses.replace(fc, surjectivity=g)
        classes.append(fc)
    return spec.with_classes(classes)


def checked_spec(scenario: Scenario) -> NetworkSpec:
    """Resolve ``auto`` values and raise :class:`ConfigError` on any violation."""
    if scenario.spec is None:
        raise ConfigError(f"{scenario.source or '<string>'}: scenario has no network section")
    spec = resolve_surjectivity(scenario)
    problems = validate_network(spec)
    if problems:
        where = scenario.source or "<string>"
        raise ConfigError(f"{where}: invalid network:\n  " + "\n  ".join(map(str, problems)))
    return spec


def cost_models(scenario: Scenario) -> dict[str, CostModel]:
    raw = scenario.experiment.get("cost_model")
    if raw is None:
        return {}
    ids = scenario.spec.class_ids
    if isinstance(raw, str):
        raw = {cid: raw for cid in ids}
    try:
        return {str(cid): CostModel(str(m)) for cid, m in raw.items()}
    except (ValueError, AttributeError):
        raise ConfigError(f"{scenario.source}: experiment.cost_model: expected one of "
                          f"{[m.value for m in CostModel]} or a per-class mapping") from None


# ------------------------------------------------------------------ threshold

def threshold_table(grid: Sequence[float], families: Sequence[Complexity] = THRESHOLD_FAMILIES,
                    meta: dict | None = None) -> Table:
    """Relaxed load threshold against queue content for each complexity family."""
    cols = ["M"] + [f"rho_th_{f.value}" for f in families]
    rows = []
    for m in grid:
        row = {"M": float(m)}
        for fam in families:
            row[f"rho_th_{fam.value}"] = relaxed_threshold(FunctionClass("_", fam).d_f(float(m)))
        rows.append(row)
    return Table(cols, rows, meta or {})


def cmd_threshold(scenario: Scenario) -> Table:
    if scenario.sweep != "threshold_vs_M":
        raise ConfigError(f"{scenario.source}: experiment.sweep must be threshold_vs_M for this command")
    fams = scenario.experiment.get("families")
    try:
        fams = THRESHOLD_FAMILIES if fams is None else tuple(Complexity(f) for f in fams)
    except ValueError:
        raise ConfigError(f"{scenario.source}: experiment.families: unknown family in {fams}") from None
    if Complexity.CUSTOM in fams:
        raise ConfigError(f"{scenario.source}: experiment.families: custom has no closed form")
    return threshold_table(scenario.grid, fams, provenance(scenario, "threshold"))


# ------------------------------------------------------------------ mincost sweeps

def _sweep_points(scenario: Scenario, spec: NetworkSpec) -> list[tuple[Any, NetworkSpec]]:
    out = []
    for point in scenario.grid:
        if scenario.sweep == "mincost_vs_k":
            over = {"k": float(point)}
        elif scenario.sweep == "mincost_vs_surjectivity":
            over = {"surjectivity": float(point)}
        else:
            over = dict(point)
        bad = set(over) - {"k", "surjectivity", "h_func"}
        if bad:
            raise ConfigError(f"{scenario.source}: experiment.grid: cannot override {sorted(bad)}")
        label = point if scenario.sweep != "custom" else json.dumps(over, sort_keys=True)
        classes = [dataclasses.replace(fc, **over) for fc in spec.classes]
        out.append((label, spec.with_classes(classes)))
    return out


def mincost_row(label, sol: MinCostSolution | None, spec: NetworkSpec, error: str = "") -> dict:
    row: dict[str, Any] = {"param": label}
    ids, n = spec.class_ids, spec.node_count
    if sol is None:
        row.update(objective=math.nan, normalized=math.nan, converged=False,
                   iterations=0, stationarity=math.nan, status=error or "failed")
        return row
    row.update(objective=sol.objective, normalized=sol.normalized, converged=sol.converged,
               iterations=sol.iterations, stationarity=sol.max_stationarity,
               status="ok" if sol.converged else "not converged")
    for ci, cid in enumerate(ids):
        for v in range(n):
            row[f"gamma_{cid}_{v}"] = sol.assignment.gamma[ci, v]
            row[f"gamma_lb_{cid}_{v}"] = sol.gamma_lb[ci, v]
            row[f"lambda_{cid}_{v}"] = sol.assignment.lam[ci, v]
            row[f"active_{cid}_{v}"] = sol.active[ci][v] or "interior"
    return row


def mincost_columns(spec: NetworkSpec) -> list[str]:
    cols = ["param", "objective", "normalized", "converged", "iterations", "stationarity", "status"]
    for cid in spec.class_ids:
        for v in range(spec.node_count):
            cols += [f"gamma_{cid}_{v}", f"gamma_lb_{cid}_{v}", f"lambda_{cid}_{v}", f"active_{cid}_{v}"]
    return cols


def cmd_mincost(scenario: Scenario, tol: float = 1e-12, max_iter: int = 10_000) -> Table:
    """One row per grid point; failed or non-converged points are flagged in place."""
    if scenario.sweep not in ("mincost_vs_k", "mincost_vs_surjectivity", "custom"):
        raise ConfigError(f"{scenario.source}: experiment.sweep must be a mincost sweep, got {scenario.sweep!r}")
    spec = checked_spec(scenario)
    models = cost_models(scenario)
    floor = bool(scenario.experiment.get("entropy_floor", True))
    name = {"mincost_vs_k": "k", "mincost_vs_surjectivity": "surjectivity"}.get(scenario.sweep, "overrides")
    rows = []
    for label, point in _sweep_points(scenario, spec):
        try:
            sol = solve_mincost(MinCostProblem(point, models, floor), tol=tol, max_iter=max_iter, strict=False)
            rows.append(mincost_row(label, sol, point))
        except (InfeasibleError, ConvergenceError) as exc:
            log.warning("grid point %s failed: %s", label, exc)
            rows.append(mincost_row(label, None, point, error=type(exc).__name__))
    meta = provenance(scenario, "mincost", sweep=scenario.sweep, param=name, tol=tol)
    return Table(mincost_columns(spec), rows, meta)


# ------------------------------------------------------------------ simulation

def sim_policy(scenario: Scenario, spec: NetworkSpec, tol: float = 1e-12) -> FlowAssignment | None:
    """The processing policy under test: ``relay`` (default), ``mincost`` or ``floor``."""
    policy = scenario.simulation.get("policy", "relay")
    if policy == "relay":
        return None
    sol = solve_mincost(MinCostProblem(spec, cost_models(scenario)), tol=tol)
    if policy == "mincost":
        return sol.assignment
    if policy == "floor":
        a = sol.assignment
        lam = np.zeros_like(a.lam)
        gam = np.zeros_like(a.lam)
        for ci, fc in enumerate(spec.classes):
            gam[ci] = sol.gamma_lb[ci]
            lam[ci] = spec.external_arrivals()[ci] + spec.routing[ci].T @ gam[ci]
        z = np.zeros_like(lam)
        return FlowAssignment(lam, gam, a.mu, z, z, z)
    raise ConfigError(f"{scenario.source}: simulation.policy: expected relay, mincost or floor, got {policy!r}")


def sim_config(scenario: Scenario, spec: NetworkSpec, seed: int | None = None,
               replications: int | None = None, workers: int = 1, tol: float = 1e-12) -> SimConfig:
    s = scenario.simulation
    try:
        return SimConfig(
            spec=spec,
            assignment=sim_policy(scenario, spec, tol),
            horizon=None if s.get("horizon") is None else float(s["horizon"]),
            max_events=None if s.get("max_events") is None else int(float(s["max_events"])),
            warmup=float(s.get("warmup", 0.1)),
            seed=int(seed if seed is not None else s.get("seed", 0)),
            replications=int(replications if replications is not None else s.get("replications", 1)),
            service=str(s.get("service", "exponential")),
            queue_cap=int(float(s.get("queue_cap", 1e6))),
            trace_limit=int(s.get("trace_limit", 0)),
            workers=workers,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{scenario.source}: simulation: {exc}") from None


def report_table(report: SimReport, audit: np.ndarray | None, meta: dict) -> Table:
    rows = report.rows()
    for row, ok in zip(rows, audit.ravel() if audit is not None else [None] * len(rows)):
        row["littles_pass"] = None if ok is None else bool(ok)
    cols = ["class", "node", "lambda", "lambda_se", "gamma", "gamma_se", "L", "L_se", "W", "W_se",
            "p_dep", "littles_gap", "traffic_gap", "littles_pass"]
    return Table(cols, rows, meta)


@dataclass
class SimOutcome:
    report: SimReport
    audit: np.ndarray
    table: Table
    traffic_ok: bool

    @property
    def passed(self) -> bool:
        return bool(self.audit.all()) and self.traffic_ok


def cmd_simulate(scenario: Scenario, seed: int | None = None, replications: int | None = None,
                 audit_tol: float | None = None, workers: int = 1) -> SimOutcome:
    spec = checked_spec(scenario)
    config = sim_config(scenario, spec, seed, replications, workers)
    report = run(config)
    tol = float(audit_tol if audit_tol is not None else scenario.simulation.get("audit_tol", 0.05))
    traffic_tol = float(scenario.simulation.get("traffic_tol", 0.05))
    audit = littles_law_audit(report, tol)
    traffic_ok = bool(np.all(report.traffic_gap <= traffic_tol))
    meta = provenance(scenario, "simulate", seed=config.seed, replications=config.replications,
                      audit_tol=tol, traffic_tol=traffic_tol)
    return SimOutcome(report, audit, report_table(report, audit, meta), traffic_ok)
