"""``flowcompute`` command line.

Exit codes: 0 success with all audits passing, 1 unexpected library error,
2 configuration error, 3 solver failure or non-converged grid point,
4 simulation divergence or failed audit.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .config import load_scenario
from .errors import (ConfigError, ConvergenceError, FlowComputeError, InfeasibleError,
                     InstabilityError, SimulationDiverged)
from .experiments import (checked_spec, cmd_mincost, cmd_simulate, cmd_threshold, provenance,
                          report_table)
from .graphentropy import graph_entropy, read_function_table, write_entropy_record
from .simqueue import littles_law_audit, write_trace

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_SOLVER, EXIT_SIM = 0, 1, 2, 3, 4
LOG_ENV = "FLOWCOMPUTE_LOG_LEVEL"

log = logging.getLogger("flowcompute")


def _out_dir(args, scenario=None) -> Path:
    if args.out:
        return Path(args.out)
    if scenario is not None and scenario.out_dir:
        return scenario.base_dir / scenario.out_dir
    return Path("out")


def _threshold(args) -> int:
    sc = load_scenario(args.config, require_network=False)
    table = cmd_threshold(sc)
    path = table.write(_out_dir(args, sc) / f"{sc.name}_threshold.csv")
    print(f"wrote {path} ({len(table.rows)} rows)")
    return EXIT_OK


def _mincost(args) -> int:
    sc = load_scenario(args.config)
    table = cmd_mincost(sc, tol=args.tol if args.tol is not None else 1e-12)
    path = table.write(_out_dir(args, sc) / f"{sc.name}_mincost.csv")
    bad = [r["param"] for r in table.rows if not r["converged"]]
    print(f"wrote {path} ({len(table.rows)} rows)")
    if bad:
        print(f"not converged at grid points: {bad}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _simulate(args) -> int:
    sc = load_scenario(args.config)
    out = _out_dir(args, sc)
    try:
        outcome = cmd_simulate(sc, seed=args.seed, replications=args.replications,
                               audit_tol=args.tol, workers=args.workers)
    except SimulationDiverged as exc:
        print(f"simulation diverged: {exc}", file=sys.stderr)
        if exc.partial_report is not None:
            rep = exc.partial_report
            meta = provenance(sc, "simulate", status="diverged (partial)")
            path = report_table(rep, littles_law_audit(rep, 0.05), meta).write(out / f"{sc.name}_sim_partial.csv")
            print(f"partial report in {path}", file=sys.stderr)
        return EXIT_SIM
    path = outcome.table.write(out / f"{sc.name}_sim.csv")
    if any(rep.trace for rep in outcome.report.replications):
        write_trace(outcome.report, out / f"{sc.name}_trace.jsonl")
    print(f"wrote {path}")
    for row in outcome.table.rows:
        verdict = "pass" if row["littles_pass"] else "FAIL"
        print(f"  class {row['class']} node {row['node']}: L={row['L']:.4f} W={row['W']:.4f} "
              f"littles_gap={row['littles_gap']:.2e} traffic_gap={row['traffic_gap']:.2e} {verdict}")
    if not outcome.passed:
        print("audit failed", file=sys.stderr)
        return EXIT_SIM
    return EXIT_OK


def _entropy(args) -> int:
    table = read_function_table(args.config)
    target = None if args.target is None or args.target == "all" else int(args.target)
    g = table.graph(target)
    res = graph_entropy(g, tol=args.tol if args.tol is not None else 1e-9)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{Path(args.config).stem}_entropy.json"
    write_entropy_record(res, path, source=str(args.config), variables=table.variables,
                         target="all" if target is None else table.variables[target],
                         tool=f"flowcompute {__version__}")
    print(f"graph entropy {res.value:.9f} bits (gap {res.gap:.2e}); wrote {path}")
    return EXIT_OK


def _validate(args) -> int:
    sc = load_scenario(args.config, require_network=False)
    if sc.spec is not None:
        checked_spec(sc)
    print(f"{args.config}: ok")
    return EXIT_OK


COMMANDS = {"threshold": _threshold, "mincost": _mincost, "simulate": _simulate,
            "entropy": _entropy, "validate": _validate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flowcompute", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"flowcompute {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "threshold": "load threshold against queue content per complexity family",
        "mincost": "MinCost sweep over k, surjectivity or a custom grid",
        "simulate": "discrete-event simulation with Little's-law audit",
        "entropy": "graph entropy of a CSV function table",
        "validate": "check a scenario file without running it",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", required=True,
                        help="scenario YAML (CSV function table for 'entropy')")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="RNG seed (simulate)")
        sp.add_argument("--tol", type=float, help="solver tolerance, or audit tolerance for simulate")
        sp.add_argument("--replications", type=int, help="simulation replications")
        if name == "simulate":
            sp.add_argument("--workers", type=int, default=1, help="parallel replication processes")
        if name == "entropy":
            sp.add_argument("--target", help="variable index for a characteristic graph, or 'all'")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, InfeasibleError, InstabilityError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except SimulationDiverged as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIM
    except FlowComputeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
