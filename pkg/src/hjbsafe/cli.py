"""Command-line entry point: hjbsafe {fit-value,simulate,sweep-alpha,audit,echo-params}.

Exit codes: 0 success, 1 a run finished but failed its checks, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from hjbsafe.cbf import IntegratorBox
from hjbsafe.controller import GhjbCbfController
from hjbsafe.scenario import Scenario, ScenarioError, load_scenario, read_document
from hjbsafe.sga import (
    PolicyIterationError,
    ValueFunction,
    admissibility_check,
    improve_policy,
    policy_iteration,
)
from hjbsafe.sim import (
    SimulationDiverged,
    accumulate_cost,
    constraint_audit,
    read_csv,
    simulate,
    write_csv,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
MARGIN_TOL = 1e-6
CROSSCHECK_TOL = 1e-9

RESULTS_HEADER = ["scenario", "alpha", "cost", "solve_time_s", "integrate_time_s",
                  "min_margin", "infeasible_steps"]


class UsageError(Exception):
    pass


def _out(args, scen: Scenario, key: str) -> Path:
    return Path(args.out_dir) / scen.outputs[key]


def _linear_part(model):
    """Jacobians of the offline polynomial drift and input matrix at the origin."""
    k = model.n_offline
    z0 = np.zeros(k)
    A = np.array([[p.partial(j).evaluate(z0) for j in range(k)] for p in model.f_poly])
    B = np.array([[p.evaluate(z0) for p in row] for row in model.g_poly])
    return A, B


def check_initial_policy(scen: Scenario) -> float:
    """Largest real part of the linearized closed loop under u0; must be negative."""
    A, B = _linear_part(scen.model)
    K = np.array([[p.partial(j).evaluate(np.zeros(A.shape[0])) for j in range(A.shape[0])]
                  for p in scen.u0.components])
    return float(np.max(np.linalg.eigvals(A + B @ K).real))


def cmd_fit_value(scen: Scenario, args) -> int:
    if not scen.model.has_polynomial_form:
        raise UsageError(f"model {scen.model.name!r} has no polynomial form")
    worst = check_initial_policy(scen)
    if worst >= 0:
        print(f"{scen.name}: initial policy is not stabilizing (closed-loop eigenvalue real part {worst:.4g})")
        return EXIT_FAIL
    t0 = time.perf_counter()
    try:
        V, it_log = policy_iteration(scen.model, scen.basis, scen.u0, scen.pi_config,
                                     method=scen.pi_method, switch_tol=scen.switch_tol)
    except PolicyIterationError as exc:
        print(f"{scen.name}: {exc}")
        return EXIT_FAIL
    elapsed = time.perf_counter() - t0
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    vf_path = Path(args.value_fn) if args.value_fn else _out(args, scen, "value_fn")
    V.save(vf_path)
    if "iteration_log" in scen.outputs:
        it_log.write_csv(_out(args, scen, "iteration_log"))
    policy_report = admissibility_check(scen.model, V, improve_policy(V, scen.model),
                                        scen.pi_config.admissibility_samples, seed=args.seed)
    print(f"{scen.name}: wrote {vf_path} ({len(scen.basis)} coefficients)")
    print(f"  iterations {it_log.iterations}, integral of V {it_log.integrals[-1]:.10g}, "
          f"time {elapsed:.3f} s")
    print(f"  min Bellman operator over {policy_report.samples} samples: {policy_report.min_value:.4g}")
    return EXIT_OK


def _load_value_function(scen: Scenario, args) -> ValueFunction:
    path = Path(args.value_fn) if args.value_fn else _out(args, scen, "value_fn")
    if not path.is_file():
        raise UsageError(f"value-function file not found: {path}")
    try:
        V = ValueFunction.load(path)
    except (ValueError, IndexError) as exc:
        raise UsageError(f"could not parse value-function file {path}: {exc}") from exc
    if V.nvars != scen.model.n_offline or tuple(V.offline_indices) != scen.model.offline_indices:
        raise UsageError(
            f"value function {path} has {V.nvars} variables on states {V.offline_indices}; "
            f"model {scen.model.name!r} expects {scen.model.n_offline} on {scen.model.offline_indices}"
        )
    return V


def run_closed_loop(scen: Scenario, V: ValueFunction):
    """Simulate one scenario and summarize it. Returns (log, summary)."""
    ctrl = GhjbCbfController(V, scen.model, list(scen.barriers))
    diverged = False
    try:
        log = simulate(scen.model, ctrl, scen.x0, scen.sim_config)
    except SimulationDiverged as exc:
        log, diverged = exc.log, True
    cost = accumulate_cost(log, scen.cost_rule) if not diverged else float("inf")
    audit = constraint_audit(log, MARGIN_TOL)
    infeasible_steps = sum(log.infeasible[: -1 : log.substeps]) if len(log) > 1 else 0
    summary = {
        "scenario": scen.name,
        "cost": cost,
        "cost_rule": scen.cost_rule,
        "samples": log.n_samples,
        "rows": len(log),
        "diverged": diverged,
        "infeasible_steps": int(infeasible_steps),
        "min_margins": audit.as_dict(),
        "min_margin_rows": dict(zip(audit.names, audit.argmin_rows)),
        "final_state": [float(v) for v in log.states[-1]],
    }
    if "cost_band" in scen.reference:
        lo, hi = scen.reference["cost_band"]
        summary["cost_band"] = [lo, hi]
        summary["within_band"] = bool(lo <= cost <= hi)
    summary["passed"] = bool(not diverged and infeasible_steps == 0 and audit.passed)
    return log, summary


def _append_results(path: Path, row: list) -> None:
    new = not path.exists()
    with path.open("a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(RESULTS_HEADER)
        w.writerow(row)


def _min_margin(summary) -> float:
    vals = list(summary["min_margins"].values())
    return min(vals) if vals else float("nan")


def _alpha_of(scen: Scenario):
    alphas = sorted({b.alpha for b in scen.barriers if isinstance(b, IntegratorBox)})
    return alphas[0] if len(alphas) == 1 else ""


def cmd_simulate(scen: Scenario, args) -> int:
    V = _load_value_function(scen, args)
    log, summary = run_closed_loop(scen, V)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(log, _out(args, scen, "trajectory"))
    _out(args, scen, "summary").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if "results_table" in scen.outputs:
        _append_results(_out(args, scen, "results_table"), [
            scen.name, _alpha_of(scen), repr(summary["cost"]), f"{log.solve_time:.6f}",
            f"{log.integrate_time:.6f}", repr(_min_margin(summary)), summary["infeasible_steps"],
        ])
    print(f"{scen.name}: cost J = {summary['cost']:.10g} ({scen.cost_rule} rule), "
          f"solve time {log.solve_time:.4f} s, integration time {log.integrate_time:.4f} s")
    for name, val in summary["min_margins"].items():
        print(f"  min {name} = {val:.6g}")
    if summary["infeasible_steps"]:
        print(f"  {summary['infeasible_steps']} infeasible QP steps")
    if summary["diverged"]:
        print("  simulation diverged")
    return EXIT_OK if summary["passed"] else EXIT_FAIL


def cmd_sweep_alpha(scen: Scenario, args) -> int:
    if not scen.has_integrator_box:
        raise UsageError(f"scenario {scen.name!r} has no integrator-box barrier to sweep")
    alphas = [float(a) for a in args.alphas] if args.alphas else list(scen.alphas)
    if not alphas:
        raise UsageError("no alpha values given (use --alphas or a sweep section)")
    V = _load_value_function(scen, args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    status = EXIT_OK
    for alpha in alphas:
        log, summary = run_closed_loop(scen.with_alpha(alpha), V)
        rows.append([alpha, summary["cost"], _min_margin(summary), summary["infeasible_steps"]])
        if not summary["passed"]:
            status = EXIT_FAIL
    table = out / f"{scen.name}_alpha_sweep.csv"
    with table.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha", "cost", "min_margin", "infeasible_steps"])
        for a, c, mm, inf in rows:
            w.writerow([repr(a), repr(c), repr(mm), inf])
    print(f"{scen.name}: alpha sweep -> {table}")
    print(f"  {'alpha':>8} {'cost':>16} {'min margin':>14} {'infeasible':>10}")
    for a, c, mm, inf in rows:
        print(f"  {a:8.4g} {c:16.10g} {mm:14.6g} {inf:10d}")
    return status


def audit_trajectory(scen: Scenario, csv_path) -> dict:
    """Recompute barrier values from logged states and compare with the logged ones."""
    cfg = scen.sim_config
    try:
        log = read_csv(csv_path, scen.model.n, scen.model.m, cfg.substeps, cfg.dt_sample, scen.model.R)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    names = [n for spec in scen.barriers for n in spec.psi_names()]
    if list(log.psi_names) != names:
        raise UsageError(f"{csv_path}: barrier columns {log.psi_names} do not match scenario {names}")
    _, X, _, _, logged = log.arrays()
    recomputed = np.array(
        [[v for spec in scen.barriers for v in spec.psi_values(x, scen.model)] for x in X]
    ).reshape(len(X), len(names))
    mismatch = np.abs(recomputed - logged) > CROSSCHECK_TOL * np.maximum(1.0, np.abs(logged))
    report = {"rows": len(X), "names": names, "minima": {}, "argmin": {}, "mismatch_rows": {}, "violations": {}}
    for j, name in enumerate(names):
        col = recomputed[:, j]
        i = int(np.argmin(col))
        report["minima"][name] = float(col[i])
        report["argmin"][name] = i
        bad = np.where(col < -MARGIN_TOL)[0]
        if bad.size:
            report["violations"][name] = [int(r) for r in bad]
        mm = np.where(mismatch[:, j])[0]
        if mm.size:
            report["mismatch_rows"][name] = [int(r) for r in mm]
    report["passed"] = not report["violations"] and not report["mismatch_rows"]
    return report


def cmd_audit(scen: Scenario, args) -> int:
    csv_path = Path(args.trajectory) if args.trajectory else _out(args, scen, "trajectory")
    if not csv_path.is_file():
        raise UsageError(f"trajectory file not found: {csv_path}")
    rep = audit_trajectory(scen, csv_path)
    print(f"{scen.name}: audited {rep['rows']} rows of {csv_path}")
    for name in rep["names"]:
        print(f"  min {name} = {rep['minima'][name]:.6g} at row {rep['argmin'][name]}")
    for name, rows in rep["violations"].items():
        print(f"  VIOLATION {name} < -{MARGIN_TOL:g} at rows {_row_list(rows)}")
    for name, rows in rep["mismatch_rows"].items():
        print(f"  MISMATCH logged {name} differs from recomputed value at rows {_row_list(rows)}")
    print("  audit " + ("passed" if rep["passed"] else "failed"))
    return EXIT_OK if rep["passed"] else EXIT_FAIL


def _row_list(rows, limit=10) -> str:
    head = ", ".join(str(r) for r in rows[:limit])
    return head + (f" ... ({len(rows)} rows)" if len(rows) > limit else "")


def _flatten(prefix, obj, out):
    if isinstance(obj, dict):
        for k, v in obj.items():
            _flatten(f"{prefix}.{k}" if prefix else str(k), v, out)
    elif isinstance(obj, list) and obj and all(isinstance(v, dict) for v in obj):
        for i, v in enumerate(obj):
            _flatten(f"{prefix}[{i}]", v, out)
    else:
        out.append((prefix, obj))


def cmd_echo_params(scen: Scenario, args) -> int:
    pairs: list = []
    _flatten("", scen.doc, pairs)
    for key, val in pairs:
        print(f"{key} = {json.dumps(val)}")
    m = scen.model
    print(f"derived.Q = {json.dumps(m.Q.tolist())}")
    print(f"derived.R = {json.dumps(m.R.tolist())}")
    print(f"derived.basis_size = {len(scen.basis)}")
    print(f"derived.omega_box = {json.dumps([list(b) for b in m.omega_box])}")
    return EXIT_OK


COMMANDS = {
    "fit-value": cmd_fit_value,
    "simulate": cmd_simulate,
    "sweep-alpha": cmd_sweep_alpha,
    "audit": cmd_audit,
    "echo-params": cmd_echo_params,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hjbsafe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", action="append", required=True,
                       help="scenario YAML path or bundled name; repeat for a batch")
        p.add_argument("--value-fn", help="value-function file (default: out-dir/<outputs.value_fn>)")
        p.add_argument("--out-dir", default=".", help="directory for all outputs")
        p.add_argument("--seed", type=int, default=0, help="seed for randomized checks")
        p.add_argument("--jobs", type=int, default=1, help="run batch scenarios in parallel")
        if name == "sweep-alpha":
            p.add_argument("--alphas", nargs="+", type=float, help="alpha values to sweep")
        if name == "audit":
            p.add_argument("--trajectory", help="trajectory CSV (default: out-dir/<outputs.trajectory>)")
    return parser


def _run_one(command: str, source: str, args) -> tuple[int, str]:
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        try:
            scen = load_scenario(source)
            code = COMMANDS[command](scen, args)
        except (ScenarioError, UsageError, FileNotFoundError) as exc:
            print(f"error: {exc}")
            code = EXIT_USAGE
    return code, buf.getvalue()


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    sources = args.config
    if len(sources) > 1:
        if args.value_fn:
            parser.error("--value-fn cannot be combined with several --config values")
        base = args.out_dir
        jobs = []
        for src in sources:
            try:
                name = read_document(src)[0].get("name", Path(src).stem)
            except (ScenarioError, FileNotFoundError):
                name = Path(src).stem
            sub_args = argparse.Namespace(**{**vars(args), "out_dir": str(Path(base) / str(name))})
            jobs.append((args.command, src, sub_args))
    else:
        jobs = [(args.command, sources[0], args)]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, *zip(*jobs)))
    else:
        results = [_run_one(*job) for job in jobs]
    for code, text in results:
        sys.stdout.write(text)
    return max(code for code, _ in results)


if __name__ == "__main__":
    sys.exit(main())
