"""Sampled-data closed-loop simulation.

The controller is queried at each sampling instant and its input is held
(zero-order hold) while the plant is advanced with fixed-step RK4 substeps.
Stage costs and barrier values are logged on the substep grid so that
intersample behaviour is visible to the audit.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid


class SimulationDiverged(RuntimeError):
    def __init__(self, message, log):
        super().__init__(message)
        self.log = log


@dataclass(frozen=True)
class SimulationConfig:
    dt_sample: float = 0.1
    substeps: int = 10
    horizon: float = 60.0
    stop_tol: float = 1e-8
    stop_samples: int = 10

    def __post_init__(self):
        if self.dt_sample <= 0:
            raise ValueError("dt_sample must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be at least 1")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")

    @property
    def n_samples(self) -> int:
        return int(round(self.horizon / self.dt_sample))


@dataclass
class TrajectoryLog:
    """Substep-resolution record. Row 0 is the initial state."""

    state_names: list
    input_names: list
    psi_names: list
    substeps: int
    dt_sample: float
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    inputs: list = field(default_factory=list)
    stage_costs: list = field(default_factory=list)
    psi: list = field(default_factory=list)
    infeasible: list = field(default_factory=list)
    solve_time: float = 0.0
    integrate_time: float = 0.0
    R: np.ndarray | None = None

    def append(self, t, x, u, cost, psi, flag):
        self.times.append(float(t))
        self.states.append(np.array(x, dtype=float))
        self.inputs.append(np.array(u, dtype=float))
        self.stage_costs.append(float(cost))
        self.psi.append(list(map(float, psi)))
        self.infeasible.append(bool(flag))

    def __len__(self) -> int:
        return len(self.times)

    @property
    def n_samples(self) -> int:
        return (len(self) - 1) // self.substeps if len(self) else 0

    def arrays(self):
        n_psi = len(self.psi_names)
        return (
            np.array(self.times),
            np.array(self.states).reshape(len(self), -1),
            np.array(self.inputs).reshape(len(self), -1),
            np.array(self.stage_costs),
            np.array(self.psi, dtype=float).reshape(len(self), n_psi),
        )

    @property
    def any_infeasible(self) -> bool:
        return any(self.infeasible)


def rk4_step(rhs, x, h):
    k1 = rhs(x)
    k2 = rhs(x + 0.5 * h * k1)
    k3 = rhs(x + 0.5 * h * k2)
    k4 = rhs(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def simulate(model, controller, x0, cfg: SimulationConfig | None = None) -> TrajectoryLog:
    cfg = cfg or SimulationConfig()
    x = np.asarray(x0, dtype=float).copy()
    if not np.all(np.isfinite(x)):
        raise ValueError(f"initial state is not finite: {x}")
    if hasattr(controller, "reset"):
        controller.reset()
    input_names = [f"u{i}" for i in range(model.m)]
    state_names = list(model.state_names) or [f"x{i}" for i in range(model.n)]
    log = TrajectoryLog(state_names, input_names, controller.psi_names(), cfg.substeps, cfg.dt_sample,
                        R=model.R)
    h = cfg.dt_sample / cfg.substeps
    quiet = 0
    t = 0.0
    for k in range(cfg.n_samples):
        u, report = controller.compute_control(x)
        log.solve_time += report.solve_time
        if k == 0:
            log.append(t, x, u, model.stage_cost(x, u), report.margins, report.infeasible)
        else:
            # the sample row was written with the previous input; record the new one
            log.inputs[-1] = np.array(u, dtype=float)
            log.stage_costs[-1] = model.stage_cost(x, u)
            log.infeasible[-1] = report.infeasible
        sample_cost = log.stage_costs[-1]
        t0 = time.perf_counter()

        def rhs(z, u=u):
            return model.rhs(z, u)

        for j in range(cfg.substeps):
            x = rk4_step(rhs, x, h)
            t = (k * cfg.substeps + j + 1) * h
            if not np.all(np.isfinite(x)):
                log.integrate_time += time.perf_counter() - t0
                raise SimulationDiverged(f"state became non-finite at t={t:.4f}", log)
            log.append(t, x, u, model.stage_cost(x, u), controller.margins(x), report.infeasible)
        log.integrate_time += time.perf_counter() - t0
        quiet = quiet + 1 if sample_cost < cfg.stop_tol else 0
        if quiet >= cfg.stop_samples:
            break
    return log


def accumulate_cost(log: TrajectoryLog, rule: str = "sample") -> float:
    """Running cost of a logged run.

    rule="sample": sum over sampling instants of dt * (q(x_k) + u_k'Ru_k).
    rule="trapezoid": trapezoidal quadrature over the substep grid.
    """
    if len(log) == 0:
        raise ValueError("empty trajectory log")
    costs = np.asarray(log.stage_costs)
    if rule == "sample":
        return float(log.dt_sample * np.sum(costs[: -1 : log.substeps])) if len(log) > 1 else 0.0
    if rule == "trapezoid":
        # u'Ru is constant on each hold interval; only q(x) needs quadrature
        U = np.array(log.inputs).reshape(len(log), -1)
        R = np.eye(U.shape[1]) if log.R is None else np.asarray(log.R)
        uRu = np.einsum("ni,ij,nj->n", U, R, U)
        q = costs - uRu
        held = uRu[: -1 : log.substeps]
        return float(trapezoid(q, np.asarray(log.times)) + log.dt_sample * held.sum())
    raise ValueError(f"unknown cost rule {rule!r}")


@dataclass(frozen=True)
class MarginReport:
    names: list
    minima: list
    argmin_rows: list
    tol: float = 1e-6

    @property
    def passed(self) -> bool:
        return all(m >= -self.tol for m in self.minima)

    def as_dict(self) -> dict:
        return {n: m for n, m in zip(self.names, self.minima)}


def constraint_audit(log: TrajectoryLog, tol: float = 1e-6) -> MarginReport:
    _, _, _, _, psi = log.arrays()
    if psi.shape[1] == 0:
        return MarginReport([], [], [], tol)
    return MarginReport(
        list(log.psi_names),
        [float(v) for v in psi.min(axis=0)],
        [int(i) for i in psi.argmin(axis=0)],
        tol,
    )


def csv_header(log: TrajectoryLog) -> list:
    return ["t", *log.state_names, *log.input_names, "stage_cost", *log.psi_names, "infeasible"]


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_csv(log: TrajectoryLog, path) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(csv_header(log))
            for i in range(len(log)):
                w.writerow(
                    [_fmt(log.times[i])]
                    + [_fmt(v) for v in log.states[i]]
                    + [_fmt(v) for v in log.inputs[i]]
                    + [_fmt(log.stage_costs[i])]
                    + [_fmt(v) for v in log.psi[i]]
                    + [str(int(log.infeasible[i]))]
                )
    except OSError as exc:
        raise OSError(f"could not write trajectory CSV {path}: {exc}") from exc


def read_csv(path, n_states: int, n_inputs: int, substeps: int = 1, dt_sample: float = 0.1,
             R=None) -> TrajectoryLog:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise OSError(f"could not read trajectory CSV {path}: {exc}") from exc
    if not rows:
        raise ValueError(f"{path}: empty file, expected a header row")
    header = rows[0]
    n_psi = len(header) - 1 - n_states - n_inputs - 2
    if n_psi < 0 or header[0] != "t" or header[-1] != "infeasible":
        raise ValueError(f"{path}: header does not match {n_states} states and {n_inputs} inputs")
    if header[1 + n_states + n_inputs] != "stage_cost":
        raise ValueError(f"{path}: expected 'stage_cost' column after inputs")
    log = TrajectoryLog(
        header[1 : 1 + n_states],
        header[1 + n_states : 1 + n_states + n_inputs],
        header[2 + n_states + n_inputs : -1],
        substeps,
        dt_sample,
        R=R,
    )
    for lineno, row in enumerate(rows[1:], 2):
        if len(row) != len(header):
            raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        vals = [float(v) for v in row[:-1]]
        log.append(
            vals[0],
            vals[1 : 1 + n_states],
            vals[1 + n_states : 1 + n_states + n_inputs],
            vals[1 + n_states + n_inputs],
            vals[2 + n_states + n_inputs :],
            row[-1] == "1",
        )
    return log
