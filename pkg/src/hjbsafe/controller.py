"""Online GHJB-CBF-QP controller.

At each state the QP minimizes grad V(x)' g(x) u + u'Ru subject to every
compiled barrier row and the input box. The value function only shapes the
objective; constraint rows depend on the barriers and the plant alone.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from hjbsafe.cbf import compile_constraints, validate_integrator_box, IntegratorBox
from hjbsafe.dynamics import ControlAffineModel
from hjbsafe.qpsolver import QuadraticProgram, QPSolution, solve_active_set
from hjbsafe.sga import ValueFunction


@dataclass
class StepReport:
    u: np.ndarray
    active_set: tuple
    status: str
    infeasible: bool
    margins: list
    solve_time: float
    objective: float = float("nan")


@dataclass
class GhjbCbfController:
    value_function: ValueFunction
    model: ControlAffineModel
    barriers: list = field(default_factory=list)
    last_u: np.ndarray | None = None

    def __post_init__(self):
        if self.value_function.offline_indices != self.model.offline_indices:
            raise ValueError(
                f"value function reads states {self.value_function.offline_indices}, "
                f"model expects {self.model.offline_indices}"
            )
        for spec in self.barriers:
            if isinstance(spec, IntegratorBox):
                validate_integrator_box(spec, self.model)
        self.barriers = list(self.barriers)

    def reset(self) -> None:
        self.last_u = None

    def objective_linear_term(self, x) -> np.ndarray:
        """c = g(x)' grad V(x), with grad V zero-padded to the full state."""
        x = np.asarray(x, dtype=float)
        return self.model.g_num(x).T @ self.value_function.gradient_full(x)

    def constraint_rows(self, x):
        """Stacked G u <= h: input box first, then each barrier's rows in order."""
        m = self.model.m
        G = [np.eye(m), -np.eye(m)]
        h = [self.model.u_max, -self.model.u_min]
        for spec in self.barriers:
            for con in compile_constraints(spec, x, self.model):
                G.append(-con.a[None, :])
                h.append(np.array([-con.b]))
        return np.vstack(G), np.concatenate(h)

    def build_qp(self, x) -> QuadraticProgram:
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ValueError(f"non-finite state {x}")
        G, h = self.constraint_rows(x)
        return QuadraticProgram(2.0 * self.model.R, self.objective_linear_term(x), G, h)

    def unconstrained_control(self, x) -> np.ndarray:
        return -0.5 * self.model.R_inv @ self.objective_linear_term(x)

    def margins(self, x) -> list:
        return [v for spec in self.barriers for v in spec.psi_values(x, self.model)]

    def psi_names(self) -> list:
        return [name for spec in self.barriers for name in spec.psi_names()]

    def compute_control(self, x):
        """Solve the QP at x; on infeasibility hold the last input and flag the step."""
        qp = self.build_qp(x)
        t0 = time.perf_counter()
        sol: QPSolution = solve_active_set(qp)
        elapsed = time.perf_counter() - t0
        if sol.optimal:
            u = sol.u_star
            self.last_u = u.copy()
        else:
            u = np.zeros(self.model.m) if self.last_u is None else self.last_u.copy()
        report = StepReport(
            u=u,
            active_set=sol.active_set,
            status=sol.status,
            infeasible=not sol.optimal,
            margins=self.margins(x),
            solve_time=elapsed,
            objective=sol.objective,
        )
        return u, report


@dataclass
class UnconstrainedController:
    """Offline policy u = -1/2 R^-1 g' grad V with no barriers and no input box."""

    value_function: ValueFunction
    model: ControlAffineModel

    def reset(self) -> None:
        pass

    def compute_control(self, x):
        x = np.asarray(x, dtype=float)
        grad = self.value_function.gradient_full(x)
        u = -0.5 * self.model.R_inv @ (self.model.g_num(x).T @ grad)
        return u, StepReport(u=u, active_set=(), status="optimal", infeasible=False,
                             margins=[], solve_time=0.0)

    def margins(self, x) -> list:
        return []

    def psi_names(self) -> list:
        return []
