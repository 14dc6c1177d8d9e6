"""Barrier specifications compiled to linear inequalities a'u >= b.

Three kinds are supported: integrator-state boxes (zero drift, relative
degree one), generic relative-degree-one CBFs, and relative-degree-two
HOCBFs. The spacecraft pointing-exclusion barrier is built here with
analytic derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from hjbsafe.dynamics import ControlAffineModel, mrp_kinematics_matrix, skew

DRIFT_TOL = 1e-12
DEGREE_TOL = 1e-12


class BarrierError(ValueError):
    pass


class RelativeDegreeError(BarrierError):
    pass


@dataclass(frozen=True)
class LinearUConstraint:
    """Encodes a @ u >= b."""

    a: np.ndarray
    b: float

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        if not np.all(np.isfinite(a)) or not np.isfinite(self.b):
            raise BarrierError(f"non-finite constraint data a={a}, b={self.b}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))

    def satisfied(self, u, tol: float = 0.0) -> bool:
        return float(self.a @ np.asarray(u, dtype=float)) >= self.b - tol


@dataclass(frozen=True)
class IntegratorBox:
    state_index: int
    lo: float
    hi: float
    alpha: float
    name: str = ""

    def __post_init__(self):
        if not self.lo < self.hi:
            raise BarrierError(f"box needs lo < hi, got [{self.lo}, {self.hi}]")
        if self.alpha <= 0:
            raise BarrierError("alpha must be positive")

    @property
    def label(self) -> str:
        return self.name or f"x{self.state_index}"

    def psi_names(self) -> list[str]:
        return [f"{self.label}_upper_psi0", f"{self.label}_lower_psi0"]

    def psi_values(self, x, model=None) -> list[float]:
        xi = float(x[self.state_index])
        return [self.hi - xi, xi - self.lo]


@dataclass(frozen=True)
class GenericR1:
    B: Callable
    grad_B: Callable
    alpha1: float
    name: str = "cbf"

    def __post_init__(self):
        if self.alpha1 <= 0:
            raise BarrierError("alpha1 must be positive")

    @property
    def label(self) -> str:
        return self.name

    def psi_names(self) -> list[str]:
        return [f"{self.label}_psi0"]

    def psi_values(self, x, model=None) -> list[float]:
        return [float(self.B(x))]


@dataclass(frozen=True)
class HocbfR2:
    """B(x) with flow derivatives L_f B, L_f^2 B and L_g L_f B supplied as callables."""

    B: Callable
    lf: Callable
    lf2: Callable
    lglf: Callable
    alpha1: float
    alpha2: float
    name: str = "hocbf"
    grad_B: Callable | None = None

    def __post_init__(self):
        if self.alpha1 <= 0 or self.alpha2 <= 0:
            raise BarrierError("alpha1 and alpha2 must be positive")

    @property
    def label(self) -> str:
        return self.name

    def psi_names(self) -> list[str]:
        return [f"{self.label}_psi0", f"{self.label}_psi1"]

    def psi_values(self, x, model=None) -> list[float]:
        B = float(self.B(x))
        return [B, float(self.lf(x)) + self.alpha1 * B]

    def psi2(self, x, u) -> float:
        """Closed-form psi_2(x, u), affine in u."""
        B, lf = float(self.B(x)), float(self.lf(x))
        return (float(self.lf2(x)) + float(self.lglf(x) @ np.asarray(u, dtype=float))
                + (self.alpha1 + self.alpha2) * lf + self.alpha1 * self.alpha2 * B)


BarrierSpec = IntegratorBox | GenericR1 | HocbfR2


def validate_integrator_box(spec: IntegratorBox, model: ControlAffineModel,
                            samples: int = 200, seed: int = 0, scale: float = 2.0) -> None:
    """Reject the box if the drift of its state is nonzero at random states."""
    if not 0 <= spec.state_index < model.n:
        raise BarrierError(f"state index {spec.state_index} out of range for n={model.n}")
    rng = np.random.default_rng(seed)
    for _ in range(samples):
        x = rng.uniform(-scale, scale, model.n)
        drift = model.f_num(x)[spec.state_index]
        if abs(drift) > DRIFT_TOL:
            raise BarrierError(
                f"state {spec.label} has nonzero drift {drift:.3e} at x={x}; "
                "integrator-box reformulation does not apply"
            )


def integrator_box_constraints(spec: IntegratorBox, x, model: ControlAffineModel):
    """Upper and lower constraints: -g_i'u >= -alpha (hi - x_i) and g_i'u >= -alpha (x_i - lo)."""
    x = np.asarray(x, dtype=float)
    i = spec.state_index
    drift = model.f_num(x)[i]
    if abs(drift) > DRIFT_TOL:
        raise BarrierError(f"state {spec.label} has nonzero drift {drift:.3e}")
    g_i = model.g_num(x)[i]
    if np.max(np.abs(g_i)) <= DEGREE_TOL:
        raise RelativeDegreeError(f"L_g B vanishes for state {spec.label}")
    upper = LinearUConstraint(-g_i, -spec.alpha * (spec.hi - x[i]))
    lower = LinearUConstraint(g_i, -spec.alpha * (x[i] - spec.lo))
    return upper, lower


def cbf_r1_constraint(spec: GenericR1, x, model: ControlAffineModel) -> LinearUConstraint:
    x = np.asarray(x, dtype=float)
    grad = np.asarray(spec.grad_B(x), dtype=float)
    lf = float(grad @ model.f_num(x))
    lg = grad @ model.g_num(x)
    if np.max(np.abs(lg)) <= DEGREE_TOL:
        raise RelativeDegreeError(f"L_g B vanishes at x={x} for barrier {spec.label}")
    return LinearUConstraint(lg, -spec.alpha1 * float(spec.B(x)) - lf)


def hocbf_r2_constraint(spec: HocbfR2, x, model: ControlAffineModel) -> LinearUConstraint:
    x = np.asarray(x, dtype=float)
    a = np.asarray(spec.lglf(x), dtype=float)
    if np.max(np.abs(a)) <= DEGREE_TOL:
        raise RelativeDegreeError(f"L_g L_f B vanishes at x={x} for barrier {spec.label}")
    B, lf, lf2 = float(spec.B(x)), float(spec.lf(x)), float(spec.lf2(x))
    b = -lf2 - (spec.alpha1 + spec.alpha2) * lf - spec.alpha1 * spec.alpha2 * B
    return LinearUConstraint(a, b)


def compile_constraints(spec, x, model: ControlAffineModel) -> list[LinearUConstraint]:
    if isinstance(spec, IntegratorBox):
        return list(integrator_box_constraints(spec, x, model))
    if isinstance(spec, GenericR1):
        return [cbf_r1_constraint(spec, x, model)]
    if isinstance(spec, HocbfR2):
        return [hocbf_r2_constraint(spec, x, model)]
    raise TypeError(f"unknown barrier spec {type(spec).__name__}")


def rotation_matrix(sigma) -> np.ndarray:
    """Inertial-to-body rotation from Rodrigues parameters."""
    s = np.asarray(sigma, dtype=float)
    s2 = float(s @ s)
    return ((1.0 - s2) * np.eye(3) + 2.0 * np.outer(s, s) - 2.0 * skew(s)) / (1.0 + s2)


class _PointingGeometry:
    """b' R(sigma) n = P(sigma) / (1 + |sigma|^2) with P quadratic in sigma."""

    def __init__(self, b, n):
        self.b = b
        self.n = n
        self.beta = float(b @ n)
        self.nxb = np.cross(n, b)
        self.hess_P = -2.0 * self.beta * np.eye(3) + 2.0 * (np.outer(b, n) + np.outer(n, b))

    def parts(self, s):
        b, n = self.b, self.n
        s2 = float(s @ s)
        d = 1.0 + s2
        P = (1.0 - s2) * self.beta + 2.0 * float(b @ s) * float(n @ s) - 2.0 * float(s @ self.nxb)
        dP = -2.0 * self.beta * s + 2.0 * (b * float(n @ s) + n * float(b @ s)) - 2.0 * self.nxb
        phi = P / d
        dd = 2.0 * s
        dphi = (dP - phi * dd) / d
        hphi = (self.hess_P - np.outer(dphi, dd) - np.outer(dd, dphi) - 2.0 * phi * np.eye(3)) / d
        return phi, dphi, hphi


def pointing_barrier(b_body, n_inertial, theta: float, J, alpha1: float = 1.0,
                     alpha2: float = 1.0, name: str = "pointing") -> HocbfR2:
    """Keep boresight b_body at least theta away from inertial direction n.

    B(sigma) = cos(theta) - b' R(sigma) n. The returned providers read
    sigma = x[0:3], omega = x[3:6], h_w = x[6:9].
    """
    b = np.asarray(b_body, dtype=float)
    n = np.asarray(n_inertial, dtype=float)
    if not 0.0 < theta < np.pi / 2:
        raise BarrierError("theta must lie in (0, pi/2)")
    if abs(np.linalg.norm(b) - 1.0) > 1e-9:
        raise BarrierError("boresight must be a unit vector")
    if np.linalg.norm(n) == 0.0:
        raise BarrierError("object direction must be nonzero")
    n = n / np.linalg.norm(n)
    J = np.asarray(J, dtype=float)
    J_inv = np.linalg.inv(J)
    geo = _PointingGeometry(b, n)
    cos_t = float(np.cos(theta))

    def B(x):
        return cos_t - geo.parts(np.asarray(x[0:3], dtype=float))[0]

    def grad_B(x):
        return -geo.parts(np.asarray(x[0:3], dtype=float))[1]

    def lf(x):
        s, w = x[0:3], x[3:6]
        return float(grad_B(x) @ mrp_kinematics_matrix(s) @ w)

    def lglf(x):
        return grad_B(x) @ mrp_kinematics_matrix(x[0:3]) @ J_inv

    def lf2(x):
        s, w, hw = (np.asarray(x[k:k + 3], dtype=float) for k in (0, 3, 6))
        _, dphi, hphi = geo.parts(s)
        G = mrp_kinematics_matrix(s)
        s_dot = G @ w
        G_dot = 0.5 * (skew(s_dot) + np.outer(s_dot, s) + np.outer(s, s_dot))
        w_dot = -J_inv @ np.cross(w, J @ w + hw)
        return float(-(s_dot @ hphi @ s_dot) - dphi @ (G_dot @ w) - dphi @ (G @ w_dot))

    spec = HocbfR2(B=B, lf=lf, lf2=lf2, lglf=lglf, alpha1=alpha1, alpha2=alpha2,
                   name=name, grad_B=grad_B)
    return spec
