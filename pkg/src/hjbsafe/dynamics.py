"""Input-affine plant models: xdot = f(x) + g(x) u.

Two benchmarks are provided, a double-integrator hovercraft and a rigid
spacecraft with three reaction wheels whose attitude is in Rodrigues
parameters. Each model also carries polynomial forms of its dynamics
restricted to the states the value function depends on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from hjbsafe.polyalgebra import Polynomial

DEFAULT_INERTIA = np.array(
    [
        [1.8140, -0.1185, 0.0275],
        [-0.1185, 1.7350, 0.0169],
        [0.0275, 0.0169, 3.4320],
    ]
)


@dataclass(frozen=True, eq=False)
class ControlAffineModel:
    name: str
    n: int
    m: int
    f_num: Callable[[np.ndarray], np.ndarray]
    g_num: Callable[[np.ndarray], np.ndarray]
    Q: np.ndarray
    R: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray
    offline_indices: tuple
    f_poly: tuple | None = None
    g_poly: tuple | None = None
    omega_box: tuple | None = None
    params: dict = field(default_factory=dict)
    state_names: tuple = ()

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        n_off = len(self.offline_indices)
        if Q.shape != (n_off, n_off):
            raise ValueError(f"Q has shape {Q.shape}, expected ({n_off}, {n_off})")
        if R.shape != (self.m, self.m):
            raise ValueError(f"R has shape {R.shape}, expected ({self.m}, {self.m})")
        if not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q).min() < -1e-12:
            raise ValueError("Q must be symmetric positive semidefinite")
        if not np.allclose(R, R.T):
            raise ValueError("R must be symmetric")
        try:
            np.linalg.cholesky(R)
        except np.linalg.LinAlgError:
            raise ValueError("R must be positive definite") from None
        u_min = np.broadcast_to(np.asarray(self.u_min, dtype=float), (self.m,)).copy()
        u_max = np.broadcast_to(np.asarray(self.u_max, dtype=float), (self.m,)).copy()
        if np.any(u_min >= u_max):
            raise ValueError("input bounds need u_min < u_max componentwise")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "u_min", u_min)
        object.__setattr__(self, "u_max", u_max)
        object.__setattr__(self, "offline_indices", tuple(int(i) for i in self.offline_indices))
        if self.omega_box is None:
            object.__setattr__(self, "omega_box", tuple((-1.0, 1.0) for _ in range(n_off)))

    @property
    def n_offline(self) -> int:
        return len(self.offline_indices)

    @property
    def has_polynomial_form(self) -> bool:
        return self.f_poly is not None and self.g_poly is not None

    @property
    def R_inv(self) -> np.ndarray:
        return np.linalg.inv(self.R)

    def offline_state(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float)[list(self.offline_indices)]

    def rhs(self, x, u) -> np.ndarray:
        return self.f_num(x) + self.g_num(x) @ np.asarray(u, dtype=float)

    def state_cost(self, x) -> float:
        z = self.offline_state(x)
        return float(z @ self.Q @ z)

    def stage_cost(self, x, u) -> float:
        u = np.asarray(u, dtype=float)
        return self.state_cost(x) + float(u @ self.R @ u)

    def state_cost_poly(self) -> Polynomial:
        k = self.n_offline
        z = [Polynomial.variable(k, i) for i in range(k)]
        q = Polynomial.zero(k)
        for i in range(k):
            for j in range(k):
                if self.Q[i, j]:
                    q = q + self.Q[i, j] * z[i] * z[j]
        return q


def skew(w) -> np.ndarray:
    """Cross-product matrix: skew(w) @ v == cross(w, v)."""
    w = np.asarray(w, dtype=float)
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def mrp_kinematics_matrix(sigma) -> np.ndarray:
    s = np.asarray(sigma, dtype=float)
    return 0.5 * (np.eye(3) + skew(s) + np.outer(s, s))


def hovercraft_model(v_max: float = 1.0, u_max: float = 1.0) -> ControlAffineModel:
    def f(x):
        return np.array([x[1], 0.0])

    def g(x):
        return np.array([[0.0], [1.0]])

    p, v = Polynomial.variable(2, 0), Polynomial.variable(2, 1)
    zero, one = Polynomial.zero(2), Polynomial.constant(2, 1.0)
    return ControlAffineModel(
        name="hovercraft",
        n=2,
        m=1,
        f_num=f,
        g_num=g,
        Q=np.eye(2),
        R=np.eye(1),
        u_min=-u_max,
        u_max=u_max,
        offline_indices=(0, 1),
        f_poly=(v, zero),
        g_poly=((zero,), (one,)),
        omega_box=((-1.0, 1.0), (-1.0, 1.0)),
        params={"v_max": v_max, "u_max": u_max},
        state_names=("p", "v"),
    )


def _kinematics_poly(nvars: int, sigma: Sequence[Polynomial], omega: Sequence[Polynomial]):
    """sigma_dot = 0.5 (I + [sigma]x + sigma sigma^T) omega, as polynomials."""
    s, w = sigma, omega
    cross = [s[1] * w[2] - s[2] * w[1], s[2] * w[0] - s[0] * w[2], s[0] * w[1] - s[1] * w[0]]
    s_dot_w = s[0] * w[0] + s[1] * w[1] + s[2] * w[2]
    return [(w[i] + cross[i] + s[i] * s_dot_w) * 0.5 for i in range(3)]


def spacecraft_model(J=None, u_max: float = 0.123, h_max: float = 0.4) -> ControlAffineModel:
    J = DEFAULT_INERTIA.copy() if J is None else np.asarray(J, dtype=float)
    if J.shape != (3, 3) or not np.allclose(J, J.T):
        raise ValueError("inertia must be a symmetric 3x3 matrix")
    if np.linalg.eigvalsh(J).min() <= 0:
        raise ValueError("inertia must be positive definite")
    J_inv = np.linalg.inv(J)

    def f(x):
        sigma, omega, h_w = x[0:3], x[3:6], x[6:9]
        return np.concatenate(
            [
                mrp_kinematics_matrix(sigma) @ omega,
                -J_inv @ np.cross(omega, J @ omega + h_w),
                np.zeros(3),
            ]
        )

    g_const = np.vstack([np.zeros((3, 3)), J_inv, -np.eye(3)])

    def g(x):
        return g_const

    # offline polynomial model over (sigma, omega) with h_w frozen at zero
    k = 6
    z = [Polynomial.variable(k, i) for i in range(k)]
    sigma, omega = z[:3], z[3:]
    J_omega = [sum((J[i, j] * omega[j] for j in range(3)), Polynomial.zero(k)) for i in range(3)]
    gyro = [
        omega[1] * J_omega[2] - omega[2] * J_omega[1],
        omega[2] * J_omega[0] - omega[0] * J_omega[2],
        omega[0] * J_omega[1] - omega[1] * J_omega[0],
    ]
    omega_dot = [sum((-J_inv[i, j] * gyro[j] for j in range(3)), Polynomial.zero(k)) for i in range(3)]
    f_poly = tuple(_kinematics_poly(k, sigma, omega) + omega_dot)
    g_poly = tuple(
        tuple(Polynomial.constant(k, g_const[row, col]) for col in range(3)) for row in range(6)
    )
    names = tuple(f"sigma{i+1}" for i in range(3)) + tuple(f"omega{i+1}" for i in range(3))
    names += tuple(f"hw{i+1}" for i in range(3))
    return ControlAffineModel(
        name="spacecraft",
        n=9,
        m=3,
        f_num=f,
        g_num=g,
        Q=np.eye(6),
        R=np.eye(3),
        u_min=-u_max,
        u_max=u_max,
        offline_indices=tuple(range(6)),
        f_poly=f_poly,
        g_poly=g_poly,
        omega_box=tuple((-1.0, 1.0) for _ in range(6)),
        params={"J": J, "J_inv": J_inv, "u_max": u_max, "h_max": h_max},
        state_names=names,
    )


def poly_drift(model: ControlAffineModel, z) -> np.ndarray:
    """Evaluate the offline polynomial drift at an offline state."""
    return np.array([p.evaluate(z) for p in model.f_poly])


def poly_input_matrix(model: ControlAffineModel, z) -> np.ndarray:
    return np.array([[p.evaluate(z) for p in row] for row in model.g_poly])
