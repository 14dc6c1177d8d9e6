"""Offline policy iteration with Galerkin policy evaluation.

Each evaluation step projects the generalized HJB residual of the current
policy onto a polynomial basis and solves the resulting linear system;
improvement sets u = -1/2 R^-1 g^T grad V. All integrals over the box Omega
are exact moments of polynomials.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import qmc

from hjbsafe.dynamics import ControlAffineModel
from hjbsafe.polyalgebra import Basis, Polynomial, box_moments

log = logging.getLogger(__name__)

COND_LIMIT = 1e12


class PolicyIterationError(RuntimeError):
    pass


class SingularGalerkinSystem(PolicyIterationError):
    def __init__(self, cond: float):
        super().__init__(
            f"Galerkin matrix is singular or ill-conditioned (cond ~ {cond:.3e}); "
            "the policy may be inadmissible or the basis deficient"
        )
        self.cond = cond


class ValueFunction:
    """V(z) = sum_i c_i m_i(z) over the offline state slice z = x[offline_indices]."""

    def __init__(self, basis: Basis, coeffs, offline_indices: Sequence[int]):
        coeffs = np.asarray(coeffs, dtype=float).ravel()
        if len(coeffs) != len(basis):
            raise ValueError(f"{len(coeffs)} coefficients for a basis of {len(basis)}")
        if len(offline_indices) != basis.nvars:
            raise ValueError("offline_indices length must equal basis.nvars")
        self.basis = basis
        self.coeffs = coeffs
        self.offline_indices = tuple(int(i) for i in offline_indices)
        self.poly = basis.combine(coeffs)
        self.grad_polys = self.poly.gradient()

    @property
    def nvars(self) -> int:
        return self.basis.nvars

    def value(self, z) -> float:
        return self.poly.evaluate(z)

    def gradient(self, z) -> np.ndarray:
        return self.poly.gradient_eval(z)

    def gradient_full(self, x) -> np.ndarray:
        """Gradient with respect to the full state, zero on non-offline states."""
        x = np.asarray(x, dtype=float)
        grad = np.zeros_like(x)
        grad[list(self.offline_indices)] = self.gradient(x[list(self.offline_indices)])
        return grad

    def integral(self, box=None) -> float:
        return self.poly.box_integral(box)

    def with_coeffs(self, coeffs) -> ValueFunction:
        return ValueFunction(self.basis, coeffs, self.offline_indices)

    def coefficient(self, exps) -> float:
        return float(self.coeffs[self.basis.index(exps)])

    # file format: '#'-prefixed header lines followed by the polynomial text

    def dumps(self) -> str:
        lines = [
            "# hjbsafe value function v1",
            f"# nvars: {self.nvars}",
            f"# offline_indices: {' '.join(map(str, self.offline_indices))}",
            "# basis: " + "; ".join(" ".join(map(str, m)) for m in self.basis.monomials),
        ]
        body = [f"{float(c)!r} * " + " ".join(f"x{i}^{k}" for i, k in enumerate(m) if k)
                for m, c in zip(self.basis.monomials, self.coeffs)]
        return "\n".join(lines + body) + "\n"

    @classmethod
    def loads(cls, text: str) -> ValueFunction:
        header = {}
        body = []
        for line in text.splitlines():
            if line.startswith("#"):
                key, sep, val = line[1:].partition(":")
                if sep:
                    header[key.strip()] = val.strip()
            elif line.strip():
                body.append(line)
        try:
            nvars = int(header["nvars"])
            offline = [int(t) for t in header["offline_indices"].split()]
            mons = [tuple(int(t) for t in chunk.split()) for chunk in header["basis"].split(";")]
        except KeyError as exc:
            raise ValueError(f"value-function file is missing header field {exc}") from None
        basis = Basis(nvars, tuple(mons))
        poly = Polynomial.from_text(nvars, "\n".join(body))
        extra = set(poly.terms) - set(basis.monomials)
        if extra:
            raise ValueError(f"value-function terms outside the declared basis: {sorted(extra)}")
        coeffs = [poly.coefficient(m) for m in basis.monomials]
        return cls(basis, coeffs, offline)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> ValueFunction:
        return cls.loads(Path(path).read_text())


@dataclass(frozen=True)
class PolynomialPolicy:
    components: tuple  # m polynomials over the offline variables

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if not self.components:
            raise ValueError("policy needs at least one component")

    @property
    def m(self) -> int:
        return len(self.components)

    def __call__(self, z) -> np.ndarray:
        return np.array([p.evaluate(z) for p in self.components])

    @classmethod
    def linear(cls, gain) -> PolynomialPolicy:
        """u = K z for a gain matrix K (m x n_offline)."""
        K = np.atleast_2d(np.asarray(gain, dtype=float))
        return cls(tuple(Polynomial.linear(row) for row in K))


@dataclass(frozen=True)
class PolicyIterationConfig:
    tol: float = 1e-9
    max_iter: int = 50
    admissibility_samples: int = 10_000

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class IterationLog:
    """Row 0 is the evaluation of the initial policy; deltas start at row 1."""

    deltas: list = field(default_factory=list)
    integrals: list = field(default_factory=list)
    conditions: list = field(default_factory=list)
    methods: list = field(default_factory=list)
    converged: bool = False
    monotone: bool = True

    @property
    def iterations(self) -> int:
        return len(self.deltas)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "max_delta", "integral_V", "cond", "method"])
            deltas = [float("nan")] + list(self.deltas)
            rows = zip(deltas, self.integrals, self.conditions, self.methods)
            for k, (d, s, c, meth) in enumerate(rows):
                w.writerow([k, repr(float(d)), repr(float(s)), repr(float(c)), meth])

    def phases(self) -> list:
        """Integral sequences split by evaluation method, in order."""
        out: list = []
        for meth, val in zip(self.methods, self.integrals):
            if not out or out[-1][0] != meth:
                out.append((meth, []))
            out[-1][1].append(val)
        return out


@dataclass(frozen=True)
class AdmissibilityReport:
    min_value: float
    argmin: np.ndarray
    samples: int
    tol: float = 1e-8

    @property
    def passed(self) -> bool:
        return self.min_value >= -self.tol


def _require_poly(model: ControlAffineModel) -> None:
    if not model.has_polynomial_form:
        raise PolicyIterationError(f"model {model.name!r} has no polynomial form")


def improve_policy(V: ValueFunction, model: ControlAffineModel) -> PolynomialPolicy:
    """u = -1/2 R^-1 g^T grad V, built symbolically."""
    _require_poly(model)
    k = V.nvars
    gtv = []
    for col in range(model.m):
        acc = Polynomial.zero(k)
        for row in range(k):
            g_rc = model.g_poly[row][col]
            if not g_rc.is_zero() and not V.grad_polys[row].is_zero():
                acc = acc + g_rc * V.grad_polys[row]
        gtv.append(acc)
    R_inv = model.R_inv
    comps = []
    for i in range(model.m):
        u_i = Polynomial.zero(k)
        for j in range(model.m):
            if R_inv[i, j]:
                u_i = u_i + gtv[j].scale(-0.5 * R_inv[i, j])
        comps.append(u_i)
    return PolynomialPolicy(tuple(comps))


def closed_loop_drift(model: ControlAffineModel, policy: PolynomialPolicy) -> list[Polynomial]:
    _require_poly(model)
    if policy.m != model.m:
        raise ValueError(f"policy has {policy.m} inputs, model has {model.m}")
    out = []
    for row in range(model.n_offline):
        acc = model.f_poly[row]
        for col in range(model.m):
            g_rc = model.g_poly[row][col]
            if not g_rc.is_zero():
                acc = acc + g_rc * policy.components[col]
        out.append(acc)
    return out


def running_cost_poly(model: ControlAffineModel, policy: PolynomialPolicy) -> Polynomial:
    cost = model.state_cost_poly()
    R = model.R
    for i in range(model.m):
        for j in range(model.m):
            if R[i, j]:
                cost = cost + R[i, j] * policy.components[i] * policy.components[j]
    return cost


def project(poly: Polynomial, basis: Basis, moments: np.ndarray) -> np.ndarray:
    """Vector of exact integrals of poly * m_j over the box, for every basis element."""
    if poly.is_zero():
        return np.zeros(len(basis))
    exps, coefs = poly._as_arrays()
    E = basis.exponent_matrix()
    idx = E[:, None, :] + exps[None, :, :]  # (N, T, n)
    vals = np.ones(idx.shape[:2])
    for d in range(basis.nvars):
        vals *= moments[d][idx[:, :, d]]
    return vals @ coefs


def _flow_polys(model: ControlAffineModel, policy: PolynomialPolicy, basis: Basis) -> list[Polynomial]:
    """grad m_i . (f + g u) for every basis element."""
    F = closed_loop_drift(model, policy)
    flows = []
    for m_i in basis.polynomials():
        acc = Polynomial.zero(basis.nvars)
        for k, dm in enumerate(m_i.gradient()):
            if not dm.is_zero() and not F[k].is_zero():
                acc = acc + dm * F[k]
        flows.append(acc)
    return flows


def galerkin_system(model: ControlAffineModel, policy: PolynomialPolicy, basis: Basis):
    """Assemble A c = b with A_ji = <grad m_i . F, m_j> and b_j = -<q + u'Ru, m_j>."""
    flows = _flow_polys(model, policy, basis)
    cost = running_cost_poly(model, policy)
    max_deg = max([p.degree for p in flows] + [cost.degree, 0]) + max(sum(m) for m in basis)
    moments = box_moments(basis.nvars, max_deg, model.omega_box)
    A = np.column_stack([project(p, basis, moments) for p in flows])
    b = -project(cost, basis, moments)
    return A, b


def _coefficient_matrix(polys: Sequence[Polynomial]):
    index: dict = {}
    for p in polys:
        for e in p.terms:
            index.setdefault(e, len(index))
    C = np.zeros((len(polys), len(index)))
    for i, p in enumerate(polys):
        for e, c in p.terms.items():
            C[i, index[e]] = c
    E = np.array(list(index.keys()), dtype=np.int64).reshape(len(index), -1)
    return C, E


def least_squares_system(model: ControlAffineModel, policy: PolynomialPolicy, basis: Basis):
    """Normal equations M c = r minimizing the integral of the squared GHJB residual."""
    flows = _flow_polys(model, policy, basis)
    cost = running_cost_poly(model, policy)
    C, E = _coefficient_matrix(flows + [cost])
    moments = box_moments(basis.nvars, 2 * int(E.sum(axis=1).max(initial=0)), model.omega_box)
    idx = E[:, None, :] + E[None, :, :]
    gram = np.ones(idx.shape[:2])
    for d in range(basis.nvars):
        gram *= moments[d][idx[:, :, d]]
    full = C @ gram @ C.T
    return full[:-1, :-1], -full[:-1, -1]


def evaluate_policy(model: ControlAffineModel, policy: PolynomialPolicy, basis: Basis,
                    method: str = "galerkin"):
    """Policy evaluation by Galerkin projection or residual least squares. Returns (V, cond)."""
    _require_poly(model)
    if method == "galerkin":
        A, b = galerkin_system(model, policy, basis)
    elif method == "least_squares":
        A, b = least_squares_system(model, policy, basis)
    else:
        raise ValueError(f"unknown evaluation method {method!r}")
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularGalerkinSystem(cond)
    coeffs = np.linalg.solve(A, b)
    return ValueFunction(basis, coeffs, model.offline_indices), cond


def galerkin_evaluate(model: ControlAffineModel, policy: PolynomialPolicy, basis: Basis,
                      return_condition: bool = False):
    V, cond = evaluate_policy(model, policy, basis, "galerkin")
    return (V, cond) if return_condition else V


def bellman_operator(model: ControlAffineModel, V: ValueFunction, policy: PolynomialPolicy, Z) -> np.ndarray:
    """L(V, u) = -grad V . (f + g u) - q - u'Ru at offline points Z (N x n_off)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    F = closed_loop_drift(model, policy)
    dV = np.column_stack([p.evaluate(Z) for p in V.grad_polys])
    Fz = np.column_stack([p.evaluate(Z) for p in F])
    U = np.column_stack([p.evaluate(Z) for p in policy.components])
    q = np.einsum("ni,ij,nj->n", Z, model.Q, Z)
    uRu = np.einsum("ni,ij,nj->n", U, model.R, U)
    return -np.sum(dV * Fz, axis=1) - q - uRu


def admissibility_check(model: ControlAffineModel, V: ValueFunction, policy: PolynomialPolicy,
                        samples: int = 10_000, seed: int = 0) -> AdmissibilityReport:
    """Minimum of the Bellman operator over scrambled Sobol points in Omega."""
    k = V.nvars
    sampler = qmc.Sobol(d=k, scramble=True, seed=seed)
    # draw a power-of-two block to keep Sobol balance, then use the leading points
    pts = sampler.random_base2(max(0, int(np.ceil(np.log2(samples)))))[:samples]
    lo = np.array([b[0] for b in model.omega_box])
    hi = np.array([b[1] for b in model.omega_box])
    Z = qmc.scale(pts, lo, hi)
    vals = bellman_operator(model, V, policy, Z)
    i = int(np.argmin(vals))
    return AdmissibilityReport(float(vals[i]), Z[i], samples)


def policy_iteration(model: ControlAffineModel, basis: Basis, u0: PolynomialPolicy,
                     cfg: PolicyIterationConfig | None = None, method: str = "galerkin",
                     switch_tol: float = 1e-3):
    """Alternate policy evaluation and improvement until the coefficients settle.

    method="hybrid" evaluates with residual least squares until the coefficient
    change drops below switch_tol, then finishes with Galerkin steps.
    Returns (V, IterationLog); raises PolicyIterationError when max_iter is hit.
    A rising integral of V within one evaluation method is warned about, not raised.
    """
    cfg = cfg or PolicyIterationConfig()
    if method not in ("galerkin", "least_squares", "hybrid"):
        raise ValueError(f"unknown method {method!r}")
    phase = "least_squares" if method == "hybrid" else method
    it_log = IterationLog()
    V, cond = evaluate_policy(model, u0, basis, phase)
    it_log.integrals.append(V.integral(model.omega_box))
    it_log.conditions.append(cond)
    it_log.methods.append(phase)
    for k in range(1, cfg.max_iter + 1):
        policy = improve_policy(V, model)
        V_next, cond = evaluate_policy(model, policy, basis, phase)
        integral = V_next.integral(model.omega_box)
        delta = float(np.max(np.abs(V_next.coeffs - V.coeffs)))
        if it_log.methods[-1] == phase and integral > it_log.integrals[-1] + 1e-9 * max(1.0, abs(integral)):
            it_log.monotone = False
            warnings.warn(
                f"integral of V rose at iteration {k} "
                f"({it_log.integrals[-1]:.12g} -> {integral:.12g}); policy may be inadmissible",
                RuntimeWarning,
                stacklevel=2,
            )
        it_log.deltas.append(delta)
        it_log.integrals.append(integral)
        it_log.conditions.append(cond)
        it_log.methods.append(phase)
        log.debug("iteration %d (%s): delta=%.3e integral=%.12g cond=%.3e",
                  k, phase, delta, integral, cond)
        V = V_next
        if phase == "least_squares" and method == "hybrid":
            if delta < switch_tol:
                phase = "galerkin"
        elif delta < cfg.tol:
            it_log.converged = True
            return V, it_log
    raise PolicyIterationError(f"policy iteration did not converge in {cfg.max_iter} iterations")
