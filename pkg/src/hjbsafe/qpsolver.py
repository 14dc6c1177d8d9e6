"""Dense strictly convex QPs: min 1/2 u'Hu + c'u  s.t.  G u <= h.

`solve_active_set` is a dual active-set method in the Goldfarb-Idnani style:
it starts at the unconstrained minimizer and adds the most violated row
until the primal is feasible, so no phase-one point is needed and an empty
feasible set is detected directly. `solve_enumeration_oracle` is an
exhaustive check used by the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

FEAS_TOL = 1e-9

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"


class NotPositiveDefinite(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class QuadraticProgram:
    H: np.ndarray
    c: np.ndarray
    G: np.ndarray = None
    h: np.ndarray = None

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        m = c.shape[0]
        if H.shape != (m, m):
            raise ValueError(f"H has shape {H.shape}, expected ({m}, {m})")
        if np.max(np.abs(H - H.T), initial=0.0) > 1e-12:
            raise ValueError("H must be symmetric")
        try:
            L = np.linalg.cholesky(H)
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite("H must be positive definite") from None
        G = np.zeros((0, m)) if self.G is None else np.asarray(self.G, dtype=float).reshape(-1, m)
        h = np.zeros(0) if self.h is None else np.atleast_1d(np.asarray(self.h, dtype=float))
        if h.shape != (G.shape[0],):
            raise ValueError(f"h has shape {h.shape}, expected ({G.shape[0]},)")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "_chol", L)

    @property
    def m(self) -> int:
        return self.c.shape[0]

    @property
    def k(self) -> int:
        return self.G.shape[0]

    def objective(self, u) -> float:
        u = np.asarray(u, dtype=float)
        return float(0.5 * u @ self.H @ u + self.c @ u)

    def h_inv(self, v) -> np.ndarray:
        L = self._chol
        return np.linalg.solve(L.T, np.linalg.solve(L, v))


@dataclass(frozen=True, eq=False)
class QPSolution:
    u_star: np.ndarray
    active_set: tuple
    objective: float
    status: str
    multipliers: np.ndarray = field(default=None)
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def kkt_residuals(qp: QuadraticProgram, sol: QPSolution) -> dict:
    """Stationarity, primal/dual feasibility and complementarity residuals."""
    u, lam = sol.u_star, sol.multipliers
    slack = qp.G @ u - qp.h
    return {
        "stationarity": float(np.max(np.abs(qp.H @ u + qp.c + qp.G.T @ lam), initial=0.0)),
        "primal": float(np.max(slack, initial=0.0)),
        "dual": float(-np.min(lam, initial=0.0)),
        "complementarity": float(np.max(np.abs(lam * slack), initial=0.0)),
    }


def _finish(qp, u, active, lam_active, status, iters):
    lam = np.zeros(qp.k)
    for j, val in zip(active, lam_active):
        lam[j] = val
    return QPSolution(
        u_star=u,
        active_set=tuple(sorted(int(j) for j in active)),
        objective=qp.objective(u),
        status=status,
        multipliers=lam,
        iterations=iters,
    )


def _polish(qp, u, active, lam):
    """Re-solve the equality-constrained KKT system on the final active set."""
    if not active:
        return u, lam
    Ga = qp.G[active]
    q = len(active)
    K = np.block([[qp.H, Ga.T], [Ga, np.zeros((q, q))]])
    try:
        sol = np.linalg.solve(K, np.concatenate([-qp.c, qp.h[active]]))
    except np.linalg.LinAlgError:
        return u, lam
    if not np.all(np.isfinite(sol)) or np.any(sol[qp.m:] < 0):
        return u, lam
    return sol[: qp.m], list(sol[qp.m:])


def solve_active_set(qp: QuadraticProgram, max_iter: int = 200, tol: float = FEAS_TOL) -> QPSolution:
    # internally constraints are n_j' u >= b_j with n_j = -G_j, b_j = -h_j
    N_all = -qp.G
    b_all = -qp.h
    u = -qp.h_inv(qp.c)
    active: list[int] = []
    lam: list[float] = []
    iters = 0
    while True:
        s = N_all @ u - b_all
        viol = np.where(s < -tol)[0]
        if viol.size == 0:
            u, lam = _polish(qp, u, active, lam)
            return _finish(qp, u, active, lam, OPTIMAL, iters)
        # most violated row enters; argmin returns the lowest index on ties
        p = int(viol[np.argmin(s[viol])])
        n_p = N_all[p]
        lam_p = 0.0
        while True:
            iters += 1
            if iters > max_iter:
                return _finish(qp, u, active, lam, MAX_ITER, iters)
            Hn = qp.h_inv(n_p)
            if active:
                N = N_all[active].T  # m x q
                HN = qp.h_inv(N)
                r = np.linalg.solve(N.T @ HN, N.T @ Hn)
                z = Hn - HN @ r
            else:
                r = np.zeros(0)
                z = Hn
            # partial step: largest dual step keeping active multipliers >= 0
            t1, drop = np.inf, None
            for idx in range(len(active)):
                if r[idx] > 0:
                    ratio = lam[idx] / r[idx]
                    if ratio < t1:
                        t1, drop = ratio, idx
            zn = float(z @ n_p)
            s_p = float(n_p @ u - b_all[p])
            t2 = -s_p / zn if zn > 1e-14 * max(1.0, float(n_p @ Hn)) else np.inf
            if not np.isfinite(t1) and not np.isfinite(t2):
                return _finish(qp, u, active, lam, INFEASIBLE, iters)
            t = min(t1, t2)
            if np.isfinite(t2):
                u = u + t * z
            lam = [lj - t * rj for lj, rj in zip(lam, r)]
            lam_p += t
            if t == t2:
                active.append(p)
                lam.append(lam_p)
                break
            del active[drop]
            del lam[drop]


def solve_enumeration_oracle(qp: QuadraticProgram, tol: float = FEAS_TOL) -> QPSolution:
    """Try every candidate active set; keep the primal- and dual-feasible one of least objective.

    Sets of more than m rows have a singular KKT matrix and are skipped, so only
    subsets of size <= m are formed.
    """
    if qp.k > 16:
        raise ValueError("enumeration oracle is limited to 16 constraints")
    best = None
    m = qp.m
    for size in range(min(m, qp.k) + 1):
        for S in combinations(range(qp.k), size):
            S = list(S)
            Gs = qp.G[S]
            K = np.block([[qp.H, Gs.T], [Gs, np.zeros((size, size))]])
            rhs = np.concatenate([-qp.c, qp.h[S]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            if np.linalg.cond(K) > 1e12:
                continue
            u, lam_s = sol[:m], sol[m:]
            if np.any(qp.G @ u - qp.h > tol * 10) or np.any(lam_s < -tol * 10):
                continue
            obj = qp.objective(u)
            if best is None or obj < best[0] - 1e-15:
                best = (obj, u, S, lam_s)
    if best is None:
        return QPSolution(np.full(m, np.nan), (), np.nan, INFEASIBLE, np.zeros(qp.k))
    _, u, S, lam_s = best
    active = [j for j, lj in zip(S, lam_s)]
    return _finish(qp, u, active, np.maximum(lam_s, 0.0), OPTIMAL, 0)
