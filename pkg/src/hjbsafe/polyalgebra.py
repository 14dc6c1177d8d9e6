"""Sparse multivariate polynomials with real coefficients.

Polynomials are immutable maps from exponent tuples to floats. Differentiation
and integration over axis-aligned boxes are exact; arithmetic is in double
precision with tiny cancellation residue pruned.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Iterable, Mapping, Sequence

import numpy as np

PRUNE_TOL = 1e-14

Monomial = tuple  # tuple[int, ...] of non-negative exponents


def grlex_key(exps: Sequence[int]) -> tuple:
    """Sort key for graded lexicographic order (x0 dominant within a degree)."""
    return (sum(exps), tuple(-e for e in exps))


def _prune(terms: dict) -> dict:
    return {e: c for e, c in terms.items() if abs(c) >= PRUNE_TOL}


class Polynomial:
    __slots__ = ("nvars", "_terms", "_arrays")

    def __init__(self, nvars: int, terms: Mapping[Sequence[int], float] | None = None):
        if nvars < 1:
            raise ValueError(f"nvars must be positive, got {nvars}")
        self.nvars = nvars
        clean: dict[Monomial, float] = {}
        for exps, coef in (terms or {}).items():
            exps = tuple(int(e) for e in exps)
            if len(exps) != nvars:
                raise ValueError(f"exponent {exps} has length {len(exps)}, expected {nvars}")
            if min(exps) < 0:
                raise ValueError(f"negative exponent in {exps}")
            clean[exps] = clean.get(exps, 0.0) + float(coef)
        self._terms = _prune(clean)
        self._arrays = None

    # construction helpers

    @classmethod
    def zero(cls, nvars: int) -> Polynomial:
        return cls(nvars)

    @classmethod
    def constant(cls, nvars: int, value: float) -> Polynomial:
        return cls(nvars, {(0,) * nvars: value})

    @classmethod
    def variable(cls, nvars: int, index: int) -> Polynomial:
        if not 0 <= index < nvars:
            raise IndexError(f"variable index {index} out of range for {nvars} variables")
        exps = [0] * nvars
        exps[index] = 1
        return cls(nvars, {tuple(exps): 1.0})

    @classmethod
    def monomial(cls, exps: Sequence[int], coef: float = 1.0) -> Polynomial:
        return cls(len(exps), {tuple(exps): coef})

    @classmethod
    def linear(cls, coefs: Sequence[float]) -> Polynomial:
        n = len(coefs)
        return sum((c * cls.variable(n, i) for i, c in enumerate(coefs)), cls.zero(n))

    @classmethod
    def _raw(cls, nvars: int, terms: dict) -> Polynomial:
        obj = cls.__new__(cls)
        obj.nvars = nvars
        obj._terms = _prune(terms)
        obj._arrays = None
        return obj

    # inspection

    @property
    def terms(self) -> dict:
        return dict(self._terms)

    def items(self):
        return sorted(self._terms.items(), key=lambda t: grlex_key(t[0]))

    @property
    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        return max((sum(e) for e in self._terms), default=-1)

    def is_zero(self) -> bool:
        return not self._terms

    def coefficient(self, exps: Sequence[int]) -> float:
        return self._terms.get(tuple(exps), 0.0)

    def __len__(self) -> int:
        return len(self._terms)

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.nvars, other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.nvars == other.nvars and self._terms == other._terms

    def __hash__(self):
        return hash((self.nvars, frozenset(self._terms.items())))

    def __repr__(self) -> str:
        return f"Polynomial({self.nvars}, {self.to_text()!r})"

    # arithmetic

    def _coerce(self, other) -> Polynomial:
        if isinstance(other, Polynomial):
            if other.nvars != self.nvars:
                raise ValueError(f"variable count mismatch: {self.nvars} vs {other.nvars}")
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(self.nvars, float(other))
        raise TypeError(f"cannot combine Polynomial with {type(other).__name__}")

    def __add__(self, other) -> Polynomial:
        other = self._coerce(other)
        out = dict(self._terms)
        for e, c in other._terms.items():
            out[e] = out.get(e, 0.0) + c
        return Polynomial._raw(self.nvars, out)

    __radd__ = __add__

    def __neg__(self) -> Polynomial:
        return Polynomial._raw(self.nvars, {e: -c for e, c in self._terms.items()})

    def __sub__(self, other) -> Polynomial:
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> Polynomial:
        return self._coerce(other) - self

    def scale(self, s: float) -> Polynomial:
        s = float(s)
        return Polynomial._raw(self.nvars, {e: s * c for e, c in self._terms.items()})

    def __mul__(self, other) -> Polynomial:
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(other)
        other = self._coerce(other)
        out: dict = {}
        for e1, c1 in self._terms.items():
            for e2, c2 in other._terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0.0) + c1 * c2
        return Polynomial._raw(self.nvars, out)

    __rmul__ = __mul__

    def __pow__(self, k: int) -> Polynomial:
        if k < 0:
            raise ValueError("negative powers are not polynomials")
        out = Polynomial.constant(self.nvars, 1.0)
        for _ in range(k):
            out = out * self
        return out

    # calculus

    def partial(self, var: int) -> Polynomial:
        if not 0 <= var < self.nvars:
            raise IndexError(f"variable index {var} out of range for {self.nvars} variables")
        out = {}
        for e, c in self._terms.items():
            k = e[var]
            if k == 0:
                continue
            d = list(e)
            d[var] = k - 1
            out[tuple(d)] = c * k
        return Polynomial._raw(self.nvars, out)

    def gradient(self) -> list[Polynomial]:
        return [self.partial(i) for i in range(self.nvars)]

    def box_integral(self, box: Sequence[tuple[float, float]] | None = None) -> float:
        """Exact integral over a product of intervals (default [-1, 1]^n)."""
        moments = box_moments(self.nvars, max(self.degree, 0), box)
        return sum(c * _moment(moments, e) for e, c in self._terms.items())

    # evaluation

    def _as_arrays(self):
        if self._arrays is None:
            if self._terms:
                exps = np.array(list(self._terms.keys()), dtype=np.int64)
                coefs = np.array(list(self._terms.values()), dtype=float)
            else:
                exps = np.zeros((0, self.nvars), dtype=np.int64)
                coefs = np.zeros(0)
            self._arrays = (exps, coefs)
        return self._arrays

    def __call__(self, x) -> float:
        return self.evaluate(x)

    def evaluate(self, x) -> float | np.ndarray:
        """Evaluate at a point (shape (n,)) or a batch of points (shape (N, n))."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.nvars:
            raise ValueError(f"point has dimension {x.shape[-1]}, expected {self.nvars}")
        exps, coefs = self._as_arrays()
        if x.ndim == 1:
            return float(np.prod(x[None, :] ** exps, axis=1) @ coefs) if len(coefs) else 0.0
        if not len(coefs):
            return np.zeros(x.shape[0])
        return np.prod(x[:, None, :] ** exps[None, :, :], axis=2) @ coefs

    def gradient_eval(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.nvars,):
            raise ValueError(f"point has shape {x.shape}, expected ({self.nvars},)")
        exps, coefs = self._as_arrays()
        grad = np.zeros(self.nvars)
        if not len(coefs):
            return grad
        for i in range(self.nvars):
            k = exps[:, i]
            mask = k > 0
            if not mask.any():
                continue
            e = exps[mask].copy()
            e[:, i] -= 1
            grad[i] = np.prod(x[None, :] ** e, axis=1) @ (coefs[mask] * k[mask])
        return grad

    def substitute(self, mapping: Sequence[Polynomial]) -> Polynomial:
        """Compose with polynomials: variable i is replaced by mapping[i]."""
        if len(mapping) != self.nvars:
            raise ValueError("substitution needs one polynomial per variable")
        target = mapping[0].nvars
        out = Polynomial.zero(target)
        for e, c in self._terms.items():
            term = Polynomial.constant(target, c)
            for i, k in enumerate(e):
                if k:
                    term = term * (mapping[i] ** k)
            out = out + term
        return out

    # text form

    def to_text(self) -> str:
        return "\n".join(_term_text(e, c) for e, c in self.items())

    @classmethod
    def from_text(cls, nvars: int, text: str) -> Polynomial:
        terms: dict = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            coef_s, _, mono = line.partition("*")
            try:
                coef = float(coef_s)
            except ValueError as exc:
                raise ValueError(f"line {lineno}: bad coefficient {coef_s.strip()!r}") from exc
            exps = [0] * nvars
            for tok in mono.split():
                m = _VAR_RE.fullmatch(tok)
                if m is None:
                    raise ValueError(f"line {lineno}: bad factor {tok!r}")
                idx = int(m.group(1))
                if idx >= nvars:
                    raise ValueError(f"line {lineno}: variable x{idx} exceeds nvars={nvars}")
                exps[idx] += int(m.group(2) or 1)
            key = tuple(exps)
            terms[key] = terms.get(key, 0.0) + coef
        return cls(nvars, terms)


_VAR_RE = re.compile(r"x(\d+)(?:\^(\d+))?")


def _term_text(exps, coef) -> str:
    factors = " ".join(f"x{i}^{k}" for i, k in enumerate(exps) if k)
    coef = float(coef)
    return f"{coef!r} * {factors}" if factors else f"{coef!r} *"


def _check_box(nvars: int, box) -> list[tuple[float, float]]:
    if box is None:
        return [(-1.0, 1.0)] * nvars
    box = [(float(lo), float(hi)) for lo, hi in box]
    if len(box) != nvars:
        raise ValueError(f"box has {len(box)} intervals, expected {nvars}")
    for i, (lo, hi) in enumerate(box):
        if not lo < hi:
            raise ValueError(f"degenerate interval [{lo}, {hi}] for variable {i}")
    return box


def box_moments(nvars: int, max_degree: int, box=None) -> np.ndarray:
    """Table M[i, k] = integral of x_i^k over the i-th interval."""
    box = _check_box(nvars, box)
    k = np.arange(max_degree + 1)
    table = np.empty((nvars, max_degree + 1))
    for i, (lo, hi) in enumerate(box):
        table[i] = (hi ** (k + 1) - lo ** (k + 1)) / (k + 1)
    return table


def _moment(table: np.ndarray, exps) -> float:
    out = 1.0
    for i, k in enumerate(exps):
        out *= table[i, k]
    return out


@dataclass(frozen=True)
class Basis:
    """Ordered set of distinct monomials, kept in graded lexicographic order."""

    nvars: int
    monomials: tuple

    def __post_init__(self):
        mons = tuple(tuple(int(e) for e in m) for m in self.monomials)
        if len(set(mons)) != len(mons):
            raise ValueError("basis monomials must be distinct")
        if any(len(m) != self.nvars for m in mons):
            raise ValueError("basis monomial length does not match nvars")
        object.__setattr__(self, "monomials", tuple(sorted(mons, key=grlex_key)))

    def __len__(self) -> int:
        return len(self.monomials)

    def __iter__(self):
        return iter(self.monomials)

    def index(self, exps: Sequence[int]) -> int:
        return self.monomials.index(tuple(exps))

    def exponent_matrix(self) -> np.ndarray:
        return np.array(self.monomials, dtype=np.int64).reshape(len(self), self.nvars)

    def polynomials(self) -> list[Polynomial]:
        return [Polynomial.monomial(m) for m in self.monomials]

    def combine(self, coeffs: Iterable[float]) -> Polynomial:
        coeffs = list(coeffs)
        if len(coeffs) != len(self):
            raise ValueError(f"{len(coeffs)} coefficients for a basis of {len(self)}")
        return Polynomial(self.nvars, dict(zip(self.monomials, coeffs)))


def monomials_of_degree(nvars: int, degree: int) -> list[tuple]:
    out = []
    for combo in combinations_with_replacement(range(nvars), degree):
        exps = [0] * nvars
        for i in combo:
            exps[i] += 1
        out.append(tuple(exps))
    return out


def generate_even_basis(nvars: int, degrees: Iterable[int]) -> Basis:
    degrees = sorted(set(int(d) for d in degrees))
    if not degrees:
        raise ValueError("degree set is empty")
    bad = [d for d in degrees if d < 2 or d % 2]
    if bad:
        raise ValueError(f"degrees must be even and >= 2, got {bad}")
    mons = [m for d in degrees for m in monomials_of_degree(nvars, d)]
    return Basis(nvars, tuple(mons))


def basis_size(nvars: int, degrees: Iterable[int]) -> int:
    """Stars-and-bars count of monomials with total degree in ``degrees``."""
    return sum(math.comb(nvars + d - 1, d) for d in set(degrees))
