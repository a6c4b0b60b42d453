"""Sparse multivariate polynomials whose coefficients are affine in a decision vector.

A :class:`Polynomial` maps :class:`Monomial` to :class:`AffineCoeff`, where an
``AffineCoeff`` represents ``c(theta) = constant + sum_i weight_i * theta[i]``.
Everything is immutable and kept in canonical form (no zero exponents, no zero
weights, no identically-zero terms).

Monomials are ordered graded-lexicographically: lower total degree first, and
within a degree the monomial with the larger exponent on the lowest-indexed
variable first, so ``[1, x1, x2, x1^2, x1 x2, x2^2]``.
"""
from __future__ import annotations

import itertools
from math import comb
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DimensionError


class Monomial:
    __slots__ = ("_items", "_hash")

    def __init__(self, exponents: Mapping[int, int] | Iterable[tuple[int, int]] = ()):
        if isinstance(exponents, Mapping):
            pairs = exponents.items()
        else:
            pairs = exponents
        acc: dict[int, int] = {}
        for var, e in pairs:
            if e < 0 or var < 0:
                raise ValueError("exponents and variable indices must be nonnegative")
            if e:
                acc[int(var)] = acc.get(int(var), 0) + int(e)
        self._items = tuple(sorted(acc.items()))
        self._hash = hash(self._items)

    @classmethod
    def from_dense(cls, exps: Sequence[int], offset: int = 0) -> "Monomial":
        return cls((offset + i, e) for i, e in enumerate(exps) if e)

    @property
    def items(self) -> tuple[tuple[int, int], ...]:
        return self._items

    @property
    def degree(self) -> int:
        return sum(e for _, e in self._items)

    def exponent(self, var: int) -> int:
        for v, e in self._items:
            if v == var:
                return e
        return 0

    def dense(self, n_vars: int) -> tuple[int, ...]:
        out = [0] * n_vars
        for v, e in self._items:
            out[v] = e
        return tuple(out)

    def degree_in(self, variables: Iterable[int]) -> int:
        vs = set(variables)
        return sum(e for v, e in self._items if v in vs)

    def restrict(self, variables: Iterable[int]) -> "Monomial":
        vs = set(variables)
        return Monomial((v, e) for v, e in self._items if v in vs)

    def sort_key(self):
        return (self.degree, tuple((v, -e) for v, e in self._items))

    def __mul__(self, other: "Monomial") -> "Monomial":
        return Monomial(itertools.chain(self._items, other._items))

    def __eq__(self, other):
        return isinstance(other, Monomial) and self._items == other._items

    def __lt__(self, other: "Monomial"):
        return self.sort_key() < other.sort_key()

    def __hash__(self):
        return self._hash

    def __repr__(self):
        if not self._items:
            return "1"
        return "*".join(f"z{v + 1}" + (f"^{e}" if e > 1 else "") for v, e in self._items)

    def evaluate(self, point) -> float:
        out = 1.0
        for v, e in self._items:
            out *= point[v] ** e
        return out


ONE = Monomial()


def monomials_up_to(n_vars: int, degree: int, offset: int = 0) -> list[Monomial]:
    """All monomials of total degree <= ``degree`` in ``n_vars`` variables, grlex order.

    Variables are numbered ``offset .. offset + n_vars - 1``.
    """
    if n_vars < 1 or degree < 0:
        raise ValueError("need n_vars >= 1 and degree >= 0")
    out = []
    for d in range(degree + 1):
        # combinations_with_replacement yields x1 x1 ... before x1 x2 ..., i.e. lex-descending
        for combo in itertools.combinations_with_replacement(range(n_vars), d):
            out.append(Monomial((offset + v, 1) for v in combo))
    assert len(out) == comb(n_vars + degree, degree)
    return out


class AffineCoeff:
    """``constant + sum(weight * theta[index])`` with exact zeros dropped."""

    __slots__ = ("linear", "constant")

    def __init__(self, linear: Mapping[int, float] | None = None, constant: float = 0.0):
        lin = {}
        if linear:
            for k, w in linear.items():
                if w != 0.0:
                    lin[int(k)] = float(w)
        self.linear = dict(sorted(lin.items()))
        self.constant = float(constant)

    @classmethod
    def param(cls, index: int, weight: float = 1.0) -> "AffineCoeff":
        return cls({index: weight})

    def is_zero(self) -> bool:
        return self.constant == 0.0 and not self.linear

    def is_constant(self) -> bool:
        return not self.linear

    def __add__(self, other: "AffineCoeff") -> "AffineCoeff":
        lin = dict(self.linear)
        for k, w in other.linear.items():
            lin[k] = lin.get(k, 0.0) + w
        return AffineCoeff(lin, self.constant + other.constant)

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        return self + (-other)

    def scale(self, s: float) -> "AffineCoeff":
        return AffineCoeff({k: s * w for k, w in self.linear.items()}, s * self.constant)

    def __call__(self, theta) -> float:
        out = self.constant
        for k, w in self.linear.items():
            out += w * theta[k]
        return out

    def __eq__(self, other):
        return (
            isinstance(other, AffineCoeff)
            and self.constant == other.constant
            and self.linear == other.linear
        )

    def __repr__(self):
        parts = [f"{w:g}*th[{k}]" for k, w in self.linear.items()]
        if self.constant or not parts:
            parts.append(f"{self.constant:g}")
        return " + ".join(parts)


class Polynomial:
    """Immutable canonical polynomial over ``n_vars`` variables."""

    __slots__ = ("terms", "n_vars")

    def __init__(self, terms: Mapping[Monomial, AffineCoeff] | None = None, n_vars: int = 0):
        clean = {}
        max_var = -1
        for m, c in (terms or {}).items():
            if not c.is_zero():
                clean[m] = c
                if m.items:
                    max_var = max(max_var, m.items[-1][0])
        if max_var >= n_vars:
            raise DimensionError(f"monomial uses variable {max_var} but n_vars={n_vars}")
        self.terms = dict(sorted(clean.items(), key=lambda kv: kv[0].sort_key()))
        self.n_vars = n_vars

    # constructors -------------------------------------------------------
    @classmethod
    def zero(cls, n_vars: int) -> "Polynomial":
        return cls({}, n_vars)

    @classmethod
    def constant(cls, value: float, n_vars: int) -> "Polynomial":
        return cls({ONE: AffineCoeff(constant=value)}, n_vars)

    @classmethod
    def monomial(cls, m: Monomial, n_vars: int, coeff: AffineCoeff | float = 1.0) -> "Polynomial":
        if not isinstance(coeff, AffineCoeff):
            coeff = AffineCoeff(constant=coeff)
        return cls({m: coeff}, n_vars)

    # queries ------------------------------------------------------------
    def support(self) -> list[Monomial]:
        return list(self.terms)

    def is_theta_free(self) -> bool:
        return all(c.is_constant() for c in self.terms.values())

    def coeff(self, m: Monomial) -> AffineCoeff:
        return self.terms.get(m, AffineCoeff())

    def degree(self) -> int:
        return max((m.degree for m in self.terms), default=0)

    def __eq__(self, other):
        return isinstance(other, Polynomial) and self.terms == other.terms

    def __repr__(self):
        if not self.terms:
            return "0"
        return " + ".join(f"({c!r})*{m!r}" for m, c in self.terms.items())

    # arithmetic ---------------------------------------------------------
    def _check(self, other: "Polynomial"):
        if self.n_vars != other.n_vars:
            raise DimensionError("polynomials over different variable sets")

    def __add__(self, other: "Polynomial") -> "Polynomial":
        self._check(other)
        acc = dict(self.terms)
        for m, c in other.terms.items():
            acc[m] = acc[m] + c if m in acc else c
        return Polynomial(acc, self.n_vars)

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        return self + (-other)

    def scale(self, s: float) -> "Polynomial":
        return Polynomial({m: c.scale(s) for m, c in self.terms.items()}, self.n_vars)


def poly_sum(polys: Iterable[Polynomial], n_vars: int) -> Polynomial:
    acc: dict[Monomial, AffineCoeff] = {}
    for p in polys:
        for m, c in p.terms.items():
            acc[m] = acc[m] + c if m in acc else c
    return Polynomial(acc, n_vars)


def poly_mul(p: Polynomial, q: Polynomial) -> Polynomial:
    """Product of two polynomials, at most one of which may depend on theta."""
    p._check(q)
    if not p.is_theta_free():
        if not q.is_theta_free():
            raise ValueError("product of two theta-dependent polynomials is not affine in theta")
        p, q = q, p
    acc: dict[Monomial, AffineCoeff] = {}
    for mp, cp in p.terms.items():
        s = cp.constant
        for mq, cq in q.terms.items():
            m = mp * mq
            c = cq.scale(s)
            acc[m] = acc[m] + c if m in acc else c
    return Polynomial(acc, p.n_vars)


def poly_partial(p: Polynomial, var: int) -> Polynomial:
    if not 0 <= var < p.n_vars:
        raise DimensionError(f"variable {var} not declared (n_vars={p.n_vars})")
    acc: dict[Monomial, AffineCoeff] = {}
    for m, c in p.terms.items():
        e = m.exponent(var)
        if e == 0:
            continue
        dm = Monomial((v, k - 1 if v == var else k) for v, k in m.items)
        acc[dm] = acc[dm] + c.scale(e) if dm in acc else c.scale(e)
    return Polynomial(acc, p.n_vars)


def _check_theta(p: Polynomial, theta) -> None:
    need = max((max(c.linear, default=-1) for c in p.terms.values()), default=-1)
    if need >= len(theta):
        raise DimensionError(f"theta has length {len(theta)}, polynomial references index {need}")


def poly_eval(p: Polynomial, theta, point) -> float:
    point = np.asarray(point, dtype=float)
    if point.shape != (p.n_vars,):
        raise DimensionError(f"point has shape {point.shape}, expected ({p.n_vars},)")
    _check_theta(p, theta)
    total = 0.0
    for m, c in p.terms.items():
        total += c(theta) * m.evaluate(point)
    return total


def poly_eval_many(p: Polynomial, theta, points: np.ndarray) -> np.ndarray:
    """Evaluate at each row of ``points`` (shape (N, n_vars))."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != p.n_vars:
        raise DimensionError(f"points have {points.shape[1]} columns, expected {p.n_vars}")
    _check_theta(p, theta)
    out = np.zeros(points.shape[0])
    for m, c in p.terms.items():
        val = np.ones(points.shape[0])
        for v, e in m.items:
            val = val * points[:, v] ** e
        out += c(theta) * val
    return out


def coeff_match(lhs: Polynomial, rhs: Polynomial) -> list[tuple[dict[int, float], float]]:
    """Linear equations forcing ``lhs == rhs`` coefficient-wise.

    Each equation is ``(row, b)`` meaning ``sum(row[i] * theta[i]) == b``. One row
    per monomial of the union of supports in grlex order; rows reading ``0 == 0``
    are dropped.
    """
    lhs._check(rhs)
    monos = sorted(set(lhs.terms) | set(rhs.terms), key=Monomial.sort_key)
    rows = []
    for m in monos:
        d = lhs.coeff(m) - rhs.coeff(m)
        if d.is_zero():
            continue
        rows.append((d.linear, -d.constant))
    return rows
