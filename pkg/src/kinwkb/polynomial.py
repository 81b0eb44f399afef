"""Sparse multivariate polynomials with exact rational coefficients.

Monomials are packed into Python integers, eight bits per variable, so that
multiplying monomials is integer addition.  Exponents must stay below 256,
which is far beyond anything the expansion engine produces.

``TSeries`` adds a truncated Laurent series in t on top, with bookkeeping of
the highest power that is known exactly.
"""
from __future__ import annotations

import math
from fractions import Fraction
from typing import Dict, Iterable, Mapping, Sequence

import numpy as np

BITS = 8
MASK = (1 << BITS) - 1
INF = math.inf


class Ring:
    """Ordered set of variable names."""

    def __init__(self, names: Sequence[str]):
        self.names = tuple(names)
        self.n = len(self.names)
        self.index = {nm: i for i, nm in enumerate(self.names)}
        if len(self.index) != self.n:
            raise ValueError("duplicate variable names")

    def __eq__(self, other):
        return isinstance(other, Ring) and self.names == other.names

    def __hash__(self):
        return hash(self.names)

    def unit(self, i: int) -> int:
        return 1 << (BITS * i)

    def exps(self, mono: int):
        return tuple((mono >> (BITS * i)) & MASK for i in range(self.n))

    def mono(self, exps: Sequence[int]) -> int:
        m = 0
        for i, e in enumerate(exps):
            if e:
                if not 0 <= e <= MASK:
                    raise OverflowError("exponent out of range")
                m |= e << (BITS * i)
        return m

    def var(self, name) -> "Poly":
        i = self.index[name] if isinstance(name, str) else int(name)
        return Poly(self, {self.unit(i): Fraction(1)})

    def const(self, c) -> "Poly":
        c = Fraction(c)
        return Poly(self, {0: c} if c else {})

    def zero(self) -> "Poly":
        return Poly(self, {})


class Poly:
    __slots__ = ("ring", "terms")

    def __init__(self, ring: Ring, terms: Dict[int, Fraction] | None = None):
        self.ring = ring
        self.terms = terms if terms is not None else {}

    # arithmetic -----------------------------------------------------------
    def copy(self):
        return Poly(self.ring, dict(self.terms))

    def _coerce(self, other):
        if isinstance(other, Poly):
            return other
        return self.ring.const(other)

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self.terms)
        for m, c in other.terms.items():
            v = out.get(m, 0) + c
            if v:
                out[m] = v
            else:
                out.pop(m, None)
        return Poly(self.ring, out)

    __radd__ = __add__

    def __neg__(self):
        return Poly(self.ring, {m: -c for m, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, Poly):
            c = Fraction(other)
            if not c:
                return Poly(self.ring, {})
            return Poly(self.ring, {m: v * c for m, v in self.terms.items()})
        if len(self.terms) > len(other.terms):
            a, b = other.terms, self.terms
        else:
            a, b = self.terms, other.terms
        out: Dict[int, Fraction] = {}
        get = out.get
        for ma, ca in a.items():
            for mb, cb in b.items():
                m = ma + mb
                v = get(m, 0) + ca * cb
                if v:
                    out[m] = v
                else:
                    out.pop(m, None)
        return Poly(self.ring, out)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        out = self.ring.const(1)
        for _ in range(k):
            out = out * self
        return out

    def __eq__(self, other):
        if isinstance(other, Poly):
            return self.terms == other.terms
        return self.terms == self._coerce(other).terms

    def __hash__(self):  # pragma: no cover - polynomials are mutable values
        raise TypeError("Poly is unhashable")

    def is_zero(self) -> bool:
        return not self.terms

    # calculus and structure -------------------------------------------------
    def diff(self, i: int) -> "Poly":
        shift = BITS * i
        unit = 1 << shift
        out = {}
        for m, c in self.terms.items():
            e = (m >> shift) & MASK
            if e:
                out[m - unit] = c * e
        return Poly(self.ring, out)

    def degree_in(self, idxs: Iterable[int], mono: int) -> int:
        return sum((mono >> (BITS * i)) & MASK for i in idxs)

    def split_degree(self, idxs: Sequence[int]) -> Dict[int, "Poly"]:
        parts: Dict[int, Dict[int, Fraction]] = {}
        for m, c in self.terms.items():
            parts.setdefault(self.degree_in(idxs, m), {})[m] = c
        return {k: Poly(self.ring, v) for k, v in parts.items()}

    def total_degrees(self, idxs: Sequence[int]):
        return sorted({self.degree_in(idxs, m) for m in self.terms})

    def subs(self, values: Mapping[int, object]) -> "Poly":
        """Substitute numbers (exact) for some variables."""
        out = self.ring.zero()
        acc: Dict[int, Fraction] = {}
        for m, c in self.terms.items():
            coef = c
            rest = m
            for i, val in values.items():
                e = (m >> (BITS * i)) & MASK
                if e:
                    coef = coef * Fraction(val) ** e
                    rest -= e << (BITS * i)
            if coef:
                v = acc.get(rest, 0) + coef
                if v:
                    acc[rest] = v
                else:
                    acc.pop(rest, None)
        out.terms = acc
        return out

    def subs_poly(self, values: Mapping[int, "Poly"]) -> "Poly":
        """Substitute polynomials for some variables."""
        out = self.ring.zero()
        cache: Dict[tuple, Poly] = {}
        for m, c in self.terms.items():
            term = self.ring.const(c)
            rest = m
            for i, val in values.items():
                e = (m >> (BITS * i)) & MASK
                if e:
                    key = (i, e)
                    if key not in cache:
                        cache[key] = val ** e
                    term = term * cache[key]
                    rest -= e << (BITS * i)
            out = out + term * Poly(self.ring, {rest: Fraction(1)})
        return out

    def evaluate(self, values: Sequence[float]) -> float:
        acc = 0.0
        for m, c in self.terms.items():
            v = float(c)
            for i in range(self.ring.n):
                e = (m >> (BITS * i)) & MASK
                if e:
                    v *= values[i] ** e
            acc += v
        return acc

    def compile(self, var_idxs: Sequence[int], fixed: Mapping[int, float] | None = None):
        """Numeric evaluator over the variables ``var_idxs``.

        All other variables must be given in ``fixed``.  Returns a
        :class:`CompiledPoly`.
        """
        fixed = dict(fixed or {})
        rows: Dict[tuple, float] = {}
        for m, c in self.terms.items():
            v = float(c)
            for i, val in fixed.items():
                e = (m >> (BITS * i)) & MASK
                if e:
                    v *= float(val) ** e
            ex = tuple((m >> (BITS * i)) & MASK for i in var_idxs)
            for i in range(self.ring.n):
                if i not in fixed and i not in var_idxs and (m >> (BITS * i)) & MASK:
                    raise ValueError(f"variable {self.ring.names[i]} left unassigned")
            rows[ex] = rows.get(ex, 0.0) + v
        exps = np.array(list(rows.keys()), dtype=np.int64).reshape(-1, len(var_idxs))
        coefs = np.array(list(rows.values()), dtype=float)
        return CompiledPoly(exps, coefs)

    def __repr__(self):
        if not self.terms:
            return "0"
        parts = []
        for m in sorted(self.terms):
            c = self.terms[m]
            ex = self.ring.exps(m)
            mon = "*".join(
                f"{nm}^{e}" if e > 1 else nm for nm, e in zip(self.ring.names, ex) if e
            )
            parts.append(f"({c})" + (f"*{mon}" if mon else ""))
        return " + ".join(parts)


class CompiledPoly:
    """Float evaluator ``sum_r c_r prod_j z_j^{e_rj}`` for arrays of points."""

    def __init__(self, exps: np.ndarray, coefs: np.ndarray):
        self.exps = exps
        self.coefs = coefs

    def __call__(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if self.coefs.size == 0:
            return np.zeros(Z.shape[0])
        out = np.zeros(Z.shape[0])
        maxe = int(self.exps.max()) if self.exps.size else 0
        powers = [np.ones_like(Z)]
        for _ in range(maxe):
            powers.append(powers[-1] * Z)
        P = np.stack(powers)  # (maxe+1, N, nvars)
        for e, c in zip(self.exps, self.coefs):
            term = np.full(Z.shape[0], c)
            for j, k in enumerate(e):
                if k:
                    term = term * P[k, :, j]
            out += term
        return out


class TSeries:
    """Truncated Laurent series in t with polynomial coefficients.

    ``top`` is the highest power of t whose coefficient is exact; terms above
    it are never stored.
    """

    __slots__ = ("ring", "c", "top")

    def __init__(self, ring: Ring, coeffs: Dict[int, Poly] | None = None, top: float = INF):
        self.ring = ring
        self.top = top
        self.c = {}
        for k, p in (coeffs or {}).items():
            if k <= top and not p.is_zero():
                self.c[k] = p

    @classmethod
    def const(cls, ring, p) -> "TSeries":
        if not isinstance(p, Poly):
            p = ring.const(p)
        return cls(ring, {0: p})

    def min_power(self) -> float:
        """Lowest power that may be nonzero, counting the unknown tail."""
        known = min(self.c) if self.c else INF
        return min(known, self.top + 1)

    def coef(self, k: int) -> Poly:
        if k > self.top:
            raise ValueError(f"coefficient t^{k} not known (exact up to t^{self.top})")
        return self.c.get(k, self.ring.zero())

    def truncate(self, top) -> "TSeries":
        return TSeries(self.ring, self.c, min(self.top, top))

    def _coerce(self, other):
        if isinstance(other, TSeries):
            return other
        return TSeries.const(self.ring, other)

    def __add__(self, other):
        other = self._coerce(other)
        top = min(self.top, other.top)
        out = {}
        for k in set(self.c) | set(other.c):
            if k <= top:
                out[k] = self.c.get(k, self.ring.zero()) + other.c.get(k, self.ring.zero())
        return TSeries(self.ring, out, top)

    __radd__ = __add__

    def __neg__(self):
        return TSeries(self.ring, {k: -p for k, p in self.c.items()}, self.top)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if isinstance(other, (Poly, int, Fraction)):
            return TSeries(self.ring, {k: p * other for k, p in self.c.items()}, self.top)
        amin, bmin = self.min_power(), other.min_power()
        top = min(self.top + bmin, other.top + amin)
        out: Dict[int, Poly] = {}
        for ka, pa in self.c.items():
            for kb, pb in other.c.items():
                k = ka + kb
                if k <= top:
                    prod = pa * pb
                    out[k] = out[k] + prod if k in out else prod
        return TSeries(self.ring, out, top)

    __rmul__ = __mul__

    def shift(self, k: int) -> "TSeries":
        """Multiply by t^k."""
        return TSeries(self.ring, {j + k: p for j, p in self.c.items()}, self.top + k)

    def dt(self) -> "TSeries":
        return TSeries(self.ring, {k - 1: p * k for k, p in self.c.items() if k}, self.top - 1)

    def integrate(self) -> "TSeries":
        """Antiderivative vanishing at t = 0 (no t^-1 terms allowed)."""
        if -1 in self.c:
            raise ValueError("cannot integrate t^-1")
        return TSeries(self.ring, {k + 1: p * Fraction(1, k + 1) for k, p in self.c.items()},
                       self.top + 1)

    def diff(self, i: int) -> "TSeries":
        return TSeries(self.ring, {k: p.diff(i) for k, p in self.c.items()}, self.top)

    def map(self, fn) -> "TSeries":
        return TSeries(self.ring, {k: fn(p) for k, p in self.c.items()}, self.top)

    def __repr__(self):
        body = ", ".join(f"t^{k}: {len(p.terms)} terms" for k, p in sorted(self.c.items()))
        return f"TSeries({body}; exact to t^{self.top})"


def solve_rational(M, rhs_cols):
    """Solve ``M U = R`` exactly by Gauss-Jordan elimination.

    ``M`` is a square list of lists of Fractions and ``rhs_cols`` a list of
    right-hand-side columns.  Returns the solution columns, or None if ``M``
    is singular.
    """
    n = len(M)
    k = len(rhs_cols)
    aug = [list(M[i]) + [rhs_cols[j][i] for j in range(k)] for i in range(n)]
    for col in range(n):
        piv = next((r for r in range(col, n) if aug[r][col] != 0), None)
        if piv is None:
            return None
        aug[col], aug[piv] = aug[piv], aug[col]
        pv = aug[col][col]
        if pv != 1:
            inv = 1 / pv
            aug[col] = [v * inv for v in aug[col]]
        row = aug[col]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                ar = aug[r]
                aug[r] = [a - f * b for a, b in zip(ar, row)]
    return [[aug[i][n + j] for i in range(n)] for j in range(k)]
