"""Finite Grassmann algebra with ghost grading and exact nilpotent calculus.

Elements are real-linear combinations of monomials in anticommuting
generators.  A monomial is stored as a strictly increasing tuple of
generator indices; products pick up Koszul signs from merge inversion
counts, so arithmetic is exact up to float rounding of coefficients.

The algebra registry is append-only: auxiliary generators (used for
directional derivatives) can be allocated later on the same algebra
without invalidating existing elements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


class GradedConfigError(ValueError):
    """Raised when elements of different algebras are combined."""


class NilpotentBodyError(ZeroDivisionError):
    """Raised when inverting or taking roots of an element with zero body."""


@dataclass(frozen=True)
class OddGenerator:
    """A single odd generator with an integer ghost number."""

    index: int
    ghost_number: int = 1
    label: str = ""

    def __repr__(self) -> str:
        return self.label or f"g{self.index + 1}"


class GrassmannAlgebra:
    """Append-only registry of odd generators."""

    def __init__(self) -> None:
        self.generators: list[OddGenerator] = []

    def odd(self, label: str = "", ghost_number: int = 1) -> OddGenerator:
        idx = len(self.generators)
        gen = OddGenerator(idx, ghost_number, label or f"g{idx + 1}")
        self.generators.append(gen)
        return gen

    def odd_batch(self, count: int, label: str = "g", ghost_number: int = 1) -> list[OddGenerator]:
        return [self.odd(f"{label}{k}", ghost_number) for k in range(count)]

    @property
    def ngens(self) -> int:
        return len(self.generators)

    def scalar(self, value: float) -> GradedScalar:
        if value == 0.0:
            return GradedScalar(self, {})
        return GradedScalar(self, {(): float(value)})

    def zero(self) -> GradedScalar:
        return GradedScalar(self, {})

    def one(self) -> GradedScalar:
        return GradedScalar(self, {(): 1.0})

    def gen(self, g: OddGenerator) -> GradedScalar:
        if not (0 <= g.index < self.ngens) or self.generators[g.index] is not g:
            raise GradedConfigError("generator does not belong to this algebra")
        return GradedScalar(self, {(g.index,): 1.0})

    def __repr__(self) -> str:
        return f"GrassmannAlgebra({self.ngens} generators)"


def _merge_sign(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[tuple[int, ...], int] | None:
    """Merge two increasing index tuples; None if a generator repeats.

    The sign is (-1)**inversions where inversions counts the transpositions
    needed to sort the concatenation a + b.
    """
    if not a:
        return b, 1
    if not b:
        return a, 1
    merged: list[int] = []
    i = j = 0
    inversions = 0
    na = len(a)
    while i < na and j < len(b):
        ai, bj = a[i], b[j]
        if ai == bj:
            return None
        if ai < bj:
            merged.append(ai)
            i += 1
        else:
            merged.append(bj)
            # bj moves past the remaining na - i entries of a
            inversions += na - i
            j += 1
    merged.extend(a[i:])
    merged.extend(b[j:])
    return tuple(merged), (-1 if inversions & 1 else 1)


class GradedScalar:
    """Element of a GrassmannAlgebra: dict monomial tuple -> coefficient."""

    __slots__ = ("algebra", "terms")

    def __init__(self, algebra: GrassmannAlgebra, terms: dict[tuple[int, ...], float]):
        self.algebra = algebra
        self.terms = terms

    # -- construction helpers -------------------------------------------------

    def _coerce(self, other) -> "GradedScalar":
        if isinstance(other, GradedScalar):
            if other.algebra is not self.algebra:
                raise GradedConfigError("elements belong to different algebras")
            return other
        if isinstance(other, (int, float)):
            return self.algebra.scalar(float(other))
        return NotImplemented  # type: ignore[return-value]

    def copy(self) -> "GradedScalar":
        return GradedScalar(self.algebra, dict(self.terms))

    # -- ring operations ------------------------------------------------------

    def __add__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        out = dict(self.terms)
        for mono, c in o.terms.items():
            s = out.get(mono, 0.0) + c
            if s == 0.0:
                out.pop(mono, None)
            else:
                out[mono] = s
        return GradedScalar(self.algebra, out)

    __radd__ = __add__

    def __neg__(self):
        return GradedScalar(self.algebra, {m: -c for m, c in self.terms.items()})

    def __sub__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return self + (-o)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            if other == 0:
                return self.algebra.zero()
            return GradedScalar(self.algebra, {m: c * other for m, c in self.terms.items()})
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        out: dict[tuple[int, ...], float] = {}
        for ma, ca in self.terms.items():
            for mb, cb in o.terms.items():
                ms = _merge_sign(ma, mb)
                if ms is None:
                    continue
                mono, sign = ms
                s = out.get(mono, 0.0) + sign * ca * cb
                if s == 0.0:
                    out.pop(mono, None)
                else:
                    out[mono] = s
        return GradedScalar(self.algebra, out)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return self.__mul__(other)
        return NotImplemented

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return self * (1.0 / other)
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return self * o.inverse()

    def __rtruediv__(self, other):
        return self.inverse() * other

    def __pow__(self, n: int):
        if not isinstance(n, int):
            return NotImplemented
        if n < 0:
            return self.inverse() ** (-n)
        out = self.algebra.one()
        base = self
        k = n
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    # -- structure queries ----------------------------------------------------

    def body(self) -> float:
        return self.terms.get((), 0.0)

    def soul(self) -> "GradedScalar":
        return GradedScalar(self.algebra, {m: c for m, c in self.terms.items() if m})

    def is_zero(self, tol: float = 0.0) -> bool:
        return all(abs(c) <= tol for c in self.terms.values())

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    def parity(self) -> int | None:
        """0 for even, 1 for odd, None for mixed or zero."""
        parities = {len(m) & 1 for m in self.terms}
        if len(parities) == 1:
            return parities.pop()
        return None

    def ghost_number(self) -> int | None:
        """Common ghost number of all monomials, None if mixed or zero."""
        gens = self.algebra.generators
        ghosts = {sum(gens[i].ghost_number for i in m) for m in self.terms}
        if len(ghosts) == 1:
            return ghosts.pop()
        return None

    def as_real(self, tol: float = 0.0) -> float:
        if not self.soul().is_zero(tol):
            raise GradedConfigError("element has nonzero soul, not a real number")
        return self.body()

    def allclose(self, other, tol: float = 1e-12) -> bool:
        o = self._coerce(other)
        return (self - o).max_abs_coeff() <= tol

    # -- derivatives ----------------------------------------------------------

    def odd_derivative(self, g: OddGenerator, side: str = "left") -> "GradedScalar":
        """One-sided derivative with respect to an odd generator.

        Left: strip g from the front of the monomial, sign (-1)**position.
        Right: strip from the back, sign (-1)**(len - 1 - position).
        """
        if side not in ("left", "right"):
            raise ValueError("side must be 'left' or 'right'")
        out: dict[tuple[int, ...], float] = {}
        idx = g.index
        for mono, c in self.terms.items():
            try:
                k = mono.index(idx)
            except ValueError:
                continue
            exp = k if side == "left" else (len(mono) - 1 - k)
            sign = -1.0 if exp & 1 else 1.0
            rest = mono[:k] + mono[k + 1:]
            s = out.get(rest, 0.0) + sign * c
            if s == 0.0:
                out.pop(rest, None)
            else:
                out[rest] = s
        return GradedScalar(self.algebra, out)

    # -- nilpotent analytic maps ----------------------------------------------

    def _soul_series(self, coeffs) -> "GradedScalar":
        """sum_k coeffs(k) * soul**k; terminates by nilpotency."""
        s = self.soul()
        out = self.algebra.scalar(coeffs(0))
        power = self.algebra.one()
        k = 0
        while True:
            k += 1
            power = power * s
            if not power.terms:
                break
            c = coeffs(k)
            if c != 0.0:
                out = out + power * c
        return out

    def inverse(self) -> "GradedScalar":
        b = self.body()
        if b == 0.0:
            raise NilpotentBodyError("cannot invert: zero body")
        # 1/(b + s) = (1/b) sum (-s/b)^k
        inv_b = 1.0 / b
        return self._soul_series(lambda k: inv_b * (-inv_b) ** k)

    def sqrt(self) -> "GradedScalar":
        b = self.body()
        if b <= 0.0:
            raise NilpotentBodyError("sqrt requires positive body")
        rb = math.sqrt(b)

        def coeff(k: int) -> float:
            # binomial(1/2, k) / b**k * sqrt(b)
            c = 1.0
            for j in range(k):
                c *= (0.5 - j) / (j + 1)
            return rb * c / b ** k

        return self._soul_series(coeff)

    def exp(self) -> "GradedScalar":
        eb = math.exp(self.body())
        return self._soul_series(lambda k: eb / math.factorial(k))

    def log(self) -> "GradedScalar":
        b = self.body()
        if b <= 0.0:
            raise NilpotentBodyError("log requires positive body")
        lb = math.log(b)

        def coeff(k: int) -> float:
            if k == 0:
                return lb
            return (-1.0) ** (k + 1) / (k * b ** k)

        return self._soul_series(coeff)

    # -- misc -----------------------------------------------------------------

    def __eq__(self, other) -> bool:
        try:
            o = self._coerce(other)
        except GradedConfigError:
            return False
        if o is NotImplemented:
            return NotImplemented
        return (self - o).is_zero()

    def __hash__(self):
        raise TypeError("GradedScalar is not hashable")

    def __repr__(self) -> str:
        if not self.terms:
            return "0"
        gens = self.algebra.generators
        parts = []
        for mono in sorted(self.terms, key=lambda m: (len(m), m)):
            c = self.terms[mono]
            name = "*".join(repr(gens[i]) for i in mono) or "1"
            parts.append(f"{c:+g}*{name}")
        return " ".join(parts)


def grade_sign(p: int, q: int) -> float:
    """Koszul sign (-1)**(p*q) for exchanging homogeneous factors."""
    return -1.0 if (p & 1) and (q & 1) else 1.0
