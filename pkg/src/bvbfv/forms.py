"""Directional calculus with nilpotent auxiliaries and graded linear algebra.

A derivative of F along a tangent u is read off exactly as the coefficient
of an auxiliary generator: F(y + eps u) = F(y) + eps D_u[F] when u is odd,
and F(y + e1 e2 u) = F(y) + e1 e2 D_u[F] when u is even.  Extraction is a
left odd derivative (twice for the even pair), so rational and analytic
expressions differentiate exactly, with no step-size error.

Also provides the terminating Neumann-series inverse for square matrices of
GradedScalar entries (invertible iff the body matrix is).
"""

from __future__ import annotations

import numpy as np

from .graded import (GradedConfigError, GradedScalar, GrassmannAlgebra,
                     NilpotentBodyError)


def as_graded_array(arr: np.ndarray, algebra: GrassmannAlgebra) -> np.ndarray:
    """Lift a real array to an object array of body-only GradedScalars."""
    a = np.asarray(arr)
    if a.dtype == object:
        return a
    out = np.empty(a.shape, dtype=object)
    for idx in np.ndindex(a.shape):
        out[idx] = algebra.scalar(float(a[idx]))
    return out


def _to_scalar(value, algebra):
    if isinstance(value, GradedScalar):
        return value
    return algebra.scalar(float(value))


def eps_shift(values: np.ndarray, tangent: np.ndarray, eps: GradedScalar) -> np.ndarray:
    """values + eps * tangent, elementwise, as an object array."""
    v = np.asarray(values)
    t = np.asarray(tangent)
    out = np.empty(v.shape, dtype=object)
    for idx in np.ndindex(v.shape):
        out[idx] = _to_scalar(v[idx], eps.algebra) + eps * _to_scalar(t[idx], eps.algebra)
    return out


def extract_coefficient(value, aux_gens) -> GradedScalar:
    """Left coefficient of the ordered auxiliary product in value."""
    out = value
    for g in aux_gens:
        out = out.odd_derivative(g, side="left")
    return out


class Directional:
    """Exact directional derivatives of field-dict evaluators.

    The evaluator receives a dict of object arrays (same keys as the base
    point) and returns a GradedScalar or an array of them.  parity refers
    to the tangent: odd tangents use one auxiliary generator, even tangents
    a nilpotent pair.
    """

    def __init__(self, algebra: GrassmannAlgebra):
        self.algebra = algebra

    def shift(self, fields: dict, tangent: dict, parity: int):
        if parity not in (0, 1):
            raise ValueError("parity must be 0 (even) or 1 (odd)")
        if parity == 1:
            aux = [self.algebra.odd("aux", ghost_number=0)]
            eps = self.algebra.gen(aux[0])
        else:
            a1 = self.algebra.odd("aux1", ghost_number=0)
            a2 = self.algebra.odd("aux2", ghost_number=0)
            aux = [a1, a2]
            eps = self.algebra.gen(a1) * self.algebra.gen(a2)
        shifted = {}
        for key, base in fields.items():
            tan = tangent.get(key)
            if tan is None:
                shifted[key] = as_graded_array(np.asarray(base), self.algebra)
            else:
                shifted[key] = eps_shift(base, tan, eps)
        return shifted, aux

    def derivative(self, evaluator, fields: dict, tangent: dict, parity: int):
        shifted, aux = self.shift(fields, tangent, parity)
        value = evaluator(shifted)
        if isinstance(value, GradedScalar):
            return extract_coefficient(value, aux)
        value = np.asarray(value, dtype=object)
        out = np.empty(value.shape, dtype=object)
        for idx in np.ndindex(value.shape):
            out[idx] = extract_coefficient(value[idx], aux)
        return out


def fd_directional(functional, base: np.ndarray, direction: np.ndarray,
                   step: float = 1e-5, richardson: bool = False) -> float:
    """Central finite difference of a real functional along a direction."""
    def central(h):
        return (functional(base + h * direction) - functional(base - h * direction)) / (2.0 * h)

    d1 = central(step)
    if not richardson:
        return d1
    d2 = central(step / 2.0)
    return (4.0 * d2 - d1) / 3.0


# -- graded linear algebra ----------------------------------------------------

def gdot(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Matrix product for object arrays (also mixed with real arrays)."""
    A = np.asarray(A)
    B = np.asarray(B)
    if A.dtype != object and B.dtype != object:
        return A @ B
    b2 = B.reshape(B.shape[0], -1)
    out = np.empty((A.shape[0], b2.shape[1]), dtype=object)
    for i in range(A.shape[0]):
        for j in range(b2.shape[1]):
            acc = None
            for k in range(A.shape[1]):
                term = A[i, k] * b2[k, j]
                acc = term if acc is None else acc + term
            out[i, j] = acc
    return out.reshape((A.shape[0],) + B.shape[1:])


def graded_matrix_inverse(M: np.ndarray, algebra: GrassmannAlgebra) -> np.ndarray:
    """Inverse of a square GradedScalar matrix via the body inverse.

    M = B + S with B the real body matrix; M^-1 = sum_k (-B^-1 S)^k B^-1,
    terminating because S is nilpotent.
    """
    M = np.asarray(M)
    n = M.shape[0]
    body = np.empty((n, n))
    soul = np.empty((n, n), dtype=object)
    for i in range(n):
        for j in range(n):
            entry = _to_scalar(M[i, j], algebra)
            body[i, j] = entry.body()
            soul[i, j] = entry.soul()
    try:
        binv = np.linalg.inv(body)
    except np.linalg.LinAlgError as exc:
        raise NilpotentBodyError("matrix body is singular") from exc
    binv_g = as_graded_array(binv, algebra)
    term = gdot(as_graded_array(-binv, algebra), soul)  # -B^-1 S
    out = binv_g
    power = None
    while True:
        power = term if power is None else gdot(power, term)
        if all(power[i, j].is_zero() for i in range(n) for j in range(n)):
            break
        out = out + gdot(power, binv_g)
    return out


def graded_solve(M: np.ndarray, rhs: np.ndarray, algebra: GrassmannAlgebra) -> np.ndarray:
    return gdot(graded_matrix_inverse(M, algebra), rhs)


# -- kernels of ring-linear systems -------------------------------------------

def algebra_monomials(algebra: GrassmannAlgebra, parity: int | None = None,
                      ngens: int | None = None) -> list[tuple]:
    """Monomials over the first ngens generators (all registered if None).

    Pass an explicit ngens when auxiliary derivative generators may have
    been appended to the algebra: the registry is append-only, so the base
    field generators are always the leading block.
    """
    from itertools import combinations
    k = algebra.ngens if ngens is None else ngens
    out = []
    for r in range(k + 1):
        if parity is not None and r % 2 != parity:
            continue
        out.extend(combinations(range(k), r))
    return out


def monomial_scalar(algebra: GrassmannAlgebra, mono: tuple) -> GradedScalar:
    return GradedScalar(algebra, {tuple(mono): 1.0})


def ring_system_nullspace(blocks: dict, size: int, field_parity, unknown_parity: int,
                          algebra: GrassmannAlgebra, rcond: float = 1e-9):
    """Real solution basis of R_b(u) = sum_a c_ab u_a = 0 over a Grassmann ring.

    blocks maps (a, b) to the coefficient c_ab (GradedScalar or float),
    already in normal form with c_ab standing to the left of u_a.  A list
    of such dicts stacks their row systems over the shared columns (needed
    when the coefficients depend on the parity of the probe covector).
    The unknown component u_a runs over monomials of parity
    (unknown_parity + field_parity[a]) mod 2, which makes the tangent
    homogeneous of total parity unknown_parity.

    Returns (columns, basis): columns is the list of (a, monomial) real
    coordinates, basis has one nullspace vector per column.
    """
    block_sets = list(blocks) if isinstance(blocks, (list, tuple)) else [blocks]
    columns = []
    col_index = {}
    for a in range(size):
        par = (unknown_parity + field_parity[a]) % 2
        for mono in algebra_monomials(algebra, par):
            col_index[(a, mono)] = len(columns)
            columns.append((a, mono))
    row_index = {}
    rows = []
    for k in range(len(block_sets)):
        for b in range(size):
            par = (unknown_parity + field_parity[b]) % 2
            for mono in algebra_monomials(algebra, par):
                row_index[(k, b, mono)] = len(rows)
                rows.append((k, b, mono))
    A = np.zeros((len(rows), len(columns)))
    for k, bset in enumerate(block_sets):
        for (a, b), coeff in bset.items():
            c = _to_scalar(coeff, algebra)
            if not c.terms:
                continue
            par = (unknown_parity + field_parity[a]) % 2
            for mono in algebra_monomials(algebra, par):
                prod = c * monomial_scalar(algebra, mono)
                for m, val in prod.terms.items():
                    key = (k, b, m)
                    if key in row_index:
                        A[row_index[key], col_index[(a, mono)]] += val
                    elif val != 0.0:
                        raise GradedConfigError(
                            "row parity mismatch: system is not homogeneous")
    from scipy.linalg import null_space
    if A.size == 0:
        basis = np.eye(len(columns))
    else:
        basis = null_space(A, rcond=rcond)
    return columns, basis


def ring_vector_from_coeffs(columns, coeffs, size: int,
                            algebra: GrassmannAlgebra) -> np.ndarray:
    """Assemble an object array of GradedScalars from real coordinates."""
    terms = [dict() for _ in range(size)]
    for (a, mono), x in zip(columns, coeffs):
        if x != 0.0:
            terms[a][tuple(mono)] = terms[a].get(tuple(mono), 0.0) + float(x)
    out = np.empty(size, dtype=object)
    for a in range(size):
        out[a] = GradedScalar(algebra, {m: v for m, v in terms[a].items() if v != 0.0})
    return out


def body_kernel_dimension(blocks, size: int, rcond: float = 1e-9) -> int:
    """Kernel dimension of the body (real part) of the same row system."""
    block_sets = list(blocks) if isinstance(blocks, (list, tuple)) else [blocks]
    B = np.zeros((size * len(block_sets), size))
    for k, bset in enumerate(block_sets):
        for (a, b), coeff in bset.items():
            if isinstance(coeff, GradedScalar):
                B[k * size + b, a] += coeff.body()
            else:
                B[k * size + b, a] += float(coeff)
    from scipy.linalg import null_space
    return null_space(B, rcond=rcond).shape[1]
