"""Lattices with exact summation-by-parts structure.

Circle: Fourier spectral differentiation.  The circulant coefficients are
built for half the offsets and mirrored, so D^T = -D holds bitwise and the
constant is differentiated to exactly zero.

Cylinder: spectral circle times a second-order SBP interval.  The SBP pair
(P, Q) satisfies Q + Q^T = diag(-1, 0, ..., 0, 1) exactly in floats, which
makes the discrete Stokes identity an identity rather than an estimate.

Fields may hold real numbers or GradedScalar entries; all operators extend
linearly over object arrays.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .graded import GradedScalar, GrassmannAlgebra


def spectral_diff_matrix(n: int) -> np.ndarray:
    """Circulant spectral derivative on n uniform nodes of [0, 2*pi)."""
    if n < 4 or n % 2:
        raise ValueError("need an even number of nodes, at least 4")
    h = 2.0 * np.pi / n
    e = np.zeros(n)
    for m in range(1, n // 2):
        v = 0.5 * (-1.0) ** m / np.tan(0.5 * m * h)
        e[m] = v
        e[n - m] = -v
    e[n // 2] = 0.0  # cot(pi/2) rounds to ~6e-17; the exact value is 0
    D = np.empty((n, n))
    for j in range(n):
        for k in range(n):
            D[j, k] = e[(j - k) % n]
    return D


def sbp21(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Second-order SBP first derivative on [0, 1]: returns (P_diag, D)."""
    if n < 4:
        raise ValueError("need at least 4 nodes")
    h = 1.0 / (n - 1)
    p = np.full(n, h)
    p[0] = p[-1] = 0.5 * h
    D = np.zeros((n, n))
    D[0, 0], D[0, 1] = -1.0 / h, 1.0 / h
    D[-1, -2], D[-1, -1] = -1.0 / h, 1.0 / h
    for i in range(1, n - 1):
        D[i, i - 1] = -0.5 / h
        D[i, i + 1] = 0.5 / h
    return p, D


def apply_matrix(M: np.ndarray, values: np.ndarray) -> np.ndarray:
    """M @ values along axis 0, linear over object (GradedScalar) arrays."""
    if values.dtype != object:
        return M @ values
    out = np.empty(values.shape, dtype=object)
    flat_in = values.reshape(values.shape[0], -1)
    flat_out = out.reshape(values.shape[0], -1)
    for c in range(flat_in.shape[1]):
        col = flat_in[:, c]
        for j in range(M.shape[0]):
            acc = None
            row = M[j]
            for k in range(M.shape[1]):
                m = row[k]
                if m == 0.0:
                    continue
                term = col[k] * m if isinstance(col[k], GradedScalar) else m * col[k]
                acc = term if acc is None else acc + term
            flat_out[j, c] = acc if acc is not None else 0.0
    return out


def _total(values) -> object:
    acc = None
    for v in np.asarray(values, dtype=object).ravel():
        acc = v if acc is None else acc + v
    return acc if acc is not None else 0.0


class CircleLattice:
    """Uniform periodic lattice on the circle of circumference 2*pi."""

    def __init__(self, n: int):
        self.n = n
        self.spacing = 2.0 * np.pi / n
        self.points = self.spacing * np.arange(n)
        self.D = spectral_diff_matrix(n)
        self.weight = self.spacing  # uniform quadrature weight per site

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n, self.weight)

    def d_t(self, values: np.ndarray) -> np.ndarray:
        return apply_matrix(self.D, np.asarray(values))

    def integrate(self, values):
        v = np.asarray(values)
        if v.dtype == object:
            return _total(v) * self.weight
        return float(np.sum(v)) * self.weight

    def __repr__(self) -> str:
        return f"CircleLattice(n={self.n})"


class CylinderLattice:
    """[0, 1] x S^1 with SBP normal direction and spectral tangential one.

    Site layout is (i_n, i_t); flat site index is i_n * n_t + i_t.
    """

    def __init__(self, n_n: int, n_t: int):
        self.n_n = n_n
        self.n_t = n_t
        self.circle = CircleLattice(n_t)
        self.p_n, self.D_n_1d = sbp21(n_n)
        self.x_n = np.linspace(0.0, 1.0, n_n)
        # per-site quadrature weight: SBP norm times circle weight
        self.weights2d = np.outer(self.p_n, np.full(n_t, self.circle.weight))

    def d_n(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values)
        flat = v.reshape(self.n_n, -1)
        out = apply_matrix(self.D_n_1d, flat)
        return out.reshape(v.shape)

    def d_t(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values)
        rest = v.shape[2:]
        sw = np.moveaxis(v.reshape(self.n_n, self.n_t, -1), 0, 1)
        flat = sw.reshape(self.n_t, -1)
        out = apply_matrix(self.circle.D, flat)
        return np.moveaxis(out.reshape(sw.shape), 0, 1).reshape((self.n_n, self.n_t) + rest)

    def integrate(self, values):
        v = np.asarray(values)
        if v.dtype == object:
            w = self.weights2d
            acc = None
            for i in range(self.n_n):
                for j in range(self.n_t):
                    term = v[i, j] * w[i, j] if isinstance(v[i, j], GradedScalar) else w[i, j] * v[i, j]
                    acc = term if acc is None else acc + term
            return acc
        return float(np.sum(v * self.weights2d))

    def boundary_ring(self, values: np.ndarray, side: int) -> np.ndarray:
        """Restrict to the boundary circle; side 0 is x=0, side 1 is x=1."""
        idx = 0 if side == 0 else self.n_n - 1
        return np.asarray(values)[idx]

    def integrate_boundary(self, ring_values):
        return self.circle.integrate(ring_values)

    def __repr__(self) -> str:
        return f"CylinderLattice(n_n={self.n_n}, n_t={self.n_t})"


class TorusLattice:
    """S^1 x S^1, both directions spectral; axes named n and t."""

    def __init__(self, n_n: int, n_t: int):
        self.n_n = n_n
        self.n_t = n_t
        self.circ_n = CircleLattice(n_n)
        self.circ_t = CircleLattice(n_t)
        self.weight = self.circ_n.weight * self.circ_t.weight
        self.weights2d = np.full((n_n, n_t), self.weight)

    def d_n(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values)
        flat = v.reshape(self.n_n, -1)
        return apply_matrix(self.circ_n.D, flat).reshape(v.shape)

    def d_t(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values)
        rest = v.shape[2:]
        sw = np.moveaxis(v.reshape(self.n_n, self.n_t, -1), 0, 1)
        out = apply_matrix(self.circ_t.D, sw.reshape(self.n_t, -1))
        return np.moveaxis(out.reshape(sw.shape), 0, 1).reshape((self.n_n, self.n_t) + rest)

    def integrate(self, values):
        v = np.asarray(values)
        if v.dtype == object:
            return _total(v) * self.weight
        return float(np.sum(v)) * self.weight

    def __repr__(self) -> str:
        return f"TorusLattice({self.n_n} x {self.n_t})"


@dataclass
class LatticeField:
    """Per-site component vectors, real or graded.

    kind is "even" or "odd" (Grassmann parity of the entries), rank is the
    number of components per site, index records the slot type ("upper",
    "lower" or "scalar").
    """

    lattice: object
    values: np.ndarray
    kind: str = "even"
    rank: int = 1
    index: str = "scalar"

    def __post_init__(self):
        if self.kind not in ("even", "odd"):
            raise ValueError("kind must be 'even' or 'odd'")
        self.values = np.asarray(self.values)

    def d_t(self) -> "LatticeField":
        return LatticeField(self.lattice, self.lattice.d_t(self.values),
                            self.kind, self.rank, self.index)

    def site_component_iter(self):
        v = self.values
        flat = v.reshape(-1, self.rank) if self.rank > 1 or v.ndim > 1 else v.reshape(-1, 1)
        for s in range(flat.shape[0]):
            for c in range(flat.shape[1]):
                yield s, c, flat[s, c]

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["site_index", "component", "monomial", "coefficient"])
            for s, c, val in self.site_component_iter():
                if isinstance(val, GradedScalar):
                    gens = val.algebra.generators
                    for mono, coeff in sorted(val.terms.items()):
                        label = "*".join(repr(gens[i]) for i in mono) or "1"
                        w.writerow([s, c, label, repr(coeff)])
                else:
                    w.writerow([s, c, "1", repr(float(val))])

    @staticmethod
    def from_csv(path: str, lattice, algebra: GrassmannAlgebra | None = None,
                 kind: str = "even", rank: int = 1, index: str = "scalar",
                 shape: tuple | None = None) -> "LatticeField":
        rows = []
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            next(r)
            for row in r:
                rows.append((int(row[0]), int(row[1]), row[2], float(row[3])))
        nsites = 1 + max(s for s, _, _, _ in rows)
        ncomp = 1 + max(c for _, c, _, _ in rows)
        if algebra is None:
            vals = np.zeros((nsites, ncomp))
            for s, c, label, coeff in rows:
                if label != "1":
                    raise ValueError("graded entries need an algebra")
                vals[s, c] = coeff
        else:
            by_label = {repr(g): g for g in algebra.generators}
            vals = np.empty((nsites, ncomp), dtype=object)
            for s in range(nsites):
                for c in range(ncomp):
                    vals[s, c] = algebra.zero()
            for s, c, label, coeff in rows:
                term = algebra.scalar(coeff)
                if label != "1":
                    for name in label.split("*"):
                        term = term * algebra.gen(by_label[name])
                vals[s, c] = vals[s, c] + term
        if shape is not None:
            vals = vals.reshape(shape)
        elif ncomp == 1:
            vals = vals.reshape(nsites)
        return LatticeField(lattice, vals, kind, rank, index)
