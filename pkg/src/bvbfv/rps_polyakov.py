"""Boundary phase space of the Polyakov string on a lattice circle.

States are pairs (X, J): embedding components X^mu (upper index) and
momentum density J_mu (lower index) on the circle.  The canonical two-form
is omega(u, v) = sum_i W_i [u_J . v_X - u_X . v_J]; Hamiltonian vector
fields follow the convention dF(v) = omega(v, X_F), and the bracket carries
the 1/2 that matches the constraint-algebra normalization:

    {A, B} = 1/2 omega(X_A, X_B)

With H_phi = int phi (dtX.dtX - sigma J.J) and L_psi = 2 int psi dtX^mu J_mu
the algebra closes as {H,H} = -sigma L, {H,L} = H, {L,L} = L, each with the
smearing commutator [phi, psi] = dtphi psi - phi dtpsi.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import CircleLattice
from .target import TargetMetric


@dataclass
class BoundaryState:
    """(X, J) on a circle with a target metric; X upper, J lower."""

    lattice: CircleLattice
    metric: TargetMetric
    X: np.ndarray
    J: np.ndarray

    def __post_init__(self):
        n, d = self.lattice.n, self.metric.d
        self.X = np.asarray(self.X, dtype=float).reshape(n, d)
        self.J = np.asarray(self.J, dtype=float).reshape(n, d)

    def dtX(self) -> np.ndarray:
        return self.lattice.d_t(self.X)

    def J_up(self) -> np.ndarray:
        return np.stack([self.metric.raise_index(self.X[i], self.J[i])
                         for i in range(self.lattice.n)])

    def copy(self) -> "BoundaryState":
        return BoundaryState(self.lattice, self.metric, self.X.copy(), self.J.copy())


def smearing_commutator(lat: CircleLattice, phi: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """[phi, psi] = dtphi psi - phi dtpsi."""
    return lat.d_t(phi) * psi - phi * lat.d_t(psi)


def constraint_H(state: BoundaryState, phi: np.ndarray, sigma: float = -1.0) -> float:
    lat = state.lattice
    dX = state.dtX()
    Jup = state.J_up()
    dens = np.empty(lat.n)
    for i in range(lat.n):
        G = state.metric.eval(state.X[i])
        dens[i] = dX[i] @ G @ dX[i] - sigma * (state.J[i] @ Jup[i])
    return lat.integrate(phi * dens)


def constraint_L(state: BoundaryState, psi: np.ndarray) -> float:
    lat = state.lattice
    dens = np.einsum("im,im->i", state.dtX(), state.J)
    return 2.0 * lat.integrate(psi * dens)


def constraint_value(state: BoundaryState, kind: str, smearing: np.ndarray,
                     sigma: float = -1.0) -> float:
    if kind == "H":
        return constraint_H(state, smearing, sigma)
    if kind == "L":
        return constraint_L(state, smearing)
    raise ValueError("kind must be 'H' or 'L'")


def omega(state: BoundaryState, u: tuple, v: tuple) -> float:
    """Canonical two-form on tangents u = (uX, uJ), v = (vX, vJ)."""
    uX, uJ = u
    vX, vJ = v
    w = state.lattice.weight
    return float(w * (np.sum(uJ * vX) - np.sum(uX * vJ)))


def ham_vector(state: BoundaryState, kind: str, smearing: np.ndarray,
               sigma: float = -1.0) -> tuple[np.ndarray, np.ndarray]:
    """Hamiltonian vector field (dX, dJ) of a smeared constraint."""
    lat = state.lattice
    n, d = lat.n, state.metric.d
    phi = np.asarray(smearing, dtype=float)
    dX = state.dtX()
    if kind == "L":
        vX = 2.0 * phi[:, None] * dX
        vJ = 2.0 * lat.d_t(phi[:, None] * state.J)
        return vX, vJ
    if kind != "H":
        raise ValueError("kind must be 'H' or 'L'")
    Jup = state.J_up()
    vX = -2.0 * sigma * phi[:, None] * Jup
    lowered = np.empty((n, d))
    correction = np.empty((n, d))
    for i in range(n):
        G = state.metric.eval(state.X[i])
        dG = state.metric.deriv(state.X[i])
        lowered[i] = G @ dX[i]
        # [dtX^m dtX^n + sigma J^m J^n] dG_mn/dX^rho
        quad = np.outer(dX[i], dX[i]) + sigma * np.outer(Jup[i], Jup[i])
        correction[i] = np.einsum("mn,mnr->r", quad, dG)
    vJ = 2.0 * lat.d_t(phi[:, None] * lowered) - phi[:, None] * correction
    return vX, vJ


def poisson(state: BoundaryState, a: tuple, b: tuple, sigma: float = -1.0) -> float:
    """{A, B} evaluated at the state; a, b are (kind, smearing) pairs."""
    Xa = ham_vector(state, a[0], a[1], sigma)
    Xb = ham_vector(state, b[0], b[1], sigma)
    return 0.5 * omega(state, Xa, Xb)


def closure_residuals(state: BoundaryState, rng: np.random.Generator,
                      n_pairs: int = 10, sigma: float = -1.0,
                      max_mode: int | None = None) -> dict[str, float]:
    """Max residuals of the three closure identities over random smearings.

    Smearing modes default to n/8: with state modes at n/4, every product
    appearing in the closure identities stays below the exact-quadrature
    bound, so the flat-target residual is at rounding level.
    """
    lat = state.lattice
    kmax = max_mode if max_mode is not None else lat.n // 8

    def rand_smearing():
        f = np.full(lat.n, rng.standard_normal())
        for k in range(1, kmax + 1):
            f = f + rng.standard_normal() * np.cos(k * lat.points)
            f = f + rng.standard_normal() * np.sin(k * lat.points)
        return f

    res = {"hh_to_l": 0.0, "hl_to_h": 0.0, "ll_to_l": 0.0}
    for _ in range(n_pairs):
        phi, psi = rand_smearing(), rand_smearing()
        comm = smearing_commutator(lat, phi, psi)
        r = poisson(state, ("H", phi), ("H", psi), sigma) \
            + sigma * constraint_L(state, comm)
        res["hh_to_l"] = max(res["hh_to_l"], abs(r))
        r = poisson(state, ("H", phi), ("L", psi), sigma) \
            - constraint_H(state, comm, sigma)
        res["hl_to_h"] = max(res["hl_to_h"], abs(r))
        r = poisson(state, ("L", phi), ("L", psi), sigma) \
            - constraint_L(state, comm)
        res["ll_to_l"] = max(res["ll_to_l"], abs(r))
    return res
