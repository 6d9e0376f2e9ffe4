"""Reduction of Polyakov pre-boundary data to the boundary phase space.

Pre-boundary data on the circle: a densitised worldsheet metric theta
(unit negative determinant, two independent components), the embedding X
and its normal jet dnX.  The pre-boundary two-form has a two-dimensional
kernel per site (the theta directions, with a compensating normal-jet
drift); the quotient map is

    pi: (theta, X, dnX) -> (X, J),  J_mu = theta^{n a} d_a X^nu G_{mu nu}

The branch sign chi = sign(theta^{nn}) is recorded per site but not folded
into J; with this convention the basicness identities hold without a
global sign (J_with-branch = chi * J).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .lattice import CircleLattice
from .rps_polyakov import BoundaryState
from .target import TargetMetric

log = logging.getLogger(__name__)

LIGHTLIKE_TOL = 1e-8


class LightlikeStateError(ValueError):
    """Densitised metric with vanishing theta^{nn} (lightlike boundary)."""


def is_lightlike(theta_nt, theta_tt) -> np.ndarray | bool:
    """True where |theta^{nn}| = |theta_tt| falls below the threshold."""
    return np.abs(np.asarray(theta_tt)) < LIGHTLIKE_TOL


def densitise(h: np.ndarray) -> tuple[float, float]:
    """theta components of a single 2x2 metric h: theta = h / sqrt|det h|."""
    det = h[0, 0] * h[1, 1] - h[0, 1] * h[1, 0]
    if det == 0.0:
        raise LightlikeStateError("worldsheet metric is degenerate")
    if det > 0.0:
        raise ValueError("Euclidean worldsheet metric: det theta = -1 container "
                         "only holds Lorentzian signatures")
    s = np.sqrt(abs(det))
    return h[0, 1] / s, h[1, 1] / s


@dataclass
class DensitisedMetric:
    """Per-site densitised metric with det theta = -1.

    Stored components are theta_nt and theta_tt; theta_nn follows from the
    determinant.  theta_tt is checked before the division that produces
    theta_nn, so lightlike input fails with a clear message.
    """

    theta_nt: np.ndarray
    theta_tt: np.ndarray

    def __post_init__(self):
        self.theta_nt = np.atleast_1d(np.asarray(self.theta_nt, dtype=float))
        self.theta_tt = np.atleast_1d(np.asarray(self.theta_tt, dtype=float))
        if np.any(is_lightlike(self.theta_nt, self.theta_tt)):
            raise LightlikeStateError(
                "theta_tt ~ 0: theta^{nn} vanishes, reduction undefined")

    @property
    def theta_nn(self) -> np.ndarray:
        return (self.theta_nt ** 2 - 1.0) / self.theta_tt

    # inverse components for det theta = -1 (Lorentzian branch)
    @property
    def up_nn(self) -> np.ndarray:
        return -self.theta_tt

    @property
    def up_nt(self) -> np.ndarray:
        return self.theta_nt.copy()

    @property
    def up_tt(self) -> np.ndarray:
        return -self.theta_nn

    def lower(self, i: int) -> np.ndarray:
        nn = self.theta_nn[i]
        return np.array([[nn, self.theta_nt[i]], [self.theta_nt[i], self.theta_tt[i]]])

    def upper(self, i: int) -> np.ndarray:
        return np.array([[self.up_nn[i], self.up_nt[i]],
                         [self.up_nt[i], self.up_tt[i]]])

    def chi(self) -> np.ndarray:
        return np.sign(self.up_nn)


@dataclass
class PreBoundaryFields:
    """(theta, X, dnX) on the boundary circle."""

    lattice: CircleLattice
    metric: TargetMetric
    theta: DensitisedMetric
    X: np.ndarray
    dnX: np.ndarray

    def __post_init__(self):
        n, d = self.lattice.n, self.metric.d
        self.X = np.asarray(self.X, dtype=float).reshape(n, d)
        self.dnX = np.asarray(self.dnX, dtype=float).reshape(n, d)

    def dtX(self) -> np.ndarray:
        return self.lattice.d_t(self.X)

    def induced_bilinear(self) -> np.ndarray:
        """gt[i, a, b] = d_a X . d_b X G at site i (a, b in {n, t})."""
        n = self.lattice.n
        dX = np.stack([self.dnX, self.dtX()], axis=1)  # (n, 2, d)
        out = np.empty((n, 2, 2))
        for i in range(n):
            G = self.metric.eval(self.X[i])
            out[i] = dX[i] @ G @ dX[i].T
        return out


# -- tangent packing ----------------------------------------------------------

def tangent_size(state: PreBoundaryFields) -> int:
    n, d = state.lattice.n, state.metric.d
    return n * (2 * d + 2)


def pack_tangent(state: PreBoundaryFields, vX, vdnX, vnt, vtt) -> np.ndarray:
    return np.concatenate([np.ravel(vX), np.ravel(vdnX), np.ravel(vnt), np.ravel(vtt)])


def unpack_tangent(state: PreBoundaryFields, v: np.ndarray):
    n, d = state.lattice.n, state.metric.d
    a = n * d
    return (v[:a].reshape(n, d), v[a:2 * a].reshape(n, d),
            v[2 * a:2 * a + n], v[2 * a + n:])


def theta_tangent_full(state: PreBoundaryFields, vnt, vtt) -> np.ndarray:
    """(n, 2, 2) symmetric theta variation; nn follows from det theta = -1."""
    th = state.theta
    vnn = (2.0 * th.theta_nt / th.theta_tt) * vnt - (th.theta_nn / th.theta_tt) * vtt
    out = np.empty((state.lattice.n, 2, 2))
    out[:, 0, 0] = vnn
    out[:, 0, 1] = out[:, 1, 0] = vnt
    out[:, 1, 1] = vtt
    return out


# -- one-form, differential and two-form --------------------------------------

def one_form(state: PreBoundaryFields, v: np.ndarray) -> float:
    """alpha-check(v) = int v_X^mu J_mu with J from the projection map."""
    vX, _, _, _ = unpack_tangent(state, v)
    J = project(state).J
    return state.lattice.weight * float(np.sum(vX * J))


def d_project(state: PreBoundaryFields, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Differential of the projection: tangent -> (wX, wJ)."""
    vX, vdnX, vnt, vtt = unpack_tangent(state, v)
    n, d = state.lattice.n, state.metric.d
    th = state.theta
    vtheta = theta_tangent_full(state, vnt, vtt)
    dX = np.stack([state.dnX, state.dtX()], axis=1)
    vdX = np.stack([vdnX, state.lattice.d_t(vX)], axis=1)
    wJ = np.empty((n, d))
    for i in range(n):
        G = state.metric.eval(state.X[i])
        dG = state.metric.deriv(state.X[i])
        up = th.upper(i)
        # -theta^{n r} theta^{s b} vtheta_{r s} d_b X^nu G
        coeff = -np.einsum("r,sb,rs,bv->v", up[0], up, vtheta[i], dX[i])
        wJ[i] = (coeff + up[0] @ vdX[i]) @ G
        wJ[i] += np.einsum("b,bv,mvr,r->m", up[0], dX[i], dG, vX[i])
    return vX.copy(), wJ


def two_form_apply(state: PreBoundaryFields, u: np.ndarray, v: np.ndarray) -> float:
    """omega-check(u, v) = omega-boundary(d_pi u, d_pi v); closed and basic."""
    uX, uJ = d_project(state, u)
    vX, vJ = d_project(state, v)
    return state.lattice.weight * float(np.sum(uJ * vX) - np.sum(uX * vJ))


def preboundary_two_form_pullback(state: PreBoundaryFields) -> np.ndarray:
    """M[a, b] = omega-check(e_a, e_b) assembled from d_project columns.

    Slow reference route; agreement with preboundary_two_form is a test
    invariant (the block route never calls the projection differential).
    """
    n, d = state.lattice.n, state.metric.d
    size = tangent_size(state)
    WX = np.zeros((n * d, size))   # (d_pi v)_X rows
    WJ = np.zeros((n * d, size))
    for a in range(size):
        e = np.zeros(size)
        e[a] = 1.0
        wX, wJ = d_project(state, e)
        WX[:, a] = wX.ravel()
        WJ[:, a] = wJ.ravel()
    W = state.lattice.weight
    return W * (WJ.T @ WX - WX.T @ WJ)


def preboundary_two_form(state: PreBoundaryFields) -> np.ndarray:
    """Dense antisymmetric matrix of the pre-boundary two-form.

    Basis order matches pack_tangent: X, dnX, theta_nt, theta_tt.
    """
    n, d = state.lattice.n, state.metric.d
    size = tangent_size(state)
    th = state.theta
    dX = np.stack([state.dnX, state.dtX()], axis=1)
    M = np.zeros((size, size))
    ofs_dn = n * d
    ofs_nt = 2 * n * d
    ofs_tt = 2 * n * d + n
    W = state.lattice.weight
    Dt = state.lattice.D
    for i in range(n):
        G = state.metric.eval(state.X[i])
        dG = state.metric.deriv(state.X[i])
        up = th.upper(i)
        sl = slice(i * d, (i + 1) * d)
        # X-dnX block: theta^{nn} G pairing
        B = up[0, 0] * G
        M[np.ix_(range(ofs_dn + i * d, ofs_dn + (i + 1) * d), range(i * d, (i + 1) * d))] += W * B.T
        M[np.ix_(range(i * d, (i + 1) * d), range(ofs_dn + i * d, ofs_dn + (i + 1) * d))] -= W * B
        # X-theta block via the chained nn component
        for comp, ofs in ((0, ofs_nt), (1, ofs_tt)):
            vnt = 1.0 if comp == 0 else 0.0
            vtt = 1.0 - vnt
            vnn = (2.0 * th.theta_nt[i] / th.theta_tt[i]) * vnt \
                - (th.theta_nn[i] / th.theta_tt[i]) * vtt
            vth = np.array([[vnn, vnt], [vnt, vtt]])
            cvec = -np.einsum("r,sb,rs,bv,mv->m", up[0], up, vth, dX[i], G)
            M[ofs + i, sl] += W * cvec
            M[sl, ofs + i] -= W * cvec
        # X-X blocks: tangential derivative coupling and the dG term
        K = np.einsum("b,bv,mvr->mr", up[0], dX[i], dG)
        M[sl, sl] += W * (K.T - K)
        for j in range(n):
            slj = slice(j * d, (j + 1) * d)
            M[np.ix_(range(j * d, (j + 1) * d), range(i * d, (i + 1) * d))] += \
                W * up[0, 1] * Dt[i, j] * G.T
            M[np.ix_(range(i * d, (i + 1) * d), range(j * d, (j + 1) * d))] -= \
                W * up[0, 1] * Dt[i, j] * G
    return M


# -- kernel, projection, constraints ------------------------------------------

def kernel_basis(state: PreBoundaryFields) -> np.ndarray:
    """2n tangents spanning ker(omega-check): theta directions with jet drift."""
    n, d = state.lattice.n, state.metric.d
    th = state.theta
    dX = np.stack([state.dnX, state.dtX()], axis=1)
    out = np.zeros((2 * n, tangent_size(state)))
    for i in range(n):
        up = th.upper(i)
        for comp in (0, 1):  # theta_nt and theta_tt directions
            vnt = 1.0 if comp == 0 else 0.0
            vtt = 1.0 - vnt
            vnn = (2.0 * th.theta_nt[i] / th.theta_tt[i]) * vnt \
                - (th.theta_nn[i] / th.theta_tt[i]) * vtt
            vth = np.array([[vnn, vnt], [vnt, vtt]])
            drift = np.einsum("r,sb,rs,bv->v", up[0], up, vth, dX[i]) / up[0, 0]
            vX = np.zeros((n, d))
            vdnX = np.zeros((n, d))
            vdnX[i] = drift
            ent = np.zeros(n)
            ett = np.zeros(n)
            if comp == 0:
                ent[i] = 1.0
            else:
                ett[i] = 1.0
            out[2 * i + comp] = pack_tangent(state, vX, vdnX, ent, ett)
    return out


def project(state: PreBoundaryFields) -> BoundaryState:
    """Quotient map; the branch sign chi is logged, not applied."""
    n, d = state.lattice.n, state.metric.d
    th = state.theta
    dX = np.stack([state.dnX, state.dtX()], axis=1)
    J = np.empty((n, d))
    for i in range(n):
        G = state.metric.eval(state.X[i])
        J[i] = (th.upper(i)[0] @ dX[i]) @ G
    chi = th.chi()
    log.debug("projection branch chi: %s", np.unique(chi))
    return BoundaryState(state.lattice, state.metric, state.X.copy(), J)


def f_constraints(state: PreBoundaryFields) -> np.ndarray:
    """f[i, a, b] = theta_ab (theta^{l s}/2) gt_ls - gt_ab; traceless."""
    n = state.lattice.n
    gt = state.induced_bilinear()
    out = np.empty((n, 2, 2))
    for i in range(n):
        lower = state.theta.lower(i)
        upper = state.theta.upper(i)
        half_trace = 0.5 * np.sum(upper * gt[i])
        out[i] = lower * half_trace - gt[i]
    return out


def constraint_surface_state(lattice: CircleLattice, metric: TargetMetric,
                             X: np.ndarray, dnX: np.ndarray) -> PreBoundaryFields:
    """Pre-boundary fields with theta set to the normalized induced metric."""
    probe = PreBoundaryFields(lattice, metric,
                              DensitisedMetric(np.zeros(lattice.n), np.ones(lattice.n)),
                              X, dnX)
    gt = probe.induced_bilinear()
    nt = np.empty(lattice.n)
    tt = np.empty(lattice.n)
    for i in range(lattice.n):
        nt[i], tt[i] = densitise(gt[i])
    return PreBoundaryFields(lattice, metric, DensitisedMetric(nt, tt), X, dnX)


def tau_combination(state: PreBoundaryFields, l_tt: float, l_nt: float,
                    tau_nn: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise tau^{ab} f_ab vs the matching constraint-density combination.

    The tau inversion leaves tau^{nn} free; since f is traceless the
    combination does not depend on it (exposed as a parameter so tests can
    verify).  Returns (route_tau, route_density) per site.
    """
    th = state.theta
    gt = state.induced_bilinear()
    f = f_constraints(state)
    n = state.lattice.n
    route_tau = np.empty(n)
    route_dens = np.empty(n)
    for i in range(n):
        up = th.upper(i)
        tnn = tau_nn
        tnt = tnn * up[0, 1] / up[0, 0] - up[0, 0] * l_nt
        ttt = tnn * up[1, 1] / up[0, 0] - 2.0 * up[0, 1] * l_nt - 2.0 * l_tt
        tau = np.array([[tnn, tnt], [tnt, ttt]])
        route_tau[i] = np.sum(tau * f[i])
        # H and L densities of the projected state, sigma = -1
        JJ = np.einsum("a,b,ab->", up[0], up[0], gt[i])
        XJ = np.einsum("a,a->", up[0], gt[i][:, 1])
        h_dens = gt[i, 1, 1] + JJ
        route_dens[i] = l_tt * h_dens + 2.0 * l_nt * XJ
    return route_tau, route_dens
