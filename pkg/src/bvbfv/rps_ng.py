"""Square-root (induced-metric) boundary theory and its BV freeness analysis.

The second-order boundary data is just (X, dnX); the momentum map

    J_mu = sqrt|g| g^{n a} d_a X^nu G_{mu nu},   g_ab = d_a X . d_b X G

lands on the constraint surface of the first-order boundary phase space:
J . dtX = 0 and J . J + dtX . dtX = 0 hold as algebraic identities.  The
branch sign chi = sign(g^{nn}) is recorded but not folded into J.

The pre-boundary two-form pulled back along this map has a four-parameter
kernel per site: two jet rescalings along the tangent plane (beta) and two
reparametrization directions (alpha) whose jet compensation sticks out of
the tangent plane through the projector P = 1 - dX g^-1 dX.

The BV extension appends the ghost pair zeta^a and the antifields.  The
odd part of the boundary one-form, X†_mu zeta^n dX^mu - zeta†_a zeta^n
dzeta^a, couples ghost directions into the kernel equations; solving them
over the Grassmann ring shows the kernel module is not free (the alpha
directions survive only with zeta^n-annihilating coefficients), in
contrast to the first-order theory, whose kernel module is free.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lstsq, null_space

from .forms import (Directional, body_kernel_dimension, ring_system_nullspace,
                    ring_vector_from_coeffs)
from .graded import GradedScalar, GrassmannAlgebra
from .lattice import CircleLattice
from .rps_polyakov import BoundaryState, ham_vector
from .target import TargetMetric, conformal

log = logging.getLogger(__name__)

GNN_TOL = 1e-8


class DegenerateInducedMetricError(ValueError):
    """Induced worldsheet metric degenerate, Euclidean, or g^{nn} ~ 0."""


@dataclass
class NGPreBoundaryFields:
    """(X, dnX) on the boundary circle with a Lorentzian induced metric."""

    lattice: CircleLattice
    metric: TargetMetric
    X: np.ndarray
    dnX: np.ndarray

    def __post_init__(self):
        n, d = self.lattice.n, self.metric.d
        self.X = np.asarray(self.X, dtype=float).reshape(n, d)
        self.dnX = np.asarray(self.dnX, dtype=float).reshape(n, d)
        g = induced_metric(self)
        det = g[:, 0, 0] * g[:, 1, 1] - g[:, 0, 1] ** 2
        if np.any(det >= 0.0):
            raise DegenerateInducedMetricError(
                "induced metric must be Lorentzian at every site")
        gnn_up = g[:, 1, 1] / det
        if np.any(np.abs(gnn_up) < GNN_TOL):
            raise DegenerateInducedMetricError("g^{nn} vanishes at a site")

    def dtX(self) -> np.ndarray:
        return self.lattice.d_t(self.X)


def induced_metric(state: NGPreBoundaryFields) -> np.ndarray:
    """g[i, a, b] = d_a X . d_b X G at site i (a, b in {n, t})."""
    n = state.lattice.n
    dX = np.stack([state.dnX, state.lattice.d_t(state.X)], axis=1)
    out = np.empty((n, 2, 2))
    for i in range(n):
        G = state.metric.eval(state.X[i])
        out[i] = dX[i] @ G @ dX[i].T
    return out


class _Geometry:
    """Per-site induced-metric data shared by the assembly routines."""

    def __init__(self, state: NGPreBoundaryFields):
        n = state.lattice.n
        self.dX = np.stack([state.dnX, state.lattice.d_t(state.X)], axis=1)
        self.g = induced_metric(state)
        self.det = self.g[:, 0, 0] * self.g[:, 1, 1] - self.g[:, 0, 1] ** 2
        self.s = np.sqrt(-self.det)
        self.gup = np.empty((n, 2, 2))
        for i in range(n):
            self.gup[i] = np.linalg.inv(self.g[i])


def ng_chi(state: NGPreBoundaryFields) -> np.ndarray:
    geo = _Geometry(state)
    return np.sign(geo.gup[:, 0, 0])


def partial_reduce(state: NGPreBoundaryFields) -> BoundaryState:
    """Momentum map onto the constraint surface, per-site branch sign applied."""
    n, d = state.lattice.n, state.metric.d
    geo = _Geometry(state)
    chi = np.sign(geo.gup[:, 0, 0])
    J = np.empty((n, d))
    for i in range(n):
        G = state.metric.eval(state.X[i])
        J[i] = chi[i] * geo.s[i] * (geo.gup[i][0] @ geo.dX[i]) @ G
    log.debug("partial reduction branch chi: %s", np.unique(chi))
    return BoundaryState(state.lattice, state.metric, state.X.copy(), J)


# -- tangents -----------------------------------------------------------------

def ng_tangent_size(state: NGPreBoundaryFields) -> int:
    return 2 * state.lattice.n * state.metric.d


def ng_pack(state, vX, vdnX) -> np.ndarray:
    return np.concatenate([np.ravel(vX), np.ravel(vdnX)])


def ng_unpack(state, v):
    n, d = state.lattice.n, state.metric.d
    return v[:n * d].reshape(n, d), v[n * d:].reshape(n, d)


def d_partial(state: NGPreBoundaryFields, v: np.ndarray):
    """Differential of partial_reduce: packed tangent -> (wX, wJ)."""
    vX, vdn = ng_unpack(state, v)
    n, d = state.lattice.n, state.metric.d
    geo = _Geometry(state)
    dtvX = state.lattice.d_t(vX)
    wJ = np.empty((n, d))
    for i in range(n):
        G = state.metric.eval(state.X[i])
        dG = state.metric.deriv(state.X[i])
        dX = geo.dX[i]
        dXl = dX @ G
        vdX = np.stack([vdn[i], dtvX[i]])
        dg = dXl @ vdX.T + vdX @ dXl.T \
            + np.einsum("ap,bq,pqr,r->ab", dX, dX, dG, vX[i])
        s, gup = geo.s[i], geo.gup[i]
        ds = 0.5 * s * np.sum(gup * dg)
        dgup_n = -gup[0] @ dg @ gup
        chi = np.sign(gup[0, 0])
        wJ[i] = chi * (ds * (gup[0] @ dXl) + s * (dgup_n @ dXl)
                       + s * ((gup[0] @ vdX) @ G)
                       + s * np.einsum("a,ap,mpr,r->m", gup[0], dX, dG, vX[i]))
    return vX.copy(), wJ


def ng_one_form(state: NGPreBoundaryFields, v: np.ndarray) -> float:
    vX, _ = ng_unpack(state, v)
    return state.lattice.weight * float(np.sum(vX * partial_reduce(state).J))


def ng_two_form_apply(state, u, v) -> float:
    uX, uJ = d_partial(state, u)
    vX, vJ = d_partial(state, v)
    return state.lattice.weight * float(np.sum(uJ * vX) - np.sum(uX * vJ))


def ng_two_form_pullback(state: NGPreBoundaryFields) -> np.ndarray:
    """Reference assembly from d_partial columns."""
    n, d = state.lattice.n, state.metric.d
    size = ng_tangent_size(state)
    WX = np.zeros((n * d, size))
    WJ = np.zeros((n * d, size))
    for a in range(size):
        e = np.zeros(size)
        e[a] = 1.0
        wX, wJ = d_partial(state, e)
        WX[:, a] = wX.ravel()
        WJ[:, a] = wJ.ravel()
    W = state.lattice.weight
    return W * (WJ.T @ WX - WX.T @ WJ)


def ng_two_form(state: NGPreBoundaryFields) -> np.ndarray:
    """Dense antisymmetric matrix on packed (X, dnX) tangents.

    Jet blocks carry (g^{l r} g^{n a} - g^{n l} g^{a r} - g^{n r} g^{a l})
    dX dX + g^{n r} G contractions; the metric-derivative terms produce the
    antisymmetrized X-X block.  Vanishes against the four-parameter kernel.
    """
    n, d = state.lattice.n, state.metric.d
    size = ng_tangent_size(state)
    geo = _Geometry(state)
    W = state.lattice.weight
    Dt = state.lattice.D
    M = np.zeros((size, size))
    ofs = n * d
    for i in range(n):
        G = state.metric.eval(state.X[i])
        dG = state.metric.deriv(state.X[i])
        dX = geo.dX[i]
        dXl = dX @ G
        s, gup = np.sign(geo.gup[i, 0, 0]) * geo.s[i], geo.gup[i]
        blocks = []
        for rho in (0, 1):
            A = np.einsum("l,a->la", gup[:, rho], gup[0]) \
                - np.einsum("l,a->la", gup[0], gup[:, rho]) \
                - gup[0, rho] * gup
            blk = s * (np.einsum("la,lv,am->mv", A, dXl, dXl) + gup[0, rho] * G)
            blocks.append(blk)
        Bn, Bt = blocks
        sl = slice(i * d, (i + 1) * d)
        M[ofs + i * d:ofs + (i + 1) * d, sl] += W * Bn.T
        M[sl, ofs + i * d:ofs + (i + 1) * d] -= W * Bn
        for j in range(n):
            slj = slice(j * d, (j + 1) * d)
            M[slj, sl] += W * Dt[i, j] * Bt.T
            M[sl, slj] -= W * Dt[i, j] * Bt
        delta = np.einsum("lp,tq,pqs->lts", dX, dX, dG)
        jlow = gup[0] @ dXl
        CX = 0.5 * s * np.outer(jlow, np.einsum("lt,lts->s", gup, delta)) \
            - s * np.einsum("l,at,lts,am->ms", gup[0], gup, delta, dXl) \
            + s * np.einsum("a,ap,mps->ms", gup[0], dX, dG)
        M[sl, sl] += W * (CX.T - CX)
    return M


# -- kernel -------------------------------------------------------------------

def ng_kernel_tangent(state: NGPreBoundaryFields, alpha_n, alpha_t,
                      beta_n, beta_t, sigma: float = -1.0) -> np.ndarray:
    """Kernel tangent from per-site parameters.

    beta shifts the jet inside the tangent plane (J blind to them); alpha
    moves X along the worldsheet directions, with the jet correction taken
    off the tangent plane so the image tangent is the matching combination
    of constraint Hamiltonian vector fields.
    """
    n, d = state.lattice.n, state.metric.d
    geo = _Geometry(state)
    dtX = geo.dX[:, 1]
    alpha_n = np.broadcast_to(np.asarray(alpha_n, dtype=float), (n,))
    alpha_t = np.broadcast_to(np.asarray(alpha_t, dtype=float), (n,))
    beta_n = np.broadcast_to(np.asarray(beta_n, dtype=float), (n,))
    beta_t = np.broadcast_to(np.asarray(beta_t, dtype=float), (n,))
    vX = alpha_n[:, None] * state.dnX + alpha_t[:, None] * dtX
    vdn = beta_n[:, None] * state.dnX + beta_t[:, None] * dtX
    if np.any(alpha_n != 0.0) or np.any(alpha_t != 0.0):
        chi = np.sign(geo.gup[:, 0, 0])
        sgnn = chi * geo.s * geo.gup[:, 0, 0]
        phi = -sigma * alpha_n / (2.0 * sgnn)
        psi = 0.5 * (alpha_t - alpha_n * geo.gup[:, 0, 1] / geo.gup[:, 0, 0])
        b = partial_reduce(state)
        _, wJ_h = ham_vector(b, "H", phi, sigma)
        _, wJ_l = ham_vector(b, "L", psi)
        _, wJ_0 = d_partial(state, ng_pack(state, vX, np.zeros((n, d))))
        resid = wJ_h + wJ_l - wJ_0
        for i in range(n):
            G = state.metric.eval(state.X[i])
            perp = np.eye(d) - geo.dX[i].T @ geo.gup[i] @ (geo.dX[i] @ G)
            vdn[i] += perp @ np.linalg.solve(G, resid[i]) / sgnn[i]
    return ng_pack(state, vX, vdn)


def ng_kernel_basis(state: NGPreBoundaryFields, sigma: float = -1.0) -> np.ndarray:
    """4 kernel tangents per site: alpha_n, alpha_t, beta_n, beta_t units."""
    n = state.lattice.n
    out = np.zeros((4 * n, ng_tangent_size(state)))
    zero = np.zeros(n)
    for i in range(n):
        for c in range(4):
            params = [zero.copy() for _ in range(4)]
            params[c][i] = 1.0
            out[4 * i + c] = ng_kernel_tangent(state, *params, sigma=sigma)
    return out


# -- jet normalization flow ---------------------------------------------------

def normalized_jet(state: NGPreBoundaryFields) -> np.ndarray:
    """chi sqrt|g| g^{n a} d_a X: the jet with unit normal normalization."""
    geo = _Geometry(state)
    chi = np.sign(geo.gup[:, 0, 0])
    return (chi * geo.s)[:, None] * np.einsum("ia,iam->im", geo.gup[:, 0], geo.dX)


def beta_flow_parameters(state: NGPreBoundaryFields):
    """Frozen kernel-flow coefficients whose time-one map normalizes the jet.

    beta_n = log c with c = chi sqrt|g| g^{nn} > 0; beta_t carries the
    log c / (c - 1) factor (continuously 1 at c = 1).
    """
    geo = _Geometry(state)
    chi = np.sign(geo.gup[:, 0, 0])
    c = chi * geo.s * geo.gup[:, 0, 0]
    q = chi * geo.s * geo.gup[:, 0, 1]
    beta_n = np.log(c)
    ratio = np.ones_like(c)
    mask = np.abs(c - 1.0) >= 1e-12
    ratio[mask] = beta_n[mask] / (c[mask] - 1.0)
    return beta_n, ratio * q


def beta_flow_endpoint(state: NGPreBoundaryFields) -> np.ndarray:
    """Closed-form time-one point of the frozen beta flow of the jet."""
    beta_n, beta_t = beta_flow_parameters(state)
    c = np.exp(beta_n)
    fac = np.ones_like(beta_n)
    mask = np.abs(beta_n) >= 1e-12
    fac[mask] = (c[mask] - 1.0) / beta_n[mask]
    dtX = state.lattice.d_t(state.X)
    return c[:, None] * state.dnX + (fac * beta_t)[:, None] * dtX


# -- commuting square ---------------------------------------------------------

def constraint_jacobian(b: BoundaryState, sigma: float = -1.0) -> np.ndarray:
    """Linearization of (J . dtX, J . J - sigma dtX . dtX) per site."""
    n, d = b.lattice.n, b.metric.d
    Dt = b.lattice.D
    dX = b.dtX()
    A = np.zeros((2 * n, 2 * n * d))
    ofs = n * d
    for i in range(n):
        G = b.metric.eval(b.X[i])
        dG = b.metric.deriv(b.X[i])
        Ginv = np.linalg.inv(G)
        Jup = Ginv @ b.J[i]
        for j in range(n):
            A[2 * i, j * d:(j + 1) * d] += b.J[i] * Dt[i, j]
            A[2 * i + 1, j * d:(j + 1) * d] += -sigma * 2.0 * (G @ dX[i]) * Dt[i, j]
        A[2 * i, ofs + i * d:ofs + (i + 1) * d] = dX[i]
        A[2 * i + 1, ofs + i * d:ofs + (i + 1) * d] = 2.0 * Jup
        dginv = -np.einsum("mp,pqr,qn->mnr", Ginv, dG, Ginv)
        A[2 * i + 1, i * d:(i + 1) * d] += np.einsum("m,n,mnr->r", b.J[i], b.J[i], dginv) \
            - sigma * np.einsum("m,n,mnr->r", dX[i], dX[i], dG)
    return A


def check_diagram(state: NGPreBoundaryFields, rng: np.random.Generator,
                  n_pairs: int = 10, sigma: float = -1.0) -> dict:
    """Residuals of the commuting square.

    (i) the block two-form equals the pullback of the canonical boundary
    form along the reduction map, on random tangents; (ii) every
    numerically degenerate direction of the partial form pushes forward
    into the span of the constraint Hamiltonian vector fields on the
    image surface.

    The degenerate directions that push to zero are reported separately
    (vertical_dim); they are the fibre directions of the reduction.  The
    band_tangency diagnostic smears the constraint linearization against
    the Hamiltonian fields with Fourier modes <= n//8: site-delta
    smearings are not alias-free under spectral differentiation, so
    first-classness is only visible band-limited on the lattice.
    """
    n, d = state.lattice.n, state.metric.d
    M = ng_two_form(state)
    size = ng_tangent_size(state)
    pullback = 0.0
    for _ in range(n_pairs):
        u = rng.normal(size=size)
        v = rng.normal(size=size)
        pullback = max(pullback, abs(float(u @ M @ v) - ng_two_form_apply(state, u, v)))
    b = partial_reduce(state)
    A = constraint_jacobian(b, sigma)
    ham = np.zeros((2 * n * d, 2 * n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        for c, kind in enumerate(("H", "L")):
            vX, vJ = ham_vector(b, kind, e, sigma)
            ham[:, 2 * i + c] = np.concatenate([vX.ravel(), vJ.ravel()])
    null_M = null_space(M, rcond=1e-9)
    span_residual = 0.0
    vertical = 0
    for col in null_M.T:
        vX, wJ = d_partial(state, col)
        w = np.concatenate([vX.ravel(), wJ.ravel()])
        norm = float(np.linalg.norm(w))
        if norm < 1e-10:
            vertical += 1
            continue
        sol, _, _, _ = lstsq(ham, w)
        span_residual = max(span_residual,
                            float(np.max(np.abs(ham @ sol - w))) / norm)
    kband = max(1, n // 8)
    t = b.lattice.points
    cols = [np.ones(n)]
    for k in range(1, kband + 1):
        cols.append(np.cos(k * t))
        cols.append(np.sin(k * t))
    phi = np.stack(cols, axis=1)
    ham_band = ham @ np.kron(phi, np.eye(2))
    band_tangency = float(np.max(np.abs(
        np.vstack([phi.T @ A[0::2], phi.T @ A[1::2]]) @ ham_band)))
    return {"pullback": pullback,
            "kernel_dim": null_M.shape[1],
            "vertical_dim": vertical,
            "span_residual": span_residual,
            "band_tangency": band_tangency}


# -- BV extension -------------------------------------------------------------

@dataclass
class NGBVPreBoundary:
    """Ghost/antifield extension: zeta^a (+1), zeta†_a (-1), X†_mu (-1).

    Even fields are kept real; odd fields are object arrays over a shared
    Grassmann algebra.
    """

    lattice: CircleLattice
    metric: TargetMetric
    algebra: GrassmannAlgebra
    X: np.ndarray
    dnX: np.ndarray
    zeta: np.ndarray
    zeta_dag: np.ndarray
    x_dag: np.ndarray

    def __post_init__(self):
        n, d = self.lattice.n, self.metric.d
        self.X = np.asarray(self.X, dtype=float).reshape(n, d)
        self.dnX = np.asarray(self.dnX, dtype=float).reshape(n, d)
        for name in ("zeta", "zeta_dag", "x_dag"):
            arr = np.asarray(getattr(self, name))
            if arr.dtype != object:
                raise TypeError(f"{name} must be an object array of GradedScalars")
        self.zeta = self.zeta.reshape(n, 2)
        self.zeta_dag = self.zeta_dag.reshape(n, 2)
        self.x_dag = self.x_dag.reshape(n, d)

    def classical_reduct(self) -> NGPreBoundaryFields:
        return NGPreBoundaryFields(self.lattice, self.metric, self.X, self.dnX)


def ng_bv_size(state: NGBVPreBoundary) -> int:
    n, d = state.lattice.n, state.metric.d
    return n * (3 * d + 4)


def ng_bv_layout(state: NGBVPreBoundary):
    """Offsets of (X, dnX, zeta, zeta_dag, x_dag) and the parity table.

    zeta and x_dag are odd; zeta_dag is even (antifield of an odd ghost,
    ghost number -2), as are the classical X and dnX slots.
    """
    n, d = state.lattice.n, state.metric.d
    ofs = {"X": 0, "dnX": n * d, "zeta": 2 * n * d,
           "zeta_dag": 2 * n * d + 2 * n, "x_dag": 2 * n * d + 4 * n}
    parity = np.zeros(n * (3 * d + 4), dtype=int)
    parity[ofs["zeta"]:ofs["zeta_dag"]] = 1
    parity[ofs["x_dag"]:] = 1
    return ofs, parity


def _graded_momentum(state: NGBVPreBoundary) -> np.ndarray:
    """Momentum covector over the ring (X, dnX may carry nilpotent souls)."""
    n, d = state.lattice.n, state.metric.d
    alg = state.algebra
    dtX = state.lattice.d_t(np.asarray(state.X))
    J = np.empty((n, d), dtype=object)
    for i in range(n):
        G = state.metric.eval(np.asarray(state.X)[i])
        if np.asarray(G).dtype != object:
            Gm = np.empty((d, d), dtype=object)
            for p in range(d):
                for q in range(d):
                    Gm[p, q] = alg.scalar(float(G[p, q]))
            G = Gm
        dXn = np.asarray(state.dnX)[i]
        dXt = dtX[i]

        def pair(u, v):
            acc = alg.zero()
            for p in range(d):
                for q in range(d):
                    acc = acc + u[p] * G[p, q] * v[q]
            return acc

        g_nn, g_nt, g_tt = pair(dXn, dXn), pair(dXn, dXt), pair(dXt, dXt)
        det = g_nn * g_tt - g_nt * g_nt
        s = (-1.0 * det).sqrt()
        detinv = det.inverse()
        up_nn = g_tt * detinv
        up_nt = -1.0 * g_nt * detinv
        chi = 1.0 if up_nn.body() > 0.0 else -1.0
        for mu in range(d):
            acc = alg.zero()
            for nu in range(d):
                acc = acc + (up_nn * dXn[nu] + up_nt * dXt[nu]) * G[nu, mu]
            J[i, mu] = chi * (s * acc)
    return J


def ng_bv_one_form(state: NGBVPreBoundary, v: np.ndarray) -> GradedScalar:
    """alpha(v) = sum W [(J_mu + X†_mu zeta^n) v_X^mu - zeta†_a zeta^n v_zeta^a]."""
    n, d = state.lattice.n, state.metric.d
    ofs, _ = ng_bv_layout(state)
    alg = state.algebra
    if np.asarray(state.X).dtype == object or np.asarray(state.dnX).dtype == object:
        J = _graded_momentum(state)
    else:
        J = partial_reduce(state.classical_reduct()).J
    W = state.lattice.weight
    acc = alg.zero()
    for i in range(n):
        for mu in range(d):
            Jval = J[i, mu] if isinstance(J[i, mu], GradedScalar) else alg.scalar(float(J[i, mu]))
            coeff = Jval + state.x_dag[i, mu] * state.zeta[i, 0]
            acc = acc + coeff * v[ofs["X"] + i * d + mu]
        for a in range(2):
            acc = acc - state.zeta_dag[i, a] * state.zeta[i, 0] * v[ofs["zeta"] + 2 * i + a]
    return W * acc


def ng_bv_blocks(state: NGBVPreBoundary, u_parity: int, v_parity: int | None = None):
    """Normal-form coefficients c_ab of the BV two-form: sum c_ab u_a v_b.

    With v_parity None each column b uses the parity that makes a real unit
    covector at b homogeneous (solver rows); a fixed v_parity gives the
    evaluator for definite-parity tangent pairs.
    """
    n, d = state.lattice.n, state.metric.d
    ofs, parity = ng_bv_layout(state)
    W = state.lattice.weight
    e = -1.0 if u_parity else 1.0
    # columns at odd fields carry covector parity 1 in solver mode
    t_odd = 1 if v_parity is None else v_parity
    st = (-1.0) ** (u_parity + t_odd)
    blocks: dict = {}

    def add(a, b, coeff):
        key = (a, b)
        if key in blocks:
            blocks[key] = blocks[key] + coeff
        else:
            blocks[key] = coeff

    M_cl = ng_two_form(state.classical_reduct())
    for a, b in np.argwhere(M_cl != 0.0):
        add(int(a), int(b), M_cl[a, b])
    for i in range(n):
        zn = state.zeta[i, 0]
        azn = ofs["zeta"] + 2 * i
        for mu in range(d):
            aX = ofs["X"] + i * d + mu
            aXd = ofs["x_dag"] + i * d + mu
            add(aXd, aX, (-e * W) * zn)
            add(aX, aXd, (st * W) * zn)
            add(azn, aX, (e * W) * state.x_dag[i, mu])
            add(aX, azn, (-st * W) * state.x_dag[i, mu])
        for a in range(2):
            az = ofs["zeta"] + 2 * i + a
            azd = ofs["zeta_dag"] + 2 * i + a
            add(azd, az, (-e * W) * zn)
            add(az, azd, W * zn)
            add(azn, az, (-W) * state.zeta_dag[i, a])
            add(az, azn, (-st * W) * state.zeta_dag[i, a])
    return blocks, parity


def ng_bv_two_form(state: NGBVPreBoundary, u: np.ndarray, v: np.ndarray,
                   u_parity: int, v_parity: int) -> GradedScalar:
    """Evaluate the BV two-form on definite-parity ring-valued tangents."""
    blocks, _ = ng_bv_blocks(state, u_parity, v_parity)
    alg = state.algebra
    acc = alg.zero()
    for (a, b), coeff in blocks.items():
        c = coeff if isinstance(coeff, GradedScalar) else alg.scalar(float(coeff))
        acc = acc + c * u[a] * v[b]
    return acc


def ng_bv_two_form_mechanical(state: NGBVPreBoundary, u: np.ndarray, v: np.ndarray,
                              u_parity: int, v_parity: int) -> GradedScalar:
    """Same pairing through nilpotent shifts of the one-form (oracle route)."""
    alg = state.algebra
    direc = Directional(alg)
    fields = {"X": state.X, "dnX": state.dnX, "zeta": state.zeta,
              "zeta_dag": state.zeta_dag, "x_dag": state.x_dag}
    ofs, _ = ng_bv_layout(state)
    n, d = state.lattice.n, state.metric.d

    def unpack_tan(w):
        return {"X": w[ofs["X"]:ofs["dnX"]].reshape(n, d),
                "dnX": w[ofs["dnX"]:ofs["zeta"]].reshape(n, d),
                "zeta": w[ofs["zeta"]:ofs["zeta_dag"]].reshape(n, 2),
                "zeta_dag": w[ofs["zeta_dag"]:ofs["x_dag"]].reshape(n, 2),
                "x_dag": w[ofs["x_dag"]:].reshape(n, d)}

    def evaluator_for(w):
        def evaluator(f):
            st = _bv_state_from_fields(state, f)
            return ng_bv_one_form(st, w)
        return evaluator

    d_u = direc.derivative(evaluator_for(v), fields, unpack_tan(u), u_parity)
    d_v = direc.derivative(evaluator_for(u), fields, unpack_tan(v), v_parity)
    sign = -((-1.0) ** (u_parity * v_parity))
    return d_u + sign * d_v


def _bv_state_from_fields(template: NGBVPreBoundary, f: dict) -> "NGBVPreBoundary":
    st = object.__new__(NGBVPreBoundary)
    st.lattice = template.lattice
    st.metric = template.metric
    st.algebra = template.algebra
    st.X = f["X"]
    st.dnX = f["dnX"]
    st.zeta = np.asarray(f["zeta"], dtype=object)
    st.zeta_dag = np.asarray(f["zeta_dag"], dtype=object)
    st.x_dag = np.asarray(f["x_dag"], dtype=object)
    return st


# -- freeness analysis --------------------------------------------------------

def ng_nogo_sample(state: NGBVPreBoundary, rcond: float = 1e-9) -> dict:
    """Kernel-module data of the BV two-form at one Grassmann-valued state.

    The kernel of the row system is computed separately for even and odd
    tangent parity; the module is free iff the total real dimension equals
    (body kernel dimension) * 2^k.
    """
    alg = state.algebra
    size = ng_bv_size(state)
    ofs, parity = ng_bv_layout(state)
    dims = {}
    bases = {}
    for par in (0, 1):
        # kernel over the ring means annihilating covectors of both parities
        pair = [ng_bv_blocks(state, par, 0)[0], ng_bv_blocks(state, par, 1)[0]]
        cols, basis = ring_system_nullspace(pair, size, parity, par, alg, rcond)
        dims[par] = basis.shape[1]
        bases[par] = (cols, basis)
    body_rank = body_kernel_dimension(ng_bv_blocks(state, 0, 0)[0], size, rcond)
    total = dims[0] + dims[1]
    expected = body_rank * 2 ** alg.ngens
    x_rank = 0
    for par in (0, 1):
        cols, basis = bases[par]
        rows = [r for r, (a, _) in enumerate(cols) if ofs["X"] <= a < ofs["dnX"]]
        if rows and basis.size:
            x_rank += int(np.linalg.matrix_rank(basis[rows], tol=1e-8))
    return {"dim": total, "dim_even": dims[0], "dim_odd": dims[1],
            "body_rank": body_rank, "expected_free": expected,
            "free": bool(total == expected), "x_support_rank": x_rank,
            "bases": bases}


def ng_bv_row_residual(state: NGBVPreBoundary, u: np.ndarray, u_parity: int) -> float:
    """Max coefficient over all contraction rows sum_a c_ab u_a (both covector parities)."""
    alg = state.algebra
    worst = 0.0
    for v_par in (0, 1):
        blocks, _ = ng_bv_blocks(state, u_parity, v_par)
        rows: dict = {}
        for (a, b), coeff in blocks.items():
            c = coeff if isinstance(coeff, GradedScalar) else alg.scalar(float(coeff))
            rows[b] = rows.get(b, alg.zero()) + c * u[a]
        worst = max(worst, max((val.max_abs_coeff() for val in rows.values()),
                               default=0.0))
    return worst


def ng_torsion_exhibit(state: NGBVPreBoundary, sample: dict | None = None,
                       rcond: float = 1e-9) -> dict:
    """Pick a kernel element with X-support and certify it is torsion.

    Returns the element, the residual of its contraction with the two-form,
    and the annihilation residual max |zeta^n_i v_X^{i mu}| showing the
    X-coefficients are zero divisors (so the module cannot be free on them).
    """
    if sample is None:
        sample = ng_nogo_sample(state, rcond)
    alg = state.algebra
    size = ng_bv_size(state)
    ofs, _ = ng_bv_layout(state)
    n, d = state.lattice.n, state.metric.d
    best = None
    for par in (0, 1):
        cols, basis = sample["bases"][par]
        rows = [r for r, (a, _) in enumerate(cols) if ofs["X"] <= a < ofs["dnX"]]
        for j in range(basis.shape[1]):
            weight = float(np.max(np.abs(basis[rows, j]))) if rows else 0.0
            if best is None or weight > best[0]:
                best = (weight, par, cols, basis[:, j])
    weight, par, cols, coeffs = best
    vec = ring_vector_from_coeffs(cols, coeffs, size, alg)
    annihilation = 0.0
    for i in range(n):
        for mu in range(d):
            prod = state.zeta[i, 0] * vec[ofs["X"] + i * d + mu]
            annihilation = max(annihilation, prod.max_abs_coeff())
    return {"vector": vec, "parity": par, "x_weight": weight,
            "row_residual": ng_bv_row_residual(state, vec, par),
            "annihilation": annihilation}


def ng_bv_random_state(rng: np.random.Generator, lattice: CircleLattice,
                       metric: TargetMetric,
                       algebra: GrassmannAlgebra | None = None) -> NGBVPreBoundary:
    """Random ghost-graded state: zeta along the +1 generators, x_dag along
    the -1 generators, zeta_dag along even products of two -1 generators."""
    n, d = lattice.n, metric.d
    if d < 3:
        raise ValueError("random states need d >= 3 (spatial circle embedding)")
    if algebra is None:
        algebra = GrassmannAlgebra()
        algebra.odd_batch(2, "z", 1)
        algebra.odd_batch(3, "d", -1)
    gens = [algebra.gen(g) for g in algebra.generators[:5]]
    ghosts, duals = gens[:2], gens[2:5]
    pairs = [duals[0] * duals[1], duals[0] * duals[2], duals[1] * duals[2]]
    for _ in range(80):
        try:
            classical = ng_random_state(rng, lattice, metric)
        except DegenerateInducedMetricError:
            continue
        X, dnX = classical.X, classical.dnX
        break
    else:
        raise RuntimeError("could not sample a valid state")

    def coeff():
        return float(rng.uniform(0.5, 1.5) * rng.choice([-1.0, 1.0]))

    def combo(basis):
        out = coeff() * basis[0]
        for b in basis[1:]:
            out = out + coeff() * b
        return out

    zeta = np.empty((n, 2), dtype=object)
    zeta_dag = np.empty((n, 2), dtype=object)
    x_dag = np.empty((n, d), dtype=object)
    for i in range(n):
        for a in range(2):
            zeta[i, a] = combo(ghosts)
            zeta_dag[i, a] = combo(pairs)
        for mu in range(d):
            x_dag[i, mu] = combo(duals)
    return NGBVPreBoundary(lattice, metric, algebra, X, dnX, zeta, zeta_dag, x_dag)


def _trig_field(rng: np.random.Generator, n: int, d: int, kmax: int,
                amp: float = 1.0) -> np.ndarray:
    t = 2.0 * np.pi * np.arange(n) / n
    out = np.zeros((n, d))
    for mu in range(d):
        out[:, mu] = rng.normal(scale=amp)
        for k in range(1, kmax + 1):
            a, b = rng.normal(scale=amp * 0.5 / k, size=2)
            out[:, mu] += a * np.cos(k * t) + b * np.sin(k * t)
    return out


def ng_random_state(rng: np.random.Generator, lattice: CircleLattice,
                    metric: TargetMetric, kmax: int | None = None,
                    amp_x: float = 0.3, amp_dn: float = 0.1) -> NGPreBoundaryFields:
    """Everywhere-Lorentzian random state: spatial tangent circle (needs
    d >= 3), time-dominated normal jet, band-limited trig perturbations.

    Smaller amplitudes widen the analyticity strip of 1/g_tt and 1/sqrt|g|,
    which sets the spectral decay rate of product-rule residuals.
    """
    n, d = lattice.n, metric.d
    if d < 3:
        raise ValueError("random states need d >= 3 (spatial circle embedding)")
    kmax = n // 4 if kmax is None else kmax
    t = lattice.points
    X = _trig_field(rng, n, d, kmax, amp=amp_x)
    X[:, 1] += 2.0 * np.sin(t)
    X[:, 2] += 2.0 * np.cos(t)
    dnX = _trig_field(rng, n, d, kmax, amp=amp_dn)
    dnX[:, 0] += 2.0
    return NGPreBoundaryFields(lattice, metric, X, dnX)


def ng_nogo_analysis(rng: np.random.Generator, n_samples: int = 20,
                     n: int = 4, d: int = 3, metric: TargetMetric | None = None,
                     include_polyakov: bool = True) -> dict:
    """Freeness verdicts over random Grassmann-valued states.

    The square-root theory comes out non-free at every sample (the kernel
    directions with X-support only exist with zeta^n-annihilating
    coefficients); the first-order theory, pushed through the identical
    solver, comes out free of rank (4 + d) per site.
    """
    if metric is None:
        metric = conformal(d)
    lat = CircleLattice(n)
    report = {"samples": n_samples, "free_verdicts": 0, "nonfree_verdicts": 0,
              "torsion_rank_histogram": {}, "ng_dims": [],
              "polyakov": None}
    for _ in range(n_samples):
        state = ng_bv_random_state(rng, lat, metric)
        sample = ng_nogo_sample(state)
        if sample["free"]:
            report["free_verdicts"] += 1
        else:
            report["nonfree_verdicts"] += 1
        key = str(sample["x_support_rank"])
        hist = report["torsion_rank_histogram"]
        hist[key] = hist.get(key, 0) + 1
        report["ng_dims"].append(sample["dim"])
    if include_polyakov:
        from .bfv_polyakov import polyakov_nogo_sample, polyakov_bv_random_state
        pol = {"samples": n_samples, "free_verdicts": 0, "nonfree_verdicts": 0,
               "dims": []}
        for _ in range(n_samples):
            st = polyakov_bv_random_state(rng, lat, metric)
            s = polyakov_nogo_sample(st)
            if s["free"]:
                pol["free_verdicts"] += 1
            else:
                pol["nonfree_verdicts"] += 1
            pol["dims"].append(s["dim"])
        report["polyakov"] = pol
    return report
