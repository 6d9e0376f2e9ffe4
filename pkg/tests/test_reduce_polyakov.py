"""Reduction of Polyakov pre-boundary data: two-form, kernel, projection."""

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.linalg import null_space

from bvbfv.forms import fd_directional
from bvbfv.lattice import CircleLattice
from bvbfv.reduce_polyakov import (DensitisedMetric, LightlikeStateError,
                                   PreBoundaryFields, constraint_surface_state,
                                   d_project, densitise, f_constraints,
                                   is_lightlike, kernel_basis, one_form,
                                   pack_tangent, preboundary_two_form,
                                   preboundary_two_form_pullback, project,
                                   tangent_size, tau_combination,
                                   two_form_apply, unpack_tangent)
from bvbfv.rps_polyakov import constraint_value
from bvbfv.target import conformal, minkowski


def trig_field(rng, n, d, kmax, amp=1.0):
    t = CircleLattice(n).points
    out = np.zeros((n, d))
    for mu in range(d):
        out[:, mu] = rng.normal(scale=amp)
        for k in range(1, kmax + 1):
            a, b = rng.normal(scale=amp * 0.5 / k, size=2)
            out[:, mu] += a * np.cos(k * t) + b * np.sin(k * t)
    return out


def random_pre_state(rng, lat, metric, kmax=None, flip_branch=False):
    n, d = lat.n, metric.d
    kmax = n // 4 if kmax is None else kmax
    X = trig_field(rng, n, d, kmax)
    dnX = trig_field(rng, n, d, kmax)
    tt = rng.uniform(0.5, 2.0, size=n)
    if flip_branch:
        tt = -tt
    nt = rng.uniform(-0.5, 0.5, size=n)
    return PreBoundaryFields(lat, metric, DensitisedMetric(nt, tt), X, dnX)


def random_surface_state(rng, lat, metric, kmax=None):
    """Constraint-surface state with an everywhere-Lorentzian induced metric.

    Needs d >= 3: the tangent circle lives in two spatial directions (a
    single periodic spatial component would have turning points where the
    tangent goes timelike), the normal jet is dominated by the time axis.
    """
    n, d = lat.n, metric.d
    assert d >= 3
    kmax = n // 4 if kmax is None else kmax
    t = lat.points
    X = trig_field(rng, n, d, kmax, amp=0.3)
    X[:, 1] += 2.0 * np.sin(t)
    X[:, 2] += 2.0 * np.cos(t)
    dnX = trig_field(rng, n, d, kmax, amp=0.1)
    dnX[:, 0] += 2.0
    return constraint_surface_state(lat, metric, X, dnX)


def pack_state(state):
    return pack_tangent(state, state.X, state.dnX,
                        state.theta.theta_nt, state.theta.theta_tt)


def state_from_vec(template, vec):
    X, dnX, nt, tt = unpack_tangent(template, vec)
    return PreBoundaryFields(template.lattice, template.metric,
                             DensitisedMetric(nt, tt), X, dnX)


class TestDensitisedMetric:
    def test_nn_from_determinant(self):
        th = DensitisedMetric([0.3], [1.4])
        m = th.lower(0)
        assert abs(np.linalg.det(m) + 1.0) < 1e-14
        assert np.allclose(m @ th.upper(0), np.eye(2), atol=1e-14)

    def test_lightlike_rejected_before_division(self):
        with pytest.raises(LightlikeStateError):
            DensitisedMetric([1.0], [0.0])

    def test_is_lightlike_null_plane(self):
        nt, tt = densitise(np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert is_lightlike(nt, tt)
        nt, tt = densitise(np.array([[-1.0, 0.2], [0.2, 1.0]]))
        assert not is_lightlike(nt, tt)

    def test_densitise_rejects_degenerate_and_euclidean(self):
        with pytest.raises(LightlikeStateError):
            densitise(np.array([[1.0, 1.0], [1.0, 1.0]]))
        with pytest.raises(ValueError):
            densitise(np.array([[2.0, 0.0], [0.0, 1.0]]))


class TestTwoForm:
    @pytest.mark.parametrize("make_metric,d", [(minkowski, 2), (conformal, 3)])
    def test_block_route_matches_pullback_route(self, make_metric, d):
        rng = np.random.default_rng(7)
        lat = CircleLattice(8)
        state = random_pre_state(rng, lat, make_metric(d))
        M = preboundary_two_form(state)
        M2 = preboundary_two_form_pullback(state)
        assert np.max(np.abs(M - M2)) < 1e-12

    def test_antisymmetry(self):
        rng = np.random.default_rng(3)
        state = random_pre_state(rng, CircleLattice(12), conformal(3))
        M = preboundary_two_form(state)
        assert np.max(np.abs(M + M.T)) < 1e-12

    def test_flat_reference_jet_block(self):
        """theta_nt = 0, theta_tt = 1: the dnX-X block is theta^{nn} G W."""
        lat = CircleLattice(8)
        metric = minkowski(2)
        rng = np.random.default_rng(1)
        X = trig_field(rng, 8, 2, 2)
        dnX = trig_field(rng, 8, 2, 2)
        state = PreBoundaryFields(lat, metric,
                                  DensitisedMetric(np.zeros(8), np.ones(8)), X, dnX)
        M = preboundary_two_form(state)
        n, d = 8, 2
        G = metric.eval(X[0])
        W = lat.weight
        for i in range(n):
            blk = M[n * d + i * d:n * d + (i + 1) * d, i * d:(i + 1) * d]
            assert np.max(np.abs(blk - W * (-1.0) * G)) < 1e-14

    @pytest.mark.parametrize("make_metric,d,tol", [(minkowski, 2, 1e-9),
                                                   (conformal, 3, 1e-8)])
    def test_matches_exterior_derivative_of_one_form(self, make_metric, d, tol):
        rng = np.random.default_rng(11)
        lat = CircleLattice(8)
        state = random_pre_state(rng, lat, make_metric(d), kmax=2)
        base = pack_state(state)
        M = preboundary_two_form(state)
        for _ in range(6):
            u = rng.normal(size=tangent_size(state))
            v = rng.normal(size=tangent_size(state))
            du_av = fd_directional(lambda y: one_form(state_from_vec(state, y), v),
                                   base, u, step=1e-4, richardson=True)
            dv_au = fd_directional(lambda y: one_form(state_from_vec(state, y), u),
                                   base, v, step=1e-4, richardson=True)
            assert abs((du_av - dv_au) - float(u @ M @ v)) < tol


class TestKernel:
    @pytest.mark.parametrize("make_metric,d", [(minkowski, 2), (conformal, 3)])
    def test_analytic_kernel_annihilates(self, make_metric, d):
        rng = np.random.default_rng(5)
        lat = CircleLattice(8)
        for _ in range(5):
            state = random_pre_state(rng, lat, make_metric(d))
            M = preboundary_two_form(state)
            K = kernel_basis(state)
            assert np.max(np.abs(M @ K.T)) < 1e-10

    @pytest.mark.parametrize("make_metric,d", [(minkowski, 2), (conformal, 3)])
    def test_numeric_nullspace_dimension_and_span(self, make_metric, d):
        rng = np.random.default_rng(9)
        lat = CircleLattice(8)
        state = random_pre_state(rng, lat, make_metric(d))
        M = preboundary_two_form(state)
        ns = null_space(M, rcond=1e-10)
        assert ns.shape[1] == 2 * lat.n
        K = kernel_basis(state)
        combined = np.vstack([ns.T, K])
        rank = np.linalg.matrix_rank(combined, tol=1e-8)
        assert rank == 2 * lat.n

    def test_kernel_in_projection_differential_kernel(self):
        rng = np.random.default_rng(13)
        state = random_pre_state(rng, CircleLattice(8), conformal(3))
        for vec in kernel_basis(state):
            wX, wJ = d_project(state, vec)
            assert np.max(np.abs(wX)) == 0.0
            assert np.max(np.abs(wJ)) < 1e-12

    def test_kernel_flow_preserves_projection(self):
        """Integrating a kernel vector field leaves (X, J) fixed."""
        rng = np.random.default_rng(17)
        lat = CircleLattice(8)
        state = random_pre_state(rng, lat, conformal(2))
        coeffs = rng.normal(size=2 * lat.n)

        def rhs(_, y):
            st = state_from_vec(state, y)
            return kernel_basis(st).T @ coeffs

        y0 = pack_state(state)
        sol = solve_ivp(rhs, (0.0, 0.4), y0, rtol=1e-11, atol=1e-11)
        end = state_from_vec(state, sol.y[:, -1])
        assert np.max(np.abs(end.theta.theta_nt - state.theta.theta_nt)) > 1e-3
        b0, b1 = project(state), project(end)
        assert np.max(np.abs(b0.X - b1.X)) < 1e-9
        assert np.max(np.abs(b0.J - b1.J)) < 1e-8


class TestProjection:
    @pytest.mark.parametrize("flip", [False, True])
    def test_basicness_of_two_form(self, flip):
        """Block-assembled two-form equals the pullback of the boundary form."""
        rng = np.random.default_rng(19)
        lat = CircleLattice(8)
        state = random_pre_state(rng, lat, conformal(3), flip_branch=flip)
        M = preboundary_two_form(state)
        for _ in range(10):
            u = rng.normal(size=tangent_size(state))
            v = rng.normal(size=tangent_size(state))
            assert abs(float(u @ M @ v) - two_form_apply(state, u, v)) < 1e-10

    def test_pinned_projection_flat(self):
        """theta_nt = 0, theta_tt = 1 gives J = -dnX with eta lowering."""
        lat = CircleLattice(8)
        metric = minkowski(2)
        t = lat.points
        X = np.stack([0.0 * t, np.cos(t)], axis=1)
        dnX = np.stack([np.ones(8), np.zeros(8)], axis=1)
        state = PreBoundaryFields(lat, metric,
                                  DensitisedMetric(np.zeros(8), np.ones(8)), X, dnX)
        b = project(state)
        # theta^{nn} = -1, J_mu = -dnX^nu eta_mu nu = (+1, 0)
        assert np.allclose(b.J[:, 0], 1.0, atol=1e-14)
        assert np.allclose(b.J[:, 1], 0.0, atol=1e-14)

    def test_branch_sign_recorded(self):
        rng = np.random.default_rng(23)
        lat = CircleLattice(8)
        spacelike = random_pre_state(rng, lat, minkowski(2))
        assert np.all(spacelike.theta.chi() == -1.0)
        flipped = random_pre_state(rng, lat, minkowski(2), flip_branch=True)
        assert np.all(flipped.theta.chi() == 1.0)


class TestConstraints:
    def test_f_traceless(self):
        rng = np.random.default_rng(29)
        state = random_pre_state(rng, CircleLattice(12), conformal(3))
        f = f_constraints(state)
        for i in range(12):
            up = state.theta.upper(i)
            assert abs(np.sum(up * f[i])) < 1e-12

    def test_f_vanishes_on_constraint_surface(self):
        rng = np.random.default_rng(31)
        lat = CircleLattice(16)
        for metric in (minkowski(3), conformal(3)):
            state = random_surface_state(rng, lat, metric)
            assert np.max(np.abs(f_constraints(state))) < 1e-10

    def test_projected_constraints_vanish_iff_f_vanishes(self):
        rng = np.random.default_rng(37)
        lat = CircleLattice(16)
        metric = minkowski(3)
        phi = np.ones(lat.n)
        state = random_surface_state(rng, lat, metric)
        b = project(state)
        assert abs(constraint_value(b, "H", phi)) < 1e-10
        assert abs(constraint_value(b, "L", phi)) < 1e-10
        # moving theta off the surface turns on both f and the constraints
        off = PreBoundaryFields(lat, metric,
                                DensitisedMetric(state.theta.theta_nt,
                                                 state.theta.theta_tt * 1.3),
                                state.X, state.dnX)
        assert np.max(np.abs(f_constraints(off))) > 1e-3
        total = abs(constraint_value(project(off), "H", phi)) + \
            abs(constraint_value(project(off), "L", phi))
        assert total > 1e-3


class TestTauCombination:
    @pytest.mark.parametrize("l_tt,l_nt", [(1.0, 0.0), (0.0, 1.0), (0.7, -1.3)])
    def test_routes_agree(self, l_tt, l_nt):
        rng = np.random.default_rng(41)
        lat = CircleLattice(8)
        for metric in (minkowski(2), conformal(3)):
            for _ in range(5):
                state = random_pre_state(rng, lat, metric)
                a, b = tau_combination(state, l_tt, l_nt)
                assert np.max(np.abs(a - b)) < 1e-12

    def test_tau_nn_freedom_drops(self):
        rng = np.random.default_rng(43)
        state = random_pre_state(rng, CircleLattice(8), conformal(2))
        a0, _ = tau_combination(state, 0.8, 0.4, tau_nn=0.0)
        a1, _ = tau_combination(state, 0.8, 0.4, tau_nn=3.7)
        assert np.max(np.abs(a0 - a1)) < 1e-12
