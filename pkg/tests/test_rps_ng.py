"""Nambu-Goto boundary reduction: partial momentum map, kernel flow, BV no-go."""

import itertools

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.linalg import lstsq, null_space

from bvbfv.forms import algebra_monomials, fd_directional
from bvbfv.graded import GradedScalar
from bvbfv.lattice import CircleLattice
from bvbfv.rps_ng import (DegenerateInducedMetricError, NGBVPreBoundary,
                          NGPreBoundaryFields, beta_flow_endpoint,
                          beta_flow_parameters, check_diagram,
                          constraint_jacobian, d_partial, induced_metric,
                          ng_bv_layout, ng_bv_one_form, ng_bv_random_state,
                          ng_bv_row_residual, ng_bv_size, ng_bv_two_form,
                          ng_bv_two_form_mechanical, ng_chi, ng_kernel_basis,
                          ng_kernel_tangent, ng_nogo_analysis, ng_nogo_sample,
                          ng_one_form, ng_pack, ng_random_state,
                          ng_tangent_size, ng_torsion_exhibit, ng_two_form,
                          ng_two_form_apply, ng_two_form_pullback, ng_unpack,
                          normalized_jet, partial_reduce)
from bvbfv.rps_polyakov import ham_vector
from bvbfv.target import conformal, minkowski


def state_from_vec(template, y):
    vX, vdn = ng_unpack(template, y)
    return NGPreBoundaryFields(template.lattice, template.metric, vX, vdn)


def pack_state(state):
    return ng_pack(state, state.X, state.dnX)


def d2_flat_state(n=8):
    """Valid Lorentzian d=2 surface: tangent and jet never parallel."""
    lat = CircleLattice(n)
    t = lat.points
    X = np.stack([0.1 * np.sin(t), np.cos(t)], axis=1)
    dnX = np.tile([2.0, 0.5], (n, 1))
    return NGPreBoundaryFields(lat, minkowski(2), X, dnX)


def band_profile(rng, t, kmax=2, scale=0.5):
    out = rng.normal(scale=scale) * np.ones_like(t)
    for k in range(1, kmax + 1):
        a, b = rng.normal(scale=scale / k, size=2)
        out += a * np.cos(k * t) + b * np.sin(k * t)
    return out


class TestGeometry:
    def test_induced_metric_lorentzian_and_chi(self):
        rng = np.random.default_rng(3)
        lat = CircleLattice(16)
        state = ng_random_state(rng, lat, conformal(3))
        g = induced_metric(state)
        det = g[:, 0, 0] * g[:, 1, 1] - g[:, 0, 1] ** 2
        assert np.all(det < 0.0)
        chi = ng_chi(state)
        assert set(np.unique(chi)) <= {-1.0, 1.0}
        # time-dominated normal jet, spacelike tangent: g^{nn} < 0 branch
        assert np.all(chi == -1.0)

    def test_degenerate_jet_rejected(self):
        lat = CircleLattice(8)
        t = lat.points
        X = np.stack([0.2 * t * 0, np.sin(t), np.cos(t)], axis=1)
        dtX = lat.d_t(X)
        with pytest.raises(DegenerateInducedMetricError):
            NGPreBoundaryFields(lat, minkowski(3), X, dtX.copy())

    def test_sampler_needs_room_for_spatial_circle(self):
        rng = np.random.default_rng(5)
        with pytest.raises(ValueError):
            ng_random_state(rng, CircleLattice(8), minkowski(2))


class TestPartialReduce:
    @pytest.mark.parametrize("metric", [minkowski(3), conformal(3)])
    def test_constraint_identities_exact(self, metric):
        rng = np.random.default_rng(7)
        lat = CircleLattice(16)
        state = ng_random_state(rng, lat, metric)
        b = partial_reduce(state)
        dtX = b.dtX()
        for i in range(lat.n):
            G = metric.eval(b.X[i])
            Ginv = np.linalg.inv(G)
            assert abs(b.J[i] @ dtX[i]) < 1e-12
            assert abs(b.J[i] @ Ginv @ b.J[i] + dtX[i] @ G @ dtX[i]) < 1e-12

    def test_flat_d2_hand_formula(self):
        state = d2_flat_state()
        b = partial_reduce(state)
        eta = np.diag([-1.0, 1.0])
        dtX = state.lattice.d_t(state.X)
        for i in range(state.lattice.n):
            dn, dt = state.dnX[i], dtX[i]
            g = np.array([[dn @ eta @ dn, dn @ eta @ dt],
                          [dn @ eta @ dt, dt @ eta @ dt]])
            det = np.linalg.det(g)
            s = np.sqrt(-det)
            gup = np.linalg.inv(g)
            chi = np.sign(gup[0, 0])
            J = chi * s * (gup[0, 0] * dn + gup[0, 1] * dt) @ eta
            assert np.max(np.abs(b.J[i] - J)) < 1e-13


class TestTwoForm:
    @pytest.mark.parametrize("metric", [minkowski(3), conformal(3)])
    def test_blocks_match_pullback_assembly(self, metric):
        rng = np.random.default_rng(11)
        state = ng_random_state(rng, CircleLattice(8), metric)
        M = ng_two_form(state)
        M2 = ng_two_form_pullback(state)
        assert np.max(np.abs(M - M2)) < 1e-11
        assert np.max(np.abs(M + M.T)) < 1e-12

    def test_apply_route_agrees(self):
        rng = np.random.default_rng(13)
        state = ng_random_state(rng, CircleLattice(8), conformal(3))
        M = ng_two_form(state)
        for _ in range(10):
            u = rng.normal(size=ng_tangent_size(state))
            v = rng.normal(size=ng_tangent_size(state))
            assert abs(float(u @ M @ v) - ng_two_form_apply(state, u, v)) < 1e-11

    @pytest.mark.parametrize("metric,tol", [(minkowski(3), 1e-8),
                                            (conformal(3), 1e-7)])
    def test_matches_exterior_derivative_of_one_form(self, metric, tol):
        rng = np.random.default_rng(17)
        state = ng_random_state(rng, CircleLattice(8), metric, kmax=2)
        base = pack_state(state)
        M = ng_two_form(state)
        for _ in range(6):
            u = rng.normal(size=ng_tangent_size(state))
            v = rng.normal(size=ng_tangent_size(state))
            du_av = fd_directional(lambda y: ng_one_form(state_from_vec(state, y), v),
                                   base, u, step=1e-4, richardson=True)
            dv_au = fd_directional(lambda y: ng_one_form(state_from_vec(state, y), u),
                                   base, v, step=1e-4, richardson=True)
            assert abs((du_av - dv_au) - float(u @ M @ v)) < tol

    def test_d2_perp_projector_vanishes(self):
        """One worldsheet direction per target dimension: P_perp = 0 per site."""
        state = d2_flat_state()
        g = induced_metric(state)
        eta = np.diag([-1.0, 1.0])
        dtX = state.lattice.d_t(state.X)
        for i in range(state.lattice.n):
            dX = np.stack([state.dnX[i], dtX[i]])
            perp = np.eye(2) - dX.T @ np.linalg.inv(g[i]) @ (dX @ eta)
            assert np.max(np.abs(perp)) < 1e-12

    def test_d2_mixed_branch_routes_agree(self):
        # closed curves in a 2d Minkowski target always cross the light cone,
        # so this state mixes both signs of g^{nn} across sites
        state = d2_flat_state()
        chi = ng_chi(state)
        assert {-1.0, 1.0} <= set(np.unique(chi))
        M = ng_two_form(state)
        M2 = ng_two_form_pullback(state)
        assert np.max(np.abs(M - M2)) < 1e-12
        assert np.max(np.abs(M + M.T)) < 1e-12

    def test_d2_mixed_branch_image_on_constraint_surface(self):
        state = d2_flat_state()
        b = partial_reduce(state)
        dtX = b.lattice.d_t(b.X)
        eta = np.diag([-1.0, 1.0])
        c2 = np.sum(b.J * dtX, axis=1)
        c1 = np.sum(b.J * (b.J @ np.linalg.inv(eta)), axis=1) \
            + np.sum(dtX * (dtX @ eta), axis=1)
        assert np.max(np.abs(c1)) < 1e-14
        assert np.max(np.abs(c2)) < 1e-14


class TestKernel:
    @pytest.mark.parametrize("metric", [minkowski(3), conformal(3)])
    def test_beta_directions_annihilate_exactly(self, metric):
        rng = np.random.default_rng(19)
        state = ng_random_state(rng, CircleLattice(8), metric)
        M = ng_two_form(state)
        n = state.lattice.n
        zero = np.zeros(n)
        for i in range(n):
            for c in (2, 3):
                params = [zero.copy() for _ in range(4)]
                params[c][i] = 1.0
                v = ng_kernel_tangent(state, *params)
                assert np.max(np.abs(M @ v)) < 1e-14
                vX, wJ = d_partial(state, v)
                assert np.max(np.abs(vX)) == 0.0
                assert np.max(np.abs(wJ)) < 1e-13

    def test_basis_spans_four_per_site(self):
        rng = np.random.default_rng(23)
        state = ng_random_state(rng, CircleLattice(8), conformal(3))
        K = ng_kernel_basis(state)
        assert K.shape[0] == 4 * state.lattice.n
        assert np.linalg.matrix_rank(K, tol=1e-8) == 4 * state.lattice.n

    def test_exact_nullspace_is_jet_plane_only(self):
        """alpha directions are kernel only spectrally; exact zeros are the
        2/site jet-plane shifts."""
        rng = np.random.default_rng(29)
        state = ng_random_state(rng, CircleLattice(8), conformal(3))
        M = ng_two_form(state)
        ns = null_space(M, rcond=1e-10)
        assert ns.shape[1] == 2 * state.lattice.n

    @pytest.mark.parametrize("metric", [minkowski(3), conformal(3)])
    def test_alpha_contraction_band_limited(self, metric):
        rng = np.random.default_rng(31)
        lat = CircleLattice(64)
        state = ng_random_state(rng, lat, metric, kmax=2,
                                amp_x=0.15, amp_dn=0.05)
        M = ng_two_form(state)
        t = lat.points
        for _ in range(3):
            v = ng_kernel_tangent(state, band_profile(rng, t),
                                  band_profile(rng, t), 0.0, 0.0)
            assert np.max(np.abs(M @ v)) < 1e-9

    def test_alpha_image_is_ham_combination(self):
        rng = np.random.default_rng(37)
        lat = CircleLattice(64)
        state = ng_random_state(rng, lat, conformal(3), kmax=2,
                                amp_x=0.15, amp_dn=0.05)
        t = lat.points
        alpha_n = band_profile(rng, t)
        alpha_t = band_profile(rng, t)
        v = ng_kernel_tangent(state, alpha_n, alpha_t, 0.0, 0.0)
        vX, wJ = d_partial(state, v)
        g = induced_metric(state)
        det = g[:, 0, 0] * g[:, 1, 1] - g[:, 0, 1] ** 2
        s = np.sqrt(-det)
        gup = np.linalg.inv(g)
        chi = np.sign(gup[:, 0, 0])
        phi = chi * alpha_n / (2.0 * s * gup[:, 0, 0])
        psi = 0.5 * (alpha_t - alpha_n * gup[:, 0, 1] / gup[:, 0, 0])
        b = partial_reduce(state)
        hX, hJ = ham_vector(b, "H", phi)
        lX, lJ = ham_vector(b, "L", psi)
        assert np.max(np.abs(vX - (hX + lX))) < 1e-12
        assert np.max(np.abs(wJ - (hJ + lJ))) < 1e-9


class TestBetaFlow:
    @pytest.mark.parametrize("metric", [minkowski(3), conformal(3)])
    def test_closed_form_endpoint_is_normalized_jet(self, metric):
        rng = np.random.default_rng(41)
        state = ng_random_state(rng, CircleLattice(16), metric)
        assert np.max(np.abs(beta_flow_endpoint(state) - normalized_jet(state))) < 1e-12

    def test_ivp_endpoint_matches_closed_form(self):
        rng = np.random.default_rng(43)
        lat = CircleLattice(8)
        state = ng_random_state(rng, lat, conformal(3))
        beta_n, beta_t = beta_flow_parameters(state)
        dtX = lat.d_t(state.X)

        def rhs(_, y):
            dn = y.reshape(lat.n, 3)
            return (beta_n[:, None] * dn + beta_t[:, None] * dtX).ravel()

        sol = solve_ivp(rhs, (0.0, 1.0), state.dnX.ravel(),
                        rtol=1e-11, atol=1e-11)
        end = sol.y[:, -1].reshape(lat.n, 3)
        assert np.max(np.abs(end - beta_flow_endpoint(state))) < 1e-9
        # flow along the jet plane: the partial momentum map never moves
        b0 = partial_reduce(state)
        b1 = partial_reduce(NGPreBoundaryFields(lat, state.metric, state.X, end))
        assert np.max(np.abs(b0.J - b1.J)) < 1e-9

    def test_normalization_idempotent(self):
        rng = np.random.default_rng(47)
        state = ng_random_state(rng, CircleLattice(16), minkowski(3))
        once = NGPreBoundaryFields(state.lattice, state.metric, state.X,
                                   normalized_jet(state))
        g = induced_metric(once)
        det = g[:, 0, 0] * g[:, 1, 1] - g[:, 0, 1] ** 2
        c = np.sign(g[:, 1, 1] / det) * np.sqrt(-det) * g[:, 1, 1] / det
        assert np.max(np.abs(c - 1.0)) < 1e-12
        assert np.max(np.abs(normalized_jet(once) - once.dnX)) < 1e-12
        assert np.max(np.abs(partial_reduce(once).J - partial_reduce(state).J)) < 1e-12


class TestDiagram:
    @pytest.mark.parametrize("metric", [minkowski(3), conformal(3)])
    def test_report_residuals(self, metric):
        rng = np.random.default_rng(53)
        lat = CircleLattice(32)
        state = ng_random_state(rng, lat, metric, kmax=2,
                                amp_x=0.15, amp_dn=0.05)
        rep = check_diagram(state, rng)
        assert rep["pullback"] < 1e-10
        assert rep["span_residual"] < 1e-8
        assert rep["kernel_dim"] >= 2 * lat.n
        assert rep["band_tangency"] < 1e-8

    def test_projected_surface_tangents_match_form(self):
        """Constraint-surface tangents built by orthogonal projection have
        lifts through the reduction, and the ambient canonical form on them
        equals the partial two-form on the lifts."""
        rng = np.random.default_rng(59)
        lat = CircleLattice(16)
        n, d = lat.n, 3
        state = ng_random_state(rng, lat, minkowski(3), kmax=2,
                                amp_x=0.15, amp_dn=0.05)
        b = partial_reduce(state)
        A = constraint_jacobian(b)
        TC = null_space(A, rcond=1e-10)
        P = TC @ TC.T
        W = lat.weight
        M = ng_two_form(state)

        jet_jac = np.zeros((n, d, d))
        for i in range(n):
            for k in range(d):
                vdn = np.zeros((n, d))
                vdn[i, k] = 1.0
                _, wJ = d_partial(state, ng_pack(state, np.zeros((n, d)), vdn))
                jet_jac[i, :, k] = wJ[i]

        def lift(p):
            pX = p[:n * d].reshape(n, d)
            pJ = p[n * d:].reshape(n, d)
            _, w0 = d_partial(state, ng_pack(state, pX, np.zeros((n, d))))
            vdn = np.zeros((n, d))
            for i in range(n):
                vdn[i], _, _, _ = lstsq(jet_jac[i], pJ[i] - w0[i])
            return ng_pack(state, pX, vdn)

        for _ in range(5):
            pu = P @ rng.normal(size=2 * n * d)
            pv = P @ rng.normal(size=2 * n * d)
            for p in (pu, pv):
                vX, wJ = d_partial(state, lift(p))
                back = np.concatenate([vX.ravel(), wJ.ravel()])
                assert np.max(np.abs(back - p)) < 1e-8
            ambient = W * float(pu[n * d:] @ pv[:n * d] - pu[:n * d] @ pv[n * d:])
            partial = float(lift(pu) @ M @ lift(pv))
            assert abs(ambient - partial) < 1e-10


class TestBVTwoForm:
    @staticmethod
    def _tangent(rng, state, par, density=0.5):
        alg = state.algebra
        _, parity = ng_bv_layout(state)
        size = ng_bv_size(state)
        v = np.empty(size, dtype=object)
        for k in range(size):
            want = (par + parity[k]) % 2
            terms = {}
            for m in algebra_monomials(alg, want, ngens=5):
                if rng.uniform() < density:
                    terms[m] = float(rng.normal())
            v[k] = GradedScalar(alg, terms) if terms else alg.zero()
        return v

    def test_blocks_match_mechanical_oracle(self):
        rng = np.random.default_rng(61)
        state = ng_bv_random_state(rng, CircleLattice(4), conformal(3))
        for s, t in itertools.product((0, 1), repeat=2):
            u = self._tangent(rng, state, s)
            v = self._tangent(rng, state, t)
            bv = ng_bv_two_form(state, u, v, s, t)
            mech = ng_bv_two_form_mechanical(state, u, v, s, t)
            assert (bv - mech).max_abs_coeff() < 1e-12

    def test_graded_antisymmetry(self):
        rng = np.random.default_rng(67)
        state = ng_bv_random_state(rng, CircleLattice(4), conformal(3))
        for s, t in itertools.product((0, 1), repeat=2):
            u = self._tangent(rng, state, s)
            v = self._tangent(rng, state, t)
            uv = ng_bv_two_form(state, u, v, s, t)
            vu = ng_bv_two_form(state, v, u, t, s)
            sign = 1.0 if (s * t) % 2 else -1.0
            assert (uv - sign * vu).max_abs_coeff() < 1e-12

    def test_vanishing_odd_fields_reduce_to_classical(self):
        rng = np.random.default_rng(71)
        state = ng_bv_random_state(rng, CircleLattice(4), conformal(3))
        alg = state.algebra
        n, d = 4, 3
        zero = np.empty((n, 2), dtype=object)
        zero_x = np.empty((n, d), dtype=object)
        for i in range(n):
            for a in range(2):
                zero[i, a] = alg.zero()
            for mu in range(d):
                zero_x[i, mu] = alg.zero()
        bare = NGBVPreBoundary(state.lattice, state.metric, alg, state.X,
                               state.dnX, zero.copy(), zero.copy(), zero_x)
        M_cl = ng_two_form(bare.classical_reduct())
        size = ng_bv_size(bare)
        u_r = rng.normal(size=size) * (np.arange(size) < 2 * n * d)
        v_r = rng.normal(size=size) * (np.arange(size) < 2 * n * d)
        u = np.array([alg.scalar(x) for x in u_r], dtype=object)
        v = np.array([alg.scalar(x) for x in v_r], dtype=object)
        val = ng_bv_two_form(bare, u, v, 0, 0)
        assert abs(val.body() - float(u_r[:2 * n * d] @ M_cl @ v_r[:2 * n * d])) < 1e-12
        assert val.soul().max_abs_coeff() < 1e-14

    def test_one_form_unit_slots_literal(self):
        rng = np.random.default_rng(73)
        state = ng_bv_random_state(rng, CircleLattice(4), conformal(3))
        alg = state.algebra
        size = ng_bv_size(state)
        ofs, _ = ng_bv_layout(state)
        W = state.lattice.weight
        b = partial_reduce(state.classical_reduct())
        i, mu = 2, 1
        v = np.array([alg.zero()] * size, dtype=object)
        v[ofs["X"] + i * 3 + mu] = alg.one()
        got = ng_bv_one_form(state, v)
        want = W * (alg.scalar(b.J[i, mu]) + state.x_dag[i, mu] * state.zeta[i, 0])
        assert (got - want).max_abs_coeff() < 1e-12
        v = np.array([alg.zero()] * size, dtype=object)
        v[ofs["zeta"] + 2 * i + 1] = alg.one()
        got = ng_bv_one_form(state, v)
        want = (-W) * (state.zeta_dag[i, 1] * state.zeta[i, 0])
        assert (got - want).max_abs_coeff() < 1e-12


class TestNoGo:
    def test_nonfree_verdict_with_torsion(self):
        rng = np.random.default_rng(79)
        n, d = 4, 3
        state = ng_bv_random_state(rng, CircleLattice(n), conformal(d))
        sample = ng_nogo_sample(state)
        assert sample["free"] is False
        assert sample["dim"] < sample["expected_free"]
        assert sample["body_rank"] == n * (d + 6)
        assert sample["x_support_rank"] > 0
        tor = ng_torsion_exhibit(state, sample)
        assert tor["row_residual"] < 1e-9
        assert tor["annihilation"] < 1e-9
        assert tor["x_weight"] > 1e-3
        assert ng_bv_row_residual(state, tor["vector"], tor["parity"]) < 1e-9

    def test_analysis_report_structure(self):
        rng = np.random.default_rng(83)
        rep = ng_nogo_analysis(rng, n_samples=2, include_polyakov=False)
        assert rep["samples"] == 2
        assert rep["nonfree_verdicts"] == 2
        assert rep["free_verdicts"] == 0
        assert sum(rep["torsion_rank_histogram"].values()) == 2


class TestBVSampler:
    def test_gradings(self):
        rng = np.random.default_rng(89)
        state = ng_bv_random_state(rng, CircleLattice(4), minkowski(3))
        for i in range(4):
            for a in range(2):
                assert state.zeta[i, a].parity() == 1
                assert state.zeta[i, a].ghost_number() == 1
                assert state.zeta_dag[i, a].parity() == 0
                assert state.zeta_dag[i, a].ghost_number() == -2
            for mu in range(3):
                assert state.x_dag[i, mu].parity() == 1
                assert state.x_dag[i, mu].ghost_number() == -1
