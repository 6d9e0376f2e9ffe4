"""Exactness identities and spectral accuracy of the lattice operators."""

import numpy as np
import pytest

from bvbfv.graded import GrassmannAlgebra
from bvbfv.lattice import (
    CircleLattice,
    CylinderLattice,
    LatticeField,
    TorusLattice,
    sbp21,
    spectral_diff_matrix,
)


def random_trig_poly(rng, lat, max_mode=None):
    """Real trig polynomial with modes bounded away from Nyquist."""
    kmax = max_mode if max_mode is not None else lat.n // 4
    f = np.full(lat.n, rng.standard_normal())
    for k in range(1, kmax + 1):
        f = f + rng.standard_normal() * np.cos(k * lat.points)
        f = f + rng.standard_normal() * np.sin(k * lat.points)
    return f


def test_spectral_matrix_bitwise_antisymmetric():
    for n in (8, 16, 64):
        D = spectral_diff_matrix(n)
        assert np.array_equal(D.T, -D)
        # mirrored coefficients cancel pairwise; only summation rounding remains
        assert np.max(np.abs(D @ np.ones(n))) <= 1e-13


def test_spectral_accuracy_on_sin():
    lat = CircleLattice(16)
    err = np.max(np.abs(lat.d_t(np.sin(lat.points)) - np.cos(lat.points)))
    assert err <= 1e-12


def test_spectral_exact_below_nyquist():
    lat = CircleLattice(16)
    for k in range(1, lat.n // 2):
        f = np.cos(k * lat.points)
        assert np.max(np.abs(lat.d_t(f) + k * np.sin(k * lat.points))) < 1e-10


def test_circle_ibp_random_trig():
    rng = np.random.default_rng(0)
    lat = CircleLattice(64)
    for _ in range(10):
        p = random_trig_poly(rng, lat)
        q = random_trig_poly(rng, lat)
        residual = lat.integrate(p * lat.d_t(q)) + lat.integrate(lat.d_t(p) * q)
        assert abs(residual) <= 1e-12


def test_integrate_examples():
    lat = CircleLattice(32)
    assert abs(lat.integrate(np.ones(lat.n)) - 2 * np.pi) < 1e-13
    assert abs(lat.integrate(np.sin(lat.points) ** 2) - np.pi) < 1e-12


def test_integrate_graded_cos_vanishes():
    lat = CircleLattice(32)
    alg = GrassmannAlgebra()
    g1 = alg.odd("g1")
    vals = np.empty(lat.n, dtype=object)
    for i in range(lat.n):
        vals[i] = alg.gen(g1) * np.cos(lat.points[i])
    total = lat.integrate(vals)
    assert total.max_abs_coeff() <= 1e-12


def test_d_t_extends_to_graded():
    lat = CircleLattice(16)
    alg = GrassmannAlgebra()
    g1 = alg.odd("g1")
    vals = np.empty(lat.n, dtype=object)
    for i in range(lat.n):
        vals[i] = alg.gen(g1) * np.sin(lat.points[i])
    dv = lat.d_t(vals)
    for i in range(lat.n):
        assert dv[i].allclose(alg.gen(g1) * np.cos(lat.points[i]), tol=1e-12)


def test_sbp_q_plus_qt_is_boundary_matrix():
    for n in (4, 9, 16):
        p, D = sbp21(n)
        Q = np.diag(p) @ D
        B = np.zeros((n, n))
        B[0, 0], B[-1, -1] = -1.0, 1.0
        assert np.max(np.abs(Q + Q.T - B)) == 0.0


def test_cylinder_stokes_exact():
    rng = np.random.default_rng(1)
    cyl = CylinderLattice(9, 16)
    for _ in range(5):
        u = rng.standard_normal((cyl.n_n, cyl.n_t))
        v = rng.standard_normal((cyl.n_n, cyl.n_t))
        lhs = cyl.integrate(u * cyl.d_n(v)) + cyl.integrate(cyl.d_n(u) * v)
        top = cyl.integrate_boundary(cyl.boundary_ring(u * v, 1))
        bot = cyl.integrate_boundary(cyl.boundary_ring(u * v, 0))
        assert abs(lhs - (top - bot)) <= 1e-12


def test_cylinder_tangential_matches_circle():
    cyl = CylinderLattice(5, 16)
    f = np.zeros((5, 16))
    for i in range(5):
        f[i] = np.sin(cyl.circle.points) * (i + 1)
    df = cyl.d_t(f)
    for i in range(5):
        assert np.max(np.abs(df[i] - (i + 1) * np.cos(cyl.circle.points))) < 1e-11


def test_torus_ibp_both_axes():
    rng = np.random.default_rng(2)
    tor = TorusLattice(8, 8)
    u = rng.standard_normal((8, 8))
    v = rng.standard_normal((8, 8))
    for d in (tor.d_n, tor.d_t):
        assert abs(tor.integrate(u * d(v)) + tor.integrate(d(u) * v)) <= 1e-12


def test_lattice_field_csv_roundtrip(tmp_path):
    lat = CircleLattice(8)
    alg = GrassmannAlgebra()
    g1, g2 = alg.odd_batch(2)
    vals = np.empty((lat.n, 2), dtype=object)
    for i in range(lat.n):
        vals[i, 0] = alg.scalar(float(i)) + alg.gen(g1) * 0.5
        vals[i, 1] = alg.gen(g1) * alg.gen(g2) * (i - 3.0)
    f = LatticeField(lat, vals, kind="odd", rank=2, index="upper")
    path = tmp_path / "field.csv"
    f.to_csv(str(path))
    g = LatticeField.from_csv(str(path), lat, algebra=alg, kind="odd", rank=2,
                              index="upper", shape=(lat.n, 2))
    for i in range(lat.n):
        for c in range(2):
            assert g.values[i, c].allclose(vals[i, c], tol=0.0)


def test_lattice_field_real_csv_roundtrip(tmp_path):
    lat = CircleLattice(8)
    vals = np.arange(8.0)
    f = LatticeField(lat, vals, kind="even", rank=1)
    path = tmp_path / "real.csv"
    f.to_csv(str(path))
    g = LatticeField.from_csv(str(path), lat)
    assert np.array_equal(g.values, vals)


def test_field_kind_validation():
    lat = CircleLattice(8)
    with pytest.raises(ValueError):
        LatticeField(lat, np.zeros(8), kind="chiral")
