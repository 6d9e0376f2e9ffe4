"""Metric evaluation, derivatives vs finite differences, index raising."""

import numpy as np
import pytest

from bvbfv.forms import as_graded_array, gdot
from bvbfv.graded import GrassmannAlgebra
from bvbfv.target import (
    DegenerateMetricError,
    TargetMetric,
    conformal,
    metric_by_name,
    metric_from_config,
    minkowski,
)


def fd_deriv(metric, X, step=1e-5):
    d = metric.d
    out = np.zeros((d, d, d))
    for rho in range(d):
        e = np.zeros(d)
        e[rho] = 1.0
        out[:, :, rho] = (metric.eval(X + step * e) - metric.eval(X - step * e)) / (2 * step)
    return out


def test_minkowski_basics():
    g = minkowski(3)
    X = np.array([0.3, -1.2, 0.5])
    assert np.array_equal(g.eval(X), np.diag([-1.0, 1.0, 1.0]))
    assert np.all(g.deriv(X) == 0.0)
    J = np.array([1.0, 0.0, 0.0])
    assert np.allclose(g.raise_index(X, J), np.array([-1.0, 0.0, 0.0]))


def test_minkowski_pinned_raise_2d():
    g = minkowski(2)
    up = g.raise_index(np.zeros(2), np.array([1.0, 0.0]))
    assert np.allclose(up, np.array([-1.0, 0.0]))


def test_conformal_at_origin_is_flat():
    g = conformal(2)
    assert np.allclose(g.eval(np.zeros(2)), np.diag([-1.0, 1.0]))


def test_conformal_analytic_deriv_vs_fd():
    g = conformal(3)
    rng = np.random.default_rng(3)
    for _ in range(10):
        X = rng.standard_normal(3)
        analytic = g.deriv(X)
        numeric = fd_deriv(g, X)
        scale = max(1.0, np.max(np.abs(analytic)))
        assert np.max(np.abs(analytic - numeric)) / scale <= 1e-6


def test_fd_fallback_matches_analytic():
    ref = conformal(2)
    fallback = TargetMetric(2, "conformal-fd", ref.eval_fn, None)
    X = np.array([0.4, -0.2])
    assert np.max(np.abs(fallback.deriv(X) - ref.deriv(X))) <= 1e-6


def test_conformal_raise_then_lower_roundtrip():
    g = conformal(4)
    rng = np.random.default_rng(4)
    for _ in range(10):
        X = rng.standard_normal(4)
        J = rng.standard_normal(4)
        back = g.lower_index(X, g.raise_index(X, J))
        assert np.max(np.abs(back - J)) <= 1e-12


def test_degenerate_metric_raises():
    bad = TargetMetric(2, "degenerate", lambda X: np.zeros((2, 2)), None)
    with pytest.raises(DegenerateMetricError):
        bad.raise_index(np.zeros(2), np.array([1.0, 0.0]))


def test_graded_evaluation_conformal():
    # at a point with nilpotent coordinates, the graded inverse matches the
    # exact expansion of the conformal factor
    alg = GrassmannAlgebra()
    g1, g2 = alg.odd_batch(2)
    g = conformal(2)
    x0 = alg.scalar(0.5) + alg.gen(g1) * alg.gen(g2) * 0.3
    X = np.array([x0, alg.scalar(-0.2)], dtype=object)
    G = g.eval(X)
    Ginv = g.inverse(X)
    ident = gdot(G, Ginv)
    for i in range(2):
        for j in range(2):
            want = 1.0 if i == j else 0.0
            assert ident[i, j].allclose(want, tol=1e-12)


def test_graded_points_match_real_bodies():
    alg = GrassmannAlgebra()
    g = conformal(2)
    Xr = np.array([0.7, 0.1])
    Xg = as_graded_array(Xr, alg)
    Gg = g.eval(Xg)
    Gr = g.eval(Xr)
    for i in range(2):
        for j in range(2):
            assert abs(Gg[i, j].body() - Gr[i, j]) <= 1e-14


def test_metric_selection():
    assert metric_by_name("minkowski", 3).label == "minkowski"
    m = metric_from_config('{"metric": "conformal", "d": 4}')
    assert m.label == "conformal" and m.d == 4
    with pytest.raises(ValueError):
        metric_by_name("schwarzschild", 4)
