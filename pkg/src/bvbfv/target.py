"""Target-space metrics: evaluation, derivatives, index raising.

Metrics evaluate at real points and at points with nilpotent (GradedScalar)
coordinates; the conformal factor uses the exact terminating exponential,
so graded evaluation stays exact.  Derivatives are analytic when supplied
and central finite differences (step 1e-5) otherwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .forms import as_graded_array, gdot, graded_matrix_inverse
from .graded import GradedScalar, NilpotentBodyError


class DegenerateMetricError(ValueError):
    """Raised when a metric (or induced metric) is singular at a point."""


def _is_graded_point(X) -> bool:
    return np.asarray(X).dtype == object


@dataclass
class TargetMetric:
    """Pseudo-Riemannian metric on R^d.

    eval_fn(X) -> (d, d) array; deriv_fn(X) -> (d, d, d) array with
    deriv[mu, nu, rho] = dG_{mu nu}/dX^rho, or None for the FD fallback.
    """

    d: int
    label: str
    eval_fn: Callable
    deriv_fn: Callable | None = None
    fd_step: float = 1e-5

    def eval(self, X) -> np.ndarray:
        return self.eval_fn(np.asarray(X))

    def deriv(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.deriv_fn is not None:
            return self.deriv_fn(X)
        out = np.zeros((self.d, self.d, self.d))
        h = self.fd_step
        for rho in range(self.d):
            e = np.zeros(self.d)
            e[rho] = 1.0
            out[:, :, rho] = (self.eval(X + h * e) - self.eval(X - h * e)) / (2.0 * h)
        return out

    def inverse(self, X) -> np.ndarray:
        G = self.eval(X)
        if _is_graded_point(X) or np.asarray(G).dtype == object:
            algebra = _find_algebra(X)
            try:
                return graded_matrix_inverse(as_graded_array(G, algebra), algebra)
            except NilpotentBodyError as exc:
                raise DegenerateMetricError(f"metric '{self.label}' degenerate") from exc
        if abs(np.linalg.det(G)) < 1e-14:
            raise DegenerateMetricError(f"metric '{self.label}' degenerate at {X}")
        return np.linalg.inv(G)

    def raise_index(self, X, covector) -> np.ndarray:
        """J^mu = G^{mu nu} J_nu."""
        G = self.eval(X)
        cov = np.asarray(covector)
        if _is_graded_point(X) or cov.dtype == object or np.asarray(G).dtype == object:
            return gdot(self.inverse(X), cov)
        try:
            return np.linalg.solve(G, cov)
        except np.linalg.LinAlgError as exc:
            raise DegenerateMetricError(f"metric '{self.label}' degenerate at {X}") from exc

    def lower_index(self, X, vector) -> np.ndarray:
        G = self.eval(X)
        v = np.asarray(vector)
        if np.asarray(G).dtype == object or v.dtype == object:
            return gdot(np.asarray(G, dtype=object), v)
        return G @ v


def _find_algebra(X):
    for x in np.asarray(X).ravel():
        if isinstance(x, GradedScalar):
            return x.algebra
    raise ValueError("no GradedScalar entries found")


def minkowski(d: int) -> TargetMetric:
    eta = np.diag([-1.0] + [1.0] * (d - 1))

    def eval_fn(X):
        if _is_graded_point(X):
            return as_graded_array(eta, _find_algebra(X))
        return eta.copy()

    def deriv_fn(X):
        return np.zeros((d, d, d))

    return TargetMetric(d, "minkowski", eval_fn, deriv_fn)


CONFORMAL_COUPLING = 0.1


def conformal(d: int) -> TargetMetric:
    """G = exp(2 Omega) eta with Omega = 0.1 (X^0)^2."""
    eta = np.diag([-1.0] + [1.0] * (d - 1))

    def eval_fn(X):
        x0 = np.asarray(X).ravel()[0]
        if isinstance(x0, GradedScalar):
            factor = (x0 * x0 * (2.0 * CONFORMAL_COUPLING)).exp()
            return gdot(np.array([[factor]], dtype=object),
                        as_graded_array(eta, x0.algebra).reshape(1, -1)).reshape(d, d)
        return np.exp(2.0 * CONFORMAL_COUPLING * float(x0) ** 2) * eta

    def deriv_fn(X):
        X = np.asarray(X, dtype=float)
        out = np.zeros((d, d, d))
        # dG/dX^0 = 2 dOmega/dX^0 G, dOmega/dX^0 = 2 * c * X^0
        out[:, :, 0] = 4.0 * CONFORMAL_COUPLING * X[0] * eval_fn(X)
        return out

    return TargetMetric(d, "conformal", eval_fn, deriv_fn)


_BUILTIN = {"minkowski": minkowski, "conformal": conformal}


def metric_by_name(name: str, d: int) -> TargetMetric:
    try:
        return _BUILTIN[name](d)
    except KeyError as exc:
        raise ValueError(f"unknown metric '{name}'; have {sorted(_BUILTIN)}") from exc


def metric_from_config(config) -> TargetMetric:
    """Select a metric from a dict or a JSON string/path-like payload."""
    if isinstance(config, str):
        config = json.loads(config)
    name = config.get("metric", "minkowski")
    d = int(config.get("d", 2))
    return metric_by_name(name, d)
