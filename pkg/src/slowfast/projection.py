"""Projections of off-manifold points onto base points of the slow manifold."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .curvature import QuadraticFiberMap, quadratic_form
from .errors import FixedPointDiverged, InvalidParameters
from .fibers import FiberLinearMap
from .manifold import ManifoldApprox

MAXITER = 50
STEP_TOL = 1e-12


@dataclass(frozen=True)
class ProjectionResult:
    base_x: np.ndarray
    base_y: np.ndarray
    iterations: int
    residual: float
    method: str


def naive_project(manifold: ManifoldApprox, x0, y0) -> ProjectionResult:
    """Keep the slow coordinate and drop onto the graph."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    return ProjectionResult(x0, manifold.eta(x0), 0, 0.0, "naive")


def _fixed_point(manifold, x0, y0, shift, method, maxiter, tol):
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    y = np.atleast_1d(np.asarray(y0, dtype=float)) - manifold.eta(x0)
    xb = x0.copy()
    for it in range(1, maxiter + 1):
        new = x0 - shift(xb, y)
        step = float(np.max(np.abs(new - xb)))
        xb = new
        if step <= tol:
            # the last pass only confirmed convergence; an on-manifold point reports 0
            res = float(np.max(np.abs(xb + shift(xb, y) - x0)))
            return ProjectionResult(xb, manifold.eta(xb), it - 1, res, method)
        if not np.all(np.isfinite(xb)):
            break
    raise FixedPointDiverged(f"{method} projection did not settle in {maxiter} iterations")


def _check_small(fibermap, x0, y):
    size = np.abs(fibermap.rate * fibermap.phi(x0)).max() * np.abs(y).max()
    if size >= 0.5:
        raise InvalidParameters(f"fiber map too far from identity here (|r phi| |y| = {size:.2f})")


def linear_project(fibermap: FiberLinearMap, x0, y0, maxiter: int = MAXITER,
                   tol: float = STEP_TOL) -> ProjectionResult:
    """Solve ``x0 = x_b + r phi(x_b) y`` with ``y = y0 - eta(x0)`` by fixed-point iteration."""
    man = fibermap.manifold
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    _check_small(fibermap, x0, np.atleast_1d(y0) - man.eta(x0))
    r = fibermap.rate

    def shift(xb, y):
        return r * fibermap.phi(xb) @ y

    return _fixed_point(man, x0, y0, shift, "linear", maxiter, tol)


def quadratic_project(qmap: QuadraticFiberMap, x0, y0, maxiter: int = MAXITER,
                      tol: float = STEP_TOL) -> ProjectionResult:
    """As :func:`linear_project` with the curvature term ``r psi(x_b) y^2`` added."""
    fm = qmap.fibermap
    man = fm.manifold
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    _check_small(fm, x0, np.atleast_1d(y0) - man.eta(x0))
    r = fm.rate

    def shift(xb, y):
        return r * (fm.phi(xb) @ y + quadratic_form(qmap.psi(xb), y))

    return _fixed_point(man, x0, y0, shift, "quadratic", maxiter, tol)


def project(method: str, manifold: ManifoldApprox, x0, y0,
            fibermap: Optional[FiberLinearMap] = None,
            qmap: Optional[QuadraticFiberMap] = None) -> ProjectionResult:
    if method == "naive":
        return naive_project(manifold, x0, y0)
    if method == "linear":
        return linear_project(fibermap, x0, y0)
    if method == "quadratic":
        return quadratic_project(qmap, x0, y0)
    raise ValueError(f"unknown projection {method!r}")
