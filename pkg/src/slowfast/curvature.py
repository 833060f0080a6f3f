"""Quadratic fiber corrections: the curvature maps psi.

After the linear change ``x = x1 + r phi(x1) y`` the slow equation reads
``x1' = r (Lam(x1) + Q(x1) y^2 + ...)`` where ``Q y^2`` is the vector of
quadratic forms ``<y, Q^i y>``.  Each step removes it through
``x1 = x2 + r psi(x2) y^2``, solving

    r sum_j dLam_ij psi^j + Q^i - A^T psi^i - psi^i A = 0

and then ``Q_{n+1} = -r (D psi_n) Lam``.  This needs the spectrum of ``A``
to stay away from its own negative.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .core import GridFunction, grid_derivative
from .errors import SingularSylvester
from .fibers import FiberLinearMap, SlowQuantities, directional

log = logging.getLogger(__name__)

SPECTRAL_GAP = 1e-6
PSI_COND_CAP = 1e12


def _taylor(g, dg, d2g, d3g, delta):
    """Graph value and Jacobian at ``x + delta`` from derivatives at ``x``."""
    d2d = np.einsum("nikj,nj->nik", d2g, delta)
    d3dd = np.einsum("nikjl,nj,nl->nik", d3g, delta, delta)
    gx = (g + np.einsum("nik,nk->ni", dg, delta) + 0.5 * np.einsum("nik,nk->ni", d2d, delta)
          + np.einsum("nik,nk->ni", d3dd, delta) / 6.0)
    dgx = dg + d2d + 0.5 * d3dd
    return gx, dgx


def slow_field_in_fiber_coordinates(fibermap: FiberLinearMap, d2g, d3g, valid, y):
    """``G(x1, y)``: slow velocity divided by the rate after the linear fiber change.

    ``y`` has shape ``(m, n_f)`` (one probe per valid node).  The graph is
    carried to the displaced point by a local Taylor expansion, which keeps
    ``G`` smooth in ``y`` so that second differences are meaningful.
    """
    system = fibermap.system
    man = fibermap.manifold
    r = fibermap.rate
    x1 = man.spec.nodes()[valid]
    phi = fibermap.phi.values[valid]
    dphi = fibermap.dphi.values[valid]
    delta = r * np.einsum("nij,nj->ni", phi, y)
    gx, dgx = _taylor(man.graph.values[valid], man.dgraph.values[valid],
                      d2g.values[valid], d3g.values[valid], delta)
    x = x1 + delta
    yy = gx + y
    Xd = system.X(x, yy)
    Yd = system.Y(x, yy) - r * np.einsum("nik,nk->ni", dgx, Xd)
    jac = np.eye(system.n_slow) + r * np.einsum("nijk,nj->nik", dphi, y)
    rhs = Xd - np.einsum("nij,nj->ni", phi, Yd)
    return np.linalg.solve(jac, rhs[..., None])[..., 0]


def extract_Q(fibermap: FiberLinearMap, h_y: Optional[float] = None):
    """Quadratic-in-``y`` part of the slow field as ``n_s`` symmetric matrices per node.

    Returns ``(Q, d2g, d3g)``; the graph derivatives are reused by the
    quadratic fiber parametrization.
    """
    man = fibermap.manifold
    d2g = grid_derivative(man.dgraph)
    d3g = grid_derivative(d2g)
    valid = fibermap.phi.valid & fibermap.dphi.valid & d3g.valid & d2g.valid
    if h_y is None:
        h_y = 1e-3 * (1.0 + man.graph.sup_norm())
    n_s, n_f = fibermap.system.n_slow, fibermap.system.n_fast
    m = int(valid.sum())
    eye = np.eye(n_f)

    def G(v):
        return slow_field_in_fiber_coordinates(fibermap, d2g, d3g, valid,
                                               np.broadcast_to(v, (m, n_f)))

    g0 = G(np.zeros(n_f))
    hess = np.zeros((m, n_s, n_f, n_f))
    for j in range(n_f):
        ej = h_y * eye[j]
        hess[:, :, j, j] = (G(ej) - 2.0 * g0 + G(-ej)) / h_y ** 2
        for k in range(j):
            ek = h_y * eye[k]
            mixed = (G(ej + ek) - G(ej - ek) - G(ek - ej) + G(-ej - ek)) / (4.0 * h_y ** 2)
            hess[:, :, j, k] = hess[:, :, k, j] = mixed
    vals = np.zeros(valid.shape + (n_s, n_f, n_f))
    vals[valid] = 0.5 * hess
    margin = max(fibermap.dphi.margin_nodes, d3g.margin_nodes)
    Q = GridFunction(man.spec, vals, valid, margin, symmetric=True)
    return Q, d2g, d3g


def spectral_gap(A) -> np.ndarray:
    """Per node ``min |l_i + l_j| / max |l|`` over eigenvalue pairs of ``A``."""
    ev = np.linalg.eigvals(A)
    pair = np.abs(ev[..., :, None] + ev[..., None, :]).min(axis=(-1, -2))
    return pair / np.maximum(np.abs(ev).max(axis=-1), np.finfo(float).tiny)


def psi_operator(dlam, A, rate):
    """Matrix of the coupled curvature operator on row-major ``vec(psi)``."""
    n_s, n_f = dlam.shape[-1], A.shape[-1]
    eye_s, eye_f = np.eye(n_s), np.eye(n_f)
    left = np.einsum("...ij,ac,bd->...iabjcd", rate * dlam, eye_f, eye_f)
    mid = np.einsum("ij,...ca,bd->...iabjcd", eye_s, A, eye_f)
    right = np.einsum("ij,ac,...db->...iabjcd", eye_s, eye_f, A)
    M = left - mid - right
    n = n_s * n_f * n_f
    return M.reshape(M.shape[:-6] + (n, n))


def solve_psi_batch(dlam, A, Q, rate, cond_cap=PSI_COND_CAP):
    """Solve the curvature equation at a batch of nodes; returns ``(psi, ok, asym)``.

    ``asym`` is the largest asymmetry of the raw solution before it is
    symmetrised.
    """
    shape = Q.shape
    n = int(np.prod(shape[-3:]))
    M = psi_operator(dlam, A, rate)
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(M)
    ok = np.isfinite(cond) & (cond <= cond_cap) & (spectral_gap(A) >= SPECTRAL_GAP)
    psi = np.zeros(shape)
    asym = 0.0
    if ok.any():
        raw = np.linalg.solve(M[ok], -Q[ok].reshape(-1, n, 1))[..., 0].reshape((-1,) + shape[-3:])
        sym = 0.5 * (raw + np.swapaxes(raw, -1, -2))
        asym = float(np.abs(raw - sym).max() / (1.0 + np.abs(sym).max()))
        psi[ok] = sym
    return psi, ok, asym


def solve_psi_step(sq: SlowQuantities, Q: GridFunction) -> GridFunction:
    """One coupled curvature solve on every valid node; singular nodes are masked."""
    valid = sq.dLam.valid & sq.A.valid & Q.valid
    psi_v, ok, asym = solve_psi_batch(sq.dLam.values[valid], sq.A.values[valid],
                                      Q.values[valid], sq.rate)
    if not ok.any():
        raise SingularSylvester("curvature operator singular at every node: "
                                "sigma(A) meets sigma(-A)")
    if asym > 1e-12:
        log.warning("raw curvature solve asymmetric by %.2e", asym)
    newvalid = np.zeros(valid.shape, dtype=bool)
    newvalid[valid] = ok
    out = np.zeros(Q.values.shape)
    out[valid] = psi_v
    return GridFunction(Q.spec, out, newvalid, max(Q.margin_nodes, sq.A.margin_nodes),
                        symmetric=True)


def Q_update(psi_n: GridFunction, sq: SlowQuantities) -> GridFunction:
    """``Q_{n+1} = -rate (D psi_n) Lam``; vanishes where ``Lam`` does."""
    dpsi = grid_derivative(psi_n)
    valid = dpsi.valid & sq.Lam.valid
    vals = np.zeros(psi_n.values.shape)
    v = -sq.rate * directional(dpsi.values[valid], sq.Lam.values[valid])
    vals[valid] = 0.5 * (v + np.swapaxes(v, -1, -2))
    return GridFunction(psi_n.spec, vals, valid, dpsi.margin_nodes, symmetric=True)


def quadratic_form(S, y):
    """Vector of ``<y, S^i y>`` for stacked symmetric matrices ``S``."""
    return np.einsum("...iab,...a,...b->...i", S, y, y)


@dataclass
class QuadraticFiberMap:
    """Cumulative curvature map ``psi = sum(psi_layers)`` and its residuals.

    ``Q_history[n]`` is the sup-norm of ``Q_n``; the last entry measures the
    quadratic coupling left after all layers.
    """

    fibermap: FiberLinearMap
    psi_layers: List[GridFunction]
    psi: GridFunction
    Q_layers: List[GridFunction]
    Q_history: List[float]
    d2graph: GridFunction
    spectral_gap_ok: bool = True
    warnings: List[str] = field(default_factory=list)

    @property
    def psi_cumulative(self) -> GridFunction:
        return self.psi

    @property
    def rate(self) -> float:
        return self.fibermap.rate

    def fiber_point(self, x_b, y):
        return quadratic_fiber_point(self, x_b, y)


def check_spectral_gap(sq: SlowQuantities, gap: float = SPECTRAL_GAP) -> float:
    """Smallest relative gap over the grid; raises when it is below ``gap``."""
    g = spectral_gap(sq.A.values[sq.A.valid])
    worst = float(g.min())
    if worst < gap:
        bad = int(np.count_nonzero(g < gap))
        raise SingularSylvester(
            f"sigma(A) and sigma(-A) intersect (relative gap {worst:.1e} < {gap:.0e}) "
            f"at {bad} nodes; the curvature step needs sigma(A) and sigma(-A) disjoint")
    return worst


def build_psi(fibermap: FiberLinearMap, N3: int, h_y: Optional[float] = None) -> QuadraticFiberMap:
    """Compute ``psi_0 .. psi_{N3-1}`` and the residuals ``Q_0 .. Q_N3``."""
    if N3 < 1:
        raise ValueError("N3 must be at least 1")
    sq = fibermap.quantities
    check_spectral_gap(sq)
    Q, d2g, _ = extract_Q(fibermap, h_y)
    Qs, hist, layers = [Q], [Q.sup_norm()], []
    psi = None
    for n in range(N3):
        step = solve_psi_step(sq, Q)
        layers.append(step)
        psi = step if psi is None else combine_sym(psi, step)
        Q = Q_update(step, sq)
        Qs.append(Q)
        hist.append(Q.sup_norm())
        log.debug("curvature step %d: |Q| = %.3e", n, hist[-1])
    warn = []
    masked = int(np.count_nonzero(sq.A.valid & Qs[0].valid & ~layers[0].valid))
    if masked:
        warn.append(f"{masked} nodes masked by singular curvature operators")
    return QuadraticFiberMap(fibermap, layers, psi, Qs, hist, d2g, True, warn)


def combine_sym(a: GridFunction, b: GridFunction) -> GridFunction:
    out = a + b
    return out.with_values(out.values, symmetric=True)


def quadratic_fiber_point(qmap: QuadraticFiberMap, x_b, y):
    """Point on the quadratic fiber through base ``x_b`` at fast parameter ``y``.

    Returns ``(x0, y0)`` in the system's own coordinates.
    """
    fm = qmap.fibermap
    man = fm.manifold
    r = fm.rate
    x_b = np.atleast_1d(np.asarray(x_b, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    lin = r * np.einsum("...ij,...j->...i", fm.phi(x_b), y)
    quad = r * quadratic_form(qmap.psi(x_b), y)
    dx = lin + quad
    dg = man.dgraph(x_b)
    d2g = qmap.d2graph(x_b)
    y0 = (y + man.graph(x_b) + np.einsum("...ik,...k->...i", dg, dx)
          + 0.5 * np.einsum("...ikj,...k,...j->...i", d2g, lin, lin))
    return x_b + dx, y0
