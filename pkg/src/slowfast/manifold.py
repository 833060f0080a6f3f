"""Iterative slow-manifold computation (straightening-out iteration).

The graph ``y = g(x)`` is refined by repeatedly solving, node by node,

    -r Dg_prev(x) X(x, v) + Y(x, v) = 0

for ``v``, where ``r`` is the system's slow rate.  Layers are stored as the
increments ``eta_n = g_n - g_{n-1}`` on a shared grid.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .core import (GridFunction, GridSpec, SlowFastSystem, field_partials,
                   grid_derivative, newton_solve)
from .errors import IterationBudgetExceeded, NumericalBreakdown

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-13
NEWTON_MAXITER = 50


def matvec(m, v):
    return np.einsum("...ij,...j->...i", m, v)


def solve_eta0(system: SlowFastSystem, spec: GridSpec, cond_cap: Optional[float] = None):
    """Critical manifold ``Y(x, eta0(x)) = 0`` by Newton at every node.

    Returns ``(eta0, deta0)``: the root and its slow-variable Jacobian from
    the implicit function theorem, ``-(dyY)^-1 dxY``.  Nodes where ``dyY``
    fails the condition-number cap are masked out.
    """
    cap = system.cond_cap if cond_cap is None else cond_cap
    nodes = spec.nodes().reshape(-1, spec.ndim)
    guess = system.guess(nodes)

    def F(v, idx):
        return system.Y(nodes[idx], v)

    def J(v, idx):
        return field_partials(system, nodes[idx], v)["dyY"]

    root = newton_solve(F, J, guess, tol=NEWTON_TOL, maxiter=NEWTON_MAXITER)
    p = field_partials(system, nodes, root)
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(p["dyY"])
    ok = np.isfinite(cond) & (cond <= cap)
    if not ok.any():
        raise NumericalBreakdown("fastness condition fails at every grid node")
    deta = np.zeros(nodes.shape[:1] + (system.n_fast, system.n_slow))
    deta[ok] = -np.linalg.solve(p["dyY"][ok], p["dxY"][ok])
    shape = spec.shape
    valid = ok.reshape(shape)
    eta0 = GridFunction(spec, root.reshape(shape + (system.n_fast,)), valid)
    d0 = GridFunction(spec, deta.reshape(shape + (system.n_fast, system.n_slow)), valid)
    return eta0, d0


def invariance_residual(system: SlowFastSystem, graph: GridFunction, dgraph: GridFunction):
    """Residual ``-r Dg X(x, g) + Y(x, g)`` of the invariance equation."""
    valid = graph.valid & dgraph.valid
    x = graph.spec.nodes()[valid]
    g = graph.values[valid]
    dg = dgraph.values[valid]
    res = -system.slow_rate * matvec(dg, system.X(x, g)) + system.Y(x, g)
    out = np.zeros(graph.values.shape)
    out[valid] = res
    return GridFunction(graph.spec, out, valid, max(graph.margin_nodes, dgraph.margin_nodes))


def residual_rho(system: SlowFastSystem, graph: GridFunction, dgraph: GridFunction):
    """Residual grid function and its sup-norm ``E_eta`` over valid nodes."""
    rho = invariance_residual(system, graph, dgraph)
    return rho, rho.sup_norm()


def so_step(system: SlowFastSystem, graph: GridFunction, dgraph: GridFunction):
    """One straightening-out step; returns the next total graph and its Jacobian.

    ``graph`` is the current total graph and ``dgraph`` its Jacobian; the
    Newton iteration at each node starts from the current graph value.  The
    new Jacobian comes from differentiating the step equation itself,

        Dg_new = -(r Dg dyX - dyY)^-1 (-r (D^2 g) X - r Dg dxX + dxY),

    so only ``dgraph`` is differentiated on the grid.  Differencing the
    stored graph instead would amplify its rounding noise by ``O(1/h)`` at
    every step.
    """
    d2 = grid_derivative(dgraph)
    valid = graph.valid & dgraph.valid
    x = graph.spec.nodes()[valid]
    dg = dgraph.values[valid]
    r = system.slow_rate

    def F(v, idx):
        return -r * matvec(dg[idx], system.X(x[idx], v)) + system.Y(x[idx], v)

    def J(v, idx):
        p = field_partials(system, x[idx], v)
        return -r * dg[idx] @ p["dyX"] + p["dyY"]

    v = newton_solve(F, J, graph.values[valid], tol=NEWTON_TOL, maxiter=NEWTON_MAXITER)
    out = np.zeros(graph.values.shape)
    out[valid] = v
    new = GridFunction(graph.spec, out, valid, max(graph.margin_nodes, dgraph.margin_nodes))

    dvalid = valid & d2.valid
    sel = d2.valid[valid]
    xs, vs, dgs = x[sel], v[sel], dg[sel]
    p = field_partials(system, xs, vs)
    Xv = system.X(xs, vs)
    dxF = (-r * np.einsum("nikj,nk->nij", d2.values[dvalid], Xv)
           - r * dgs @ p["dxX"] + p["dxY"])
    dyF = -r * dgs @ p["dyX"] + p["dyY"]
    dnew = np.zeros(dgraph.values.shape)
    dnew[dvalid] = -np.linalg.solve(dyF, dxF)
    if not np.all(np.isfinite(dnew)):
        raise NumericalBreakdown("non-finite graph Jacobian")
    return new, GridFunction(graph.spec, dnew, dvalid, d2.margin_nodes)


@dataclass
class ManifoldApprox:
    """Slow-manifold approximation on a grid.

    ``graph`` is the total graph ``seed + sum(eta_layers)`` in the system's
    own coordinates and ``dgraph`` its Jacobian (exact for the seed, then
    propagated through each step).  ``residual_history[n]`` is
    the sup-norm of the invariance residual of the graph after ``n`` layers.
    """

    system: SlowFastSystem
    spec: GridSpec
    eta0: GridFunction
    seed: GridFunction
    eta_layers: List[GridFunction]
    graph: GridFunction
    dgraph: GridFunction
    residual_history: List[float]
    rho: GridFunction
    stagnated: bool = False
    masked_nodes: int = 0
    warnings: List[str] = field(default_factory=list)

    @property
    def n_layers(self) -> int:
        return len(self.eta_layers)

    @property
    def E_eta(self) -> float:
        return self.rho.sup_norm()

    @property
    def eta_cumulative(self) -> GridFunction:
        """Sum of the correction layers (graph minus seed)."""
        return self.graph - self.seed

    def eta(self, x) -> np.ndarray:
        return self.graph(x)

    def deta(self, x) -> np.ndarray:
        return self.dgraph(x)

    def partial_graph(self, n: int) -> GridFunction:
        """Total graph after the first ``n`` layers."""
        g = self.seed
        for layer in self.eta_layers[:n]:
            g = g + layer
        return g


def _seed(system, spec, seed, cond_cap):
    eta0, d0 = solve_eta0(system, spec, cond_cap)
    if seed == "root":
        return eta0, eta0, d0
    if seed == "zero":
        z = np.zeros(eta0.values.shape)
        dz = np.zeros(d0.values.shape)
        return eta0, GridFunction(spec, z, eta0.valid), GridFunction(spec, dz, eta0.valid)
    raise ValueError(f"unknown seed {seed!r}; use 'root' or 'zero'")


def build_manifold(system: SlowFastSystem, spec: GridSpec, N1: int, seed: str = "root",
                   stop_on_stagnation: bool = True, cond_cap: Optional[float] = None,
                   strict: bool = False) -> ManifoldApprox:
    """Run ``N1`` straightening-out steps from the chosen seed graph.

    ``seed='root'`` starts from the critical manifold ``eta0``; ``'zero'``
    starts from ``y = 0`` so that the first layer is the critical manifold
    itself.  When the residual fails to decrease for three consecutive steps
    the iteration stops and keeps the best graph; with ``strict`` this raises
    :class:`IterationBudgetExceeded` instead.
    """
    if N1 < 0:
        raise ValueError("N1 must be non-negative")
    eta0, seed_g, seed_dg = _seed(system, spec, seed, cond_cap)
    masked = int(np.count_nonzero(~eta0.valid))
    graph, dgraph = seed_g, seed_dg
    rho, e = residual_rho(system, graph, dgraph)
    history = [e]
    graphs = [(graph, dgraph, rho)]
    layers: List[GridFunction] = []
    stagnated = False
    warn: List[str] = []
    if masked:
        warn.append(f"{masked} grid nodes masked by the fastness condition")
    for n in range(1, N1 + 1):
        new, dnew = so_step(system, graph, dgraph)
        layers.append(new - graph)
        graph, dgraph = new, dnew
        rho, e = residual_rho(system, graph, dgraph)
        history.append(e)
        graphs.append((graph, dgraph, rho))
        log.debug("SO step %d: E_eta = %.3e", n, e)
        if stop_on_stagnation and n >= 3 and all(
                history[k] >= history[k - 1] for k in range(n - 2, n + 1)):
            stagnated = True
            break
    best = int(np.argmin(history)) if stagnated else len(history) - 1
    if stagnated:
        msg = (f"residual stagnated at {history[best]:.3e} after {best} steps; "
               f"kept the best graph")
        if strict:
            raise IterationBudgetExceeded(msg)
        warn.append(msg)
        layers = layers[:best]
    graph, dgraph, rho = graphs[best]
    return ManifoldApprox(system, spec, eta0, seed_g, layers, graph, dgraph, history, rho,
                          stagnated, masked, warn)
