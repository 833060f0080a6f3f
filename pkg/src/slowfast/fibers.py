"""Linear fiber directions: the matrix field phi and the fiber frames.

With ``r`` the slow rate (``eps``, or ``1`` for non-standard systems) and the
graph ``g`` from :mod:`slowfast.manifold`, the quantities at ``(x, g(x))`` are

    Lam = X,  mu0 = dyX,  dLam = dxX + dyX Dg,  A = -r Dg dyX + dyY

and each step solves ``r dLam phi_n + mu_n - phi_n A = 0`` followed by
``mu_{n+1} = -r (D phi_n) Lam``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .core import GridFunction, field_partials, grid_derivative
from .errors import IterationBudgetExceeded, SingularA, SingularSylvester
from .manifold import ManifoldApprox, matvec

log = logging.getLogger(__name__)

SYLVESTER_COND_CAP = 1e12


@dataclass(frozen=True)
class SlowQuantities:
    """Grid fields of the slow vector field along the computed graph."""

    Lam: GridFunction
    dLam: GridFunction
    mu0: GridFunction
    A: GridFunction
    rate: float


def assemble_lambda_A_mu(manifold: ManifoldApprox, cond_cap: Optional[float] = None) -> SlowQuantities:
    """Evaluate ``Lam``, ``dLam``, ``mu0`` and ``A`` at the valid graph nodes."""
    system = manifold.system
    g, dg = manifold.graph, manifold.dgraph
    valid = g.valid & dg.valid
    x = g.spec.nodes()[valid]
    gv, dgv = g.values[valid], dg.values[valid]
    p = field_partials(system, x, gv)
    r = system.slow_rate
    lam = system.X(x, gv)
    dlam = p["dxX"] + p["dyX"] @ dgv
    A = -r * dgv @ p["dyX"] + p["dyY"]
    cap = system.cond_cap if cond_cap is None else cond_cap
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(A)
    ok = np.isfinite(cond) & (cond <= cap)
    if not ok.any():
        raise SingularA("A fails the condition-number cap at every valid node")
    full = np.zeros(valid.shape, dtype=bool)
    full[valid] = ok
    m = max(g.margin_nodes, dg.margin_nodes)

    def grid(vals):
        out = np.zeros(valid.shape + vals.shape[1:])
        out[valid] = vals
        return GridFunction(g.spec, out, full, m)

    return SlowQuantities(grid(lam), grid(dlam), grid(p["dyX"]), grid(A), r)


def sylvester_operator(dlam, A, rate):
    """Matrix of ``phi -> rate dlam phi - phi A`` on row-major ``vec(phi)``."""
    n_s, n_f = dlam.shape[-1], A.shape[-1]
    eye_s, eye_f = np.eye(n_s), np.eye(n_f)
    left = np.einsum("...ik,jl->...ijkl", rate * dlam, eye_f)
    right = np.einsum("ik,...lj->...ijkl", eye_s, A)
    M = left - right
    return M.reshape(M.shape[:-4] + (n_s * n_f, n_s * n_f))


def solve_sylvester_batch(dlam, A, mu, rate, cond_cap=SYLVESTER_COND_CAP):
    """Solve ``rate dlam phi + mu - phi A = 0`` at a batch of nodes.

    Returns ``(phi, ok)``; rows with a numerically singular operator are
    flagged in ``ok`` and left at zero.
    """
    n_s, n_f = mu.shape[-2:]
    M = sylvester_operator(dlam, A, rate)
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(M)
    ok = np.isfinite(cond) & (cond <= cond_cap)
    phi = np.zeros(mu.shape)
    if ok.any():
        rhs = -mu[ok].reshape(-1, n_s * n_f, 1)
        phi[ok] = np.linalg.solve(M[ok], rhs)[..., 0].reshape(-1, n_s, n_f)
    return phi, ok


def solve_phi_step(sq: SlowQuantities, mu: GridFunction) -> GridFunction:
    """One Sylvester solve on every valid node; singular nodes are masked."""
    valid = sq.dLam.valid & sq.A.valid & mu.valid
    phi_v, ok = solve_sylvester_batch(sq.dLam.values[valid], sq.A.values[valid],
                                      mu.values[valid], sq.rate)
    if not ok.any():
        raise SingularSylvester("spectra of rate*dLam and A intersect at every node")
    newvalid = np.zeros(valid.shape, dtype=bool)
    newvalid[valid] = ok
    out = np.zeros(mu.values.shape)
    out[valid] = phi_v
    res = sq.rate * sq.dLam.values[valid] @ phi_v + mu.values[valid] - phi_v @ sq.A.values[valid]
    scale = 1.0 + np.abs(mu.values[valid]).max(axis=(-1, -2))
    bad = ok & (np.abs(res).max(axis=(-1, -2)) > 1e-12 * scale * _cond_slack(sq, valid))
    if bad.any():
        log.warning("Sylvester residual above tolerance at %d nodes", int(bad.sum()))
    return GridFunction(mu.spec, out, newvalid, max(mu.margin_nodes, sq.A.margin_nodes))


def _cond_slack(sq, valid):
    # allow for the operator's own scale in the residual bound
    return 1.0 + np.abs(sq.A.values[valid]).max(axis=(-1, -2))


def mu_update(phi_n: GridFunction, sq: SlowQuantities) -> GridFunction:
    """``mu_{n+1} = -rate (D phi_n) Lam``, contracted over the slow index."""
    dphi = grid_derivative(phi_n)
    valid = dphi.valid & sq.Lam.valid
    vals = np.zeros(phi_n.values.shape)
    vals[valid] = -sq.rate * directional(dphi.values[valid], sq.Lam.values[valid])
    return GridFunction(phi_n.spec, vals, valid, dphi.margin_nodes)


def directional(dF, lam):
    """``sum_k dF[n, ..., k] lam[n, k]`` for batched Jacobian payloads."""
    return np.einsum("n...k,nk->n...", dF, lam)


def phi_residual(sq: SlowQuantities, phi: GridFunction, dphi: GridFunction) -> GridFunction:
    """Residual ``r dLam phi - r (D phi) Lam + mu0 - phi A`` of the summed equation."""
    valid = phi.valid & dphi.valid & sq.A.valid & sq.mu0.valid
    p, dp = phi.values[valid], dphi.values[valid]
    r = sq.rate
    res = (r * sq.dLam.values[valid] @ p - r * directional(dp, sq.Lam.values[valid])
           + sq.mu0.values[valid] - p @ sq.A.values[valid])
    out = np.zeros(phi.values.shape)
    out[valid] = res
    return GridFunction(phi.spec, out, valid, max(phi.margin_nodes, dphi.margin_nodes))


def coupling_residual(manifold: ManifoldApprox, sq: SlowQuantities, phi: GridFunction,
                      dphi: GridFunction) -> GridFunction:
    """Linear fast coupling left in the slow equation after the change of variables.

    Unlike :func:`phi_residual` this keeps the terms generated by the graph's
    own invariance residual ``rho``, so it cannot drop below the accuracy of
    the manifold.
    """
    rho = manifold.rho
    drho = grid_derivative(rho)
    base = phi_residual(sq, phi, dphi)
    valid = base.valid & drho.valid & rho.valid
    r = sq.rate
    p, dp = phi.values[valid], dphi.values[valid]
    rv = rho.values[valid]
    extra = -r * p @ drho.values[valid] @ p + r * directional(dp, matvec(p, rv))
    out = np.zeros(phi.values.shape)
    out[valid] = base.values[valid] + extra
    return GridFunction(phi.spec, out, valid, max(base.margin_nodes, drho.margin_nodes))


@dataclass
class FiberLinearMap:
    """Cumulative fiber map ``phi = sum(phi_layers)`` with diagnostics.

    ``mu_history[n]`` is the sup-norm of ``mu_n``; ``residual_history[n]`` is
    ``E_phi`` of the partial sum through ``phi_n``.
    """

    manifold: ManifoldApprox
    quantities: SlowQuantities
    phi_layers: List[GridFunction]
    phi: GridFunction
    dphi: GridFunction
    mu_layers: List[GridFunction]
    mu_history: List[float]
    residual_history: List[float]
    residual: GridFunction
    stagnated: bool = False
    warnings: List[str] = field(default_factory=list)

    @property
    def system(self):
        return self.manifold.system

    @property
    def rate(self) -> float:
        return self.quantities.rate

    @property
    def E_phi(self) -> float:
        return self.residual.sup_norm()

    @property
    def phi_cumulative(self) -> GridFunction:
        return self.phi

    @property
    def lambda_grid(self) -> GridFunction:
        return self.quantities.Lam

    @property
    def A_grid(self) -> GridFunction:
        return self.quantities.A

    def coupling_error(self) -> float:
        return coupling_residual(self.manifold, self.quantities, self.phi, self.dphi).sup_norm()

    def tangent_frame(self, x_b) -> np.ndarray:
        """Columns spanning the fiber tangent space at base points ``x_b``.

        Shape ``(..., n_s + n_f, n_f)``, slow rows first.
        """
        p = self.rate * self.phi(x_b)
        dg = self.manifold.dgraph(x_b)
        return frames_from(p, dg)[0]

    def normal_frame(self, x_b) -> np.ndarray:
        """Rows annihilating the fiber tangent space; shape ``(..., n_s, n_s + n_f)``."""
        p = self.rate * self.phi(x_b)
        dg = self.manifold.dgraph(x_b)
        return frames_from(p, dg)[1]

    def frames_at_nodes(self):
        """Tangent and normal frames at every node valid for both ``phi`` and ``Dg``."""
        valid = self.phi.valid & self.manifold.dgraph.valid
        p = self.rate * self.phi.values[valid]
        dg = self.manifold.dgraph.values[valid]
        t, n = frames_from(p, dg)
        return self.phi.spec.nodes()[valid], t, n


def frames_from(p, dg):
    """Tangent ``[p; I + Dg p]`` and normal ``[I + p Dg, -p]`` from scaled ``p = r phi``."""
    n_s, n_f = p.shape[-2:]
    lead = p.shape[:-2]
    eye_f = np.broadcast_to(np.eye(n_f), lead + (n_f, n_f))
    eye_s = np.broadcast_to(np.eye(n_s), lead + (n_s, n_s))
    tangent = np.concatenate([p, eye_f + dg @ p], axis=-2)
    normal = np.concatenate([eye_s + p @ dg, -p], axis=-1)
    return tangent, normal


def build_phi(manifold: ManifoldApprox, N2: int, stop_on_stagnation: bool = True,
              strict: bool = False) -> FiberLinearMap:
    """Run ``N2 + 1`` Sylvester solves starting from ``mu0`` (so ``phi_0 .. phi_N2``)."""
    if N2 < 0:
        raise ValueError("N2 must be non-negative")
    sq = assemble_lambda_A_mu(manifold)
    mu = sq.mu0
    layers: List[GridFunction] = []
    mus = [mu]
    mu_hist = [mu.sup_norm()]
    hist: List[float] = []
    states = []
    phi = None
    stagnated = False
    warn: List[str] = []
    for n in range(N2 + 1):
        step = solve_phi_step(sq, mu)
        layers.append(step)
        phi = step if phi is None else phi + step
        dphi = grid_derivative(phi)
        res = phi_residual(sq, phi, dphi)
        hist.append(res.sup_norm())
        states.append((phi, dphi, res))
        log.debug("SOF step %d: E_phi = %.3e", n, hist[-1])
        if stop_on_stagnation and n >= 3 and all(hist[k] >= hist[k - 1] for k in range(n - 2, n + 1)):
            stagnated = True
            break
        if n < N2:
            mu = mu_update(step, sq)
            mus.append(mu)
            mu_hist.append(mu.sup_norm())
    best = int(np.argmin(hist)) if stagnated else len(hist) - 1
    if stagnated:
        msg = f"E_phi stagnated at {hist[best]:.3e} after {best + 1} solves; kept the best map"
        if strict:
            raise IterationBudgetExceeded(msg)
        warn.append(msg)
        layers = layers[:best + 1]
    phi, dphi, res = states[best]
    masked = int(np.count_nonzero(sq.A.valid & ~layers[0].valid))
    if masked:
        warn.append(f"{masked} nodes masked by singular Sylvester operators")
    return FiberLinearMap(manifold, sq, layers, phi, dphi, mus, mu_hist, hist, res, stagnated, warn)
