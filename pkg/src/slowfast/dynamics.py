"""Trajectory integration and the fiber-comparison experiments.

Integration uses the Dormand-Prince 5(4) pair from :func:`scipy.integrate.solve_ivp`
with its continuous extension for output at requested times.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from .core import SlowFastSystem
from .curvature import QuadraticFiberMap, quadratic_fiber_point
from .errors import InvalidSweep, StepSizeUnderflow
from .fibers import FiberLinearMap
from .manifold import ManifoldApprox

RTOL = 1e-10
ATOL = 1e-12


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    z: np.ndarray
    n_steps: int
    n_rejected: int

    @property
    def final(self) -> np.ndarray:
        return self.z[-1]


def _solve(fun, z0, t_end, rtol, atol, t_eval):
    z0 = np.asarray(z0, dtype=float).ravel()
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    if not np.all(np.isfinite(z0)):
        raise ValueError("initial state must be finite")
    sol = solve_ivp(fun, (0.0, float(t_end)), z0, method="RK45", rtol=rtol, atol=atol,
                    t_eval=t_eval, dense_output=False)
    if sol.status != 0 or not np.all(np.isfinite(sol.y)):
        raise StepSizeUnderflow(f"integration stopped at t={sol.t[-1]:.6g}: {sol.message}")
    n_acc = len(sol.t) - 1 if t_eval is None else None
    # RK45 spends six field evaluations per attempted step plus two to start
    attempts = max((sol.nfev - 2) // 6, 0)
    if n_acc is None:
        n_acc = attempts
    return Trajectory(sol.t, sol.y.T, int(n_acc), int(max(attempts - n_acc, 0)))


def integrate(system: SlowFastSystem, z0, t_end: float, rtol: float = RTOL, atol: float = ATOL,
              t_eval: Optional[Sequence[float]] = None) -> Trajectory:
    """Integrate the full system from ``z0 = (x, y)`` over ``[0, t_end]`` in fast time."""
    return _solve(lambda t, z: system.rhs(z), z0, t_end, rtol, atol, t_eval)


def reduced_flow(manifold: ManifoldApprox, x0, tau_end: float, rtol: float = RTOL,
                 atol: float = ATOL, t_eval=None) -> Trajectory:
    """Slow flow ``x' = X(x, eta(x))`` on the computed graph, in slow time ``tau = r t``."""
    system = manifold.system

    def fun(t, x):
        return system.X(x, manifold.eta(x))

    return _solve(fun, np.atleast_1d(x0), tau_end, rtol, atol, t_eval)


def order_fit(xs, ys) -> Tuple[float, float, float]:
    """Least-squares line through ``(log x, log y)``: ``(slope, intercept, rms residual)``."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise InvalidSweep("order_fit needs two 1-d arrays of equal length")
    if xs.size < 4:
        raise InvalidSweep(f"order fit requires at least 4 points, got {xs.size}")
    if np.any(~np.isfinite(xs)) or np.any(~np.isfinite(ys)) or np.any(xs <= 0) or np.any(ys <= 0):
        raise InvalidSweep("order fit needs finite positive samples")
    lx, ly = np.log(xs), np.log(ys)
    slope, intercept = np.polyfit(lx, ly, 1)
    rms = float(np.sqrt(np.mean((ly - (slope * lx + intercept)) ** 2)))
    return float(slope), float(intercept), rms


@dataclass
class ComparisonReport:
    """Distances ``upsilon`` at ``t = 1/eps`` between the base run and each offset run."""

    sweep: str
    values: np.ndarray
    upsilon: Dict[str, np.ndarray]
    fits: Dict[str, Tuple[float, float, float]] = field(default_factory=dict)
    errors: Dict[str, List[Optional[str]]] = field(default_factory=dict)

    def slope(self, name: str) -> float:
        return self.fits[name][0]

    def fit_all(self):
        for name, ups in self.upsilon.items():
            ok = np.isfinite(ups) & (ups > 0) & (self.values > 0)
            self.fits[name] = order_fit(self.values[ok], ups[ok])
        return self


def worker_count(n_tasks: int) -> int:
    """Workers for a sweep, capped by ``SLOWFAST_THREADS`` when set."""
    cap = os.environ.get("SLOWFAST_THREADS")
    limit = os.cpu_count() or 1
    if cap:
        limit = max(1, int(cap))
    return max(1, min(limit, n_tasks))


def _pmap(fn, items):
    items = list(items)
    n = worker_count(len(items))
    if n == 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def offset_starts(fibermap: FiberLinearMap, x_b0, s: float,
                  qmap: Optional[QuadraticFiberMap] = None) -> Dict[str, np.ndarray]:
    """Initial states of the base, naive, linear and (optional) quadratic runs."""
    man = fibermap.manifold
    system = man.system
    xb = np.atleast_1d(np.asarray(x_b0, dtype=float))
    base = np.concatenate([xb, man.eta(xb)])
    e = np.zeros(system.n_fast)
    e[0] = 1.0
    v = fibermap.tangent_frame(xb)[:, 0]
    starts = {
        "base": base,
        "naive": base + s * np.concatenate([np.zeros(system.n_slow), e]),
        "linear": base + s * v / np.linalg.norm(v),
    }
    if qmap is not None:
        x0, y0 = quadratic_fiber_point(qmap, xb, s * e)
        starts["quadratic"] = np.concatenate([x0, y0])
    return starts


def _distances(system, starts, t_end, rtol, atol):
    finals = {k: integrate(system, z, t_end, rtol, atol).final for k, z in starts.items()}
    return {k: float(np.linalg.norm(finals[k] - finals["base"])) for k in starts if k != "base"}


def compare_offsets(fibermap: FiberLinearMap, x_b0, s_values, qmap: Optional[QuadraticFiberMap] = None,
                    rtol: float = RTOL, atol: float = ATOL, fit: bool = True) -> ComparisonReport:
    """Offset sweep at fixed ``eps``: distances at ``t = 1/eps`` versus ``s``."""
    system = fibermap.system
    s_values = np.asarray(s_values, dtype=float)
    if np.any(s_values < 0):
        raise InvalidSweep("offsets must be non-negative")
    t_end = 1.0 / system.eps

    def run(s):
        return _distances(system, offset_starts(fibermap, x_b0, s, qmap), t_end, rtol, atol)

    rows = _pmap(run, s_values)
    names = ["naive", "linear"] + (["quadratic"] if qmap is not None else [])
    ups = {k: np.array([r[k] for r in rows]) for k in names}
    report = ComparisonReport("s", s_values, ups)
    return report.fit_all() if fit else report


@dataclass(frozen=True)
class Reduction:
    manifold: ManifoldApprox
    fibermap: FiberLinearMap
    qmap: Optional[QuadraticFiberMap] = None


def compare_eps(build: Callable[[float], Reduction], x_b0, s: float, eps_values,
                rtol: float = RTOL, atol: float = ATOL) -> ComparisonReport:
    """Sweep ``eps`` at fixed offset ``s``; ``build(eps)`` rebuilds the reduction."""
    eps_values = np.asarray(eps_values, dtype=float)
    if eps_values.size < 4:
        raise InvalidSweep(f"order fit requires at least 4 points, got {eps_values.size}")

    def run(eps):
        red = build(eps)
        system = red.fibermap.system
        starts = offset_starts(red.fibermap, x_b0, s, red.qmap)
        return _distances(system, starts, 1.0 / system.eps, rtol, atol)

    rows = _pmap(run, eps_values)
    names = [k for k in ("naive", "linear", "quadratic") if k in rows[0]]
    ups = {k: np.array([r[k] for r in rows]) for k in names}
    return ComparisonReport("eps", eps_values, ups).fit_all()


def manifold_drift(manifold: ManifoldApprox, x_b0, t_end: Optional[float] = None,
                   n_samples: int = 64, rtol: float = RTOL, atol: float = ATOL) -> float:
    """Largest fast-variable distance from the graph along the run started on it."""
    system = manifold.system
    xb = np.atleast_1d(np.asarray(x_b0, dtype=float))
    t_end = 1.0 / system.eps if t_end is None else t_end
    ts = np.linspace(0.0, t_end, n_samples + 1)
    traj = integrate(system, np.concatenate([xb, manifold.eta(xb)]), t_end, rtol, atol, ts)
    x, y = traj.z[:, :system.n_slow], traj.z[:, system.n_slow:]
    return float(np.abs(y - manifold.eta(x)).max())
