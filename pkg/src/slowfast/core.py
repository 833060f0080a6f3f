"""System abstraction, sampled functions and five-point differentiation.

Every field callable in this package is vectorised: slow variables arrive as
arrays of shape ``(..., n_slow)`` and fast variables as ``(..., n_fast)``.
Vector fields return the matching trailing dimension and partial
derivatives return ``(..., rows, cols)`` matrices.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .errors import DomainExceeded, NewtonDiverged, NumericalBreakdown

Field = Callable[[np.ndarray, np.ndarray], np.ndarray]

# five-point first-derivative weights for offsets -2, -1, +1, +2 (divide by 12h)
STENCIL_OFFSETS = (-2, -1, 1, 2)
STENCIL_WEIGHTS = (1.0, -8.0, 8.0, -1.0)

PARTIAL_NAMES = ("dxX", "dyX", "dxY", "dyY")


def stencil_derivative(f, x, h: float, dim: int = 0, domain=None):
    """Five-point central difference of ``f`` at ``x`` along axis ``dim``.

    ``f`` maps a point (scalar or array of shape ``(n,)``) to a scalar or
    array.  Returns ``(-f(x+2h) + 8 f(x+h) - 8 f(x-h) + f(x-2h)) / (12 h)``
    with truncation error ``h**4 f^(5) / 30``.

    ``domain`` is an optional ``(lo, hi)`` pair; the four stencil points must
    lie inside it.
    """
    if not h > 0:
        raise ValueError("stencil spacing must be positive")
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    xv = np.atleast_1d(x)
    if domain is not None:
        lo = np.atleast_1d(np.asarray(domain[0], dtype=float))
        hi = np.atleast_1d(np.asarray(domain[1], dtype=float))
        if xv[dim] - 2 * h < lo[dim] - 1e-12 * (1 + abs(lo[dim])) or \
                xv[dim] + 2 * h > hi[dim] + 1e-12 * (1 + abs(hi[dim])):
            raise DomainExceeded(
                f"stencil at {xv[dim]!r} with h={h} leaves [{lo[dim]}, {hi[dim]}]")
    acc = 0.0
    for off, w in zip(STENCIL_OFFSETS, STENCIL_WEIGHTS):
        p = xv.copy()
        p[dim] += off * h
        val = np.asarray(f(p[0] if scalar else p), dtype=float)
        if not np.all(np.isfinite(val)):
            raise NumericalBreakdown(f"non-finite sample at {p!r}")
        acc = acc + w * val
    return acc / (12.0 * h)


@dataclass(frozen=True)
class SlowFastSystem:
    """The pair ``x' = r X(x, y)``, ``y' = Y(x, y)``.

    ``r`` is :attr:`slow_rate`: ``eps`` for systems in standard slow-fast
    form and ``1`` when ``nonstandard`` is set (the slow field then carries
    its own smallness, as in the raw Lindemann mechanism).
    """

    n_slow: int
    n_fast: int
    eps: float
    slow_field: Field
    fast_field: Field
    partials: Mapping[str, Field] = field(default_factory=dict)
    domain_lo: Optional[Sequence[float]] = None
    domain_hi: Optional[Sequence[float]] = None
    fast_bound: float = np.inf
    nonstandard: bool = False
    name: str = "custom"
    initial_guess: Optional[Callable[[np.ndarray], np.ndarray]] = None
    fd_step: float = 1e-3
    cond_cap: float = 1e8

    def __post_init__(self):
        if not (np.isfinite(self.eps) and self.eps > 0):
            raise ValueError(f"eps must be positive and finite, got {self.eps!r}")
        unknown = set(self.partials) - set(PARTIAL_NAMES)
        if unknown:
            raise ValueError(f"unknown partial names: {sorted(unknown)}")

    @property
    def slow_rate(self) -> float:
        return 1.0 if self.nonstandard else self.eps

    def X(self, x, y) -> np.ndarray:
        return np.asarray(self.slow_field(np.asarray(x, float), np.asarray(y, float)), float)

    def Y(self, x, y) -> np.ndarray:
        return np.asarray(self.fast_field(np.asarray(x, float), np.asarray(y, float)), float)

    def rhs(self, z) -> np.ndarray:
        """Full vector field on stacked states ``z = (x, y)``."""
        z = np.asarray(z, float)
        x, y = z[..., :self.n_slow], z[..., self.n_slow:]
        return np.concatenate([self.slow_rate * self.X(x, y), self.Y(x, y)], axis=-1)

    def guess(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        if self.initial_guess is None:
            return np.zeros(x.shape[:-1] + (self.n_fast,))
        return np.broadcast_to(np.asarray(self.initial_guess(x), float),
                               x.shape[:-1] + (self.n_fast,)).copy()

    def in_domain(self, x, pad: float = 0.0) -> bool:
        x = np.asarray(x, float)
        ok = True
        if self.domain_lo is not None:
            ok &= bool(np.all(x - pad >= np.asarray(self.domain_lo) - 1e-12))
        if self.domain_hi is not None:
            ok &= bool(np.all(x + pad <= np.asarray(self.domain_hi) + 1e-12))
        return ok

    def check_partials(self, x, y, tol: float = 1e-6) -> dict:
        """Largest discrepancy between each supplied analytic partial and its stencil."""
        numeric = _numeric_partials(self, np.asarray(x, float), np.asarray(y, float),
                                    self.fd_step)
        out = {}
        for name, fn in self.partials.items():
            analytic = np.asarray(fn(np.asarray(x, float), np.asarray(y, float)), float)
            err = float(np.max(np.abs(analytic - numeric[name])))
            if err > tol * (1 + float(np.max(np.abs(analytic)))):
                raise NumericalBreakdown(
                    f"analytic partial {name} disagrees with stencil by {err:.3e}")
            out[name] = err
        return out


def _numeric_partials(system: SlowFastSystem, x, y, h) -> dict:
    out = {}
    for fname, fn in (("X", system.X), ("Y", system.Y)):
        for var, arg in (("x", 0), ("y", 1)):
            base = (x, y)
            n = base[arg].shape[-1]
            cols = []
            for j in range(n):
                acc = 0.0
                for off, w in zip(STENCIL_OFFSETS, STENCIL_WEIGHTS):
                    pert = base[arg].copy()
                    pert[..., j] += off * h
                    args = (pert, y) if arg == 0 else (x, pert)
                    acc = acc + w * fn(*args)
                cols.append(acc / (12.0 * h))
            out[f"d{var}{fname}"] = np.stack(cols, axis=-1)
    return out


def field_partials(system: SlowFastSystem, x, y, h: Optional[float] = None) -> dict:
    """Return ``{dxX, dyX, dxY, dyY}`` at ``(x, y)``.

    Analytic partials are used where the system supplies them; the rest come
    from the five-point stencil with spacing ``h`` (default
    ``system.fd_step``).  Shapes: ``dxX`` (..., n_s, n_s), ``dyX`` (..., n_s,
    n_f), ``dxY`` (..., n_f, n_s), ``dyY`` (..., n_f, n_f).
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    h = system.fd_step if h is None else h
    missing = [n for n in PARTIAL_NAMES if n not in system.partials]
    out = {}
    if missing:
        if not system.in_domain(x, pad=2 * h):
            raise DomainExceeded("numerical partials need 2h room inside the domain box")
        numeric = _numeric_partials(system, x, y, h)
    lead = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
    shapes = {"dxX": (system.n_slow, system.n_slow), "dyX": (system.n_slow, system.n_fast),
              "dxY": (system.n_fast, system.n_slow), "dyY": (system.n_fast, system.n_fast)}
    for name in PARTIAL_NAMES:
        if name in system.partials:
            val = np.asarray(system.partials[name](x, y), float)
        else:
            val = numeric[name]
        val = np.broadcast_to(val, lead + shapes[name])
        if not np.all(np.isfinite(val)):
            raise NumericalBreakdown(f"non-finite partial {name}")
        out[name] = val
    return out


def fastness_mask(system: SlowFastSystem, x, y, cap: Optional[float] = None):
    """Boolean mask of points where ``dyY`` passes the condition-number cap."""
    cap = system.cond_cap if cap is None else cap
    dyY = field_partials(system, x, y)["dyY"]
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(dyY)
    return np.isfinite(cond) & (cond <= cap), cond


def newton_solve(F, J, v0, tol: float = 1e-13, maxiter: int = 50):
    """Batched Newton iteration for ``F(v) = 0`` with ``v`` of shape ``(M, n)``.

    Converged where ``|F(v)| <= tol (1 + |v|)`` (followed by one polishing
    step) or the Newton step has shrunk to round-off.  Raises
    :class:`NewtonDiverged` naming the first offending row otherwise.
    """
    v = np.array(v0, dtype=float, copy=True)
    done = np.zeros(v.shape[0], dtype=bool)
    for _ in range(maxiter + 1):
        act = ~done
        if not act.any():
            return v
        idx = np.nonzero(act)[0]
        r = F(v[idx], idx)
        norm_r = np.max(np.abs(r), axis=-1)
        norm_v = np.max(np.abs(v[idx]), axis=-1)
        conv = norm_r <= tol * (1.0 + norm_v)
        # converged rows still take this step: one quadratic step past the
        # tolerance leaves only round-off, which keeps grid samples smooth
        done[idx[conv]] = True
        if _ == maxiter and not conv.all():
            idx = idx[~conv]
            break
        jac = J(v[idx], idx)
        with np.errstate(all="ignore"):
            cond = np.linalg.cond(jac)
        sing = ~np.isfinite(cond) | (cond > 1.0 / np.finfo(float).eps)
        if np.any(sing & ~conv):
            raise NewtonDiverged(f"singular Jacobian at row {int(idx[sing & ~conv][0])}")
        # converged rows at degenerate points skip the polishing step
        idx, jac, r = idx[~sing], jac[~sing], r[~sing]
        if idx.size == 0:
            continue
        step = np.linalg.solve(jac, r[..., None])[..., 0]
        if not np.all(np.isfinite(step)):
            raise NewtonDiverged(f"non-finite Newton step at row {int(idx[0])}")
        v[idx] -= step
        tiny = np.max(np.abs(step), axis=-1) <= 4 * np.finfo(float).eps * (
            1.0 + np.max(np.abs(v[idx]), axis=-1))
        done[idx[tiny]] = True
    if done.all():
        return v
    raise NewtonDiverged(f"no convergence in {maxiter} iterations at row {int(idx[0])}")


@dataclass(frozen=True)
class GridSpec:
    """Tensor-product grid over the slow variables.

    Non-periodic axes include both end points; periodic axes drop ``hi``
    (identified with ``lo``).  With ``spectral`` set (one periodic axis
    only) derivatives and interpolation use the discrete Fourier series
    instead of the five-point stencil and local cubics.
    """

    lo: tuple
    hi: tuple
    h: float = 1e-2
    periodic: tuple = ()
    spectral: bool = False

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        per = tuple(bool(p) for p in self.periodic) or (False,) * len(lo)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "periodic", per)
        if len(lo) != len(hi) or len(per) != len(lo):
            raise ValueError("lo, hi and periodic must have equal length")
        if not self.h > 0:
            raise ValueError("grid spacing must be positive")
        for a, b in zip(lo, hi):
            if not b - a > 4 * self.h:
                raise ValueError(f"axis [{a}, {b}] too narrow for a five-point stencil at h={self.h}")
            n = (b - a) / self.h
            if abs(n - round(n)) > 1e-6 * max(1.0, n):
                raise ValueError(f"axis [{a}, {b}] is not a whole number of steps h={self.h}")
        if self.spectral and (len(per) != 1 or not per[0]):
            raise ValueError("spectral grids must have exactly one periodic axis")

    @property
    def ndim(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> tuple:
        return tuple(int(round((b - a) / self.h)) + (0 if p else 1)
                     for a, b, p in zip(self.lo, self.hi, self.periodic))

    def axis(self, k: int) -> np.ndarray:
        return self.lo[k] + self.h * np.arange(self.shape[k])

    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*[self.axis(k) for k in range(self.ndim)], indexing="ij")
        return np.stack(mesh, axis=-1)

    @property
    def any_bounded(self) -> bool:
        return not all(self.periodic)


class GridFunction:
    """Samples of a function of the slow variables on a :class:`GridSpec`.

    ``values`` has shape ``spec.shape + payload_shape``.  ``valid`` flags the
    nodes where the samples are meaningful; nodes outside it hold zeros.
    ``margin_nodes`` counts the boundary layers lost to differentiation.
    """

    def __init__(self, spec: GridSpec, values, valid=None, margin_nodes: int = 0,
                 symmetric: bool = False):
        values = np.asarray(values, dtype=float)
        if values.shape[:spec.ndim] != spec.shape:
            raise ValueError(f"values shape {values.shape} does not match grid {spec.shape}")
        if valid is None:
            valid = np.ones(spec.shape, dtype=bool)
        valid = np.asarray(valid, dtype=bool) & _margin_mask(spec, margin_nodes)
        if not valid.any():
            raise DomainExceeded("grid function has an empty valid domain")
        values = np.where(_expand(valid, values.ndim), values, 0.0)
        if not np.all(np.isfinite(values)):
            raise NumericalBreakdown("grid function samples must be finite")
        if symmetric:
            s = values[valid]
            asym = np.abs(s - np.swapaxes(s, -1, -2)).max(axis=(-1, -2))
            scale = 1.0 + np.abs(s).max(axis=(-1, -2))
            if s.size and np.any(asym > 1e-12 * scale):
                raise NumericalBreakdown("symmetric payload is not symmetric")
        values.setflags(write=False)
        valid.setflags(write=False)
        self.spec = spec
        self.values = values
        self.valid = valid
        self.margin_nodes = int(margin_nodes)
        self.symmetric = symmetric

    @property
    def payload_shape(self) -> tuple:
        return self.values.shape[self.spec.ndim:]

    @property
    def margin(self) -> float:
        return self.margin_nodes * self.spec.h

    def valid_bounds(self):
        """Per-axis ``(lo, hi)`` of the valid interval."""
        m = self.margin
        return [(a, b) if p else (a + m, b - m)
                for a, b, p in zip(self.spec.lo, self.spec.hi, self.spec.periodic)]

    def valid_nodes(self) -> np.ndarray:
        return self.spec.nodes()[self.valid]

    def valid_values(self) -> np.ndarray:
        return self.values[self.valid]

    def sup_norm(self, mask=None) -> float:
        """Largest entry magnitude over valid nodes (optionally further masked)."""
        sel = self.valid if mask is None else self.valid & mask
        if not sel.any():
            return float("nan")
        return float(np.max(np.abs(self.values[sel])))

    def with_values(self, values, valid=None, margin_nodes=None, symmetric=None) -> "GridFunction":
        return GridFunction(self.spec, values,
                            self.valid if valid is None else valid,
                            self.margin_nodes if margin_nodes is None else margin_nodes,
                            self.symmetric if symmetric is None else symmetric)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        return combine(lambda a, b: a + b, self, other)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        return combine(lambda a, b: a - b, self, other)

    def __call__(self, x) -> np.ndarray:
        """Local cubic (4-point Lagrange) interpolation at ``x`` of shape ``(..., n_s)``."""
        spec = self.spec
        x = np.asarray(x, dtype=float)
        if spec.ndim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        lead = x.shape[:-1]
        pts = x.reshape(-1, spec.ndim)
        if spec.spectral:
            return _fourier_eval(self.values, spec, pts[:, 0]).reshape(lead + self.payload_shape)
        per_axis = []
        for k in range(spec.ndim):
            n = spec.shape[k]
            u = (pts[:, k] - spec.lo[k]) / spec.h
            near = np.rint(u)
            snap = np.abs(u - near) <= 1e-9 * np.maximum(1.0, np.abs(u))
            u = np.where(snap, near, u)
            if spec.periodic[k]:
                base = np.floor(u).astype(int)
                t = u - base
                idx = (base[:, None] + np.arange(-1, 3)[None, :]) % n
            else:
                m = self.margin_nodes
                if np.any(u < m - 1e-9) or np.any(u > n - 1 - m + 1e-9):
                    raise DomainExceeded(
                        f"evaluation outside valid interval {self.valid_bounds()[k]}")
                base = np.clip(np.floor(u).astype(int), m + 1, n - 3 - m)
                if n - 1 - 2 * m < 3:
                    raise DomainExceeded("fewer than four valid nodes for cubic interpolation")
                t = u - base
                idx = base[:, None] + np.arange(-1, 3)[None, :]
            per_axis.append((idx, _lagrange4(t)))
        out = np.zeros((pts.shape[0],) + self.payload_shape)
        for combo in itertools.product(range(4), repeat=spec.ndim):
            ind = tuple(per_axis[k][0][:, combo[k]] for k in range(spec.ndim))
            if not np.all(self.valid[ind]):
                raise DomainExceeded("interpolation stencil touches masked nodes")
            w = np.ones(pts.shape[0])
            for k in range(spec.ndim):
                w = w * per_axis[k][1][:, combo[k]]
            out += _expand(w, out.ndim) * self.values[ind]
        return out.reshape(lead + self.payload_shape)


def _fourier_eval(values, spec: GridSpec, x):
    n = spec.shape[0]
    period = spec.hi[0] - spec.lo[0]
    coef = np.fft.rfft(values, axis=0) / n
    m = np.arange(coef.shape[0])
    wgt = np.where((m == 0) | ((n % 2 == 0) & (m == n // 2)), 1.0, 2.0)
    u = (x - spec.lo[0]) / spec.h
    snap = np.abs(u - np.rint(u)) <= 1e-9 * np.maximum(1.0, np.abs(u))
    phase = np.exp(2j * np.pi * np.outer(x - spec.lo[0], m) / period)
    out = np.tensordot(phase * wgt, coef, axes=(1, 0)).real
    if snap.any():
        # exact node values where the point sits on a node
        out[snap] = values[np.rint(u[snap]).astype(int) % n]
    return out


def _fourier_derivative(values, spec: GridSpec):
    n = spec.shape[0]
    period = spec.hi[0] - spec.lo[0]
    coef = np.fft.rfft(values, axis=0)
    m = np.arange(coef.shape[0])
    fac = 2j * np.pi * m / period
    if n % 2 == 0:
        fac[-1] = 0.0
    coef = coef * fac.reshape((-1,) + (1,) * (values.ndim - 1))
    return np.fft.irfft(coef, n, axis=0)


def _lagrange4(t):
    # nodes at -1, 0, 1, 2; exact weights at t = 0 and t = 1
    return np.stack([-t * (t - 1) * (t - 2) / 6.0,
                     (t + 1) * (t - 1) * (t - 2) / 2.0,
                     -(t + 1) * t * (t - 2) / 2.0,
                     (t + 1) * t * (t - 1) / 6.0], axis=-1)


def _expand(a, ndim):
    a = np.asarray(a)
    return a.reshape(a.shape + (1,) * (ndim - a.ndim))


def _margin_mask(spec: GridSpec, m: int) -> np.ndarray:
    mask = np.ones(spec.shape, dtype=bool)
    if m <= 0:
        return mask
    for k in range(spec.ndim):
        if spec.periodic[k]:
            continue
        sl = [slice(None)] * spec.ndim
        sl[k] = slice(0, m)
        mask[tuple(sl)] = False
        sl[k] = slice(spec.shape[k] - m, None)
        mask[tuple(sl)] = False
    return mask


def combine(op, *gs: GridFunction, symmetric: bool = False) -> GridFunction:
    """Apply ``op`` node-wise to grid functions sharing one spec."""
    spec = gs[0].spec
    if any(g.spec != spec for g in gs):
        raise ValueError("grid functions live on different grids")
    valid = np.logical_and.reduce([g.valid for g in gs])
    margin = max(g.margin_nodes for g in gs)
    vals = op(*[g.values for g in gs])
    return GridFunction(spec, vals, valid, margin, symmetric=symmetric)


def grid_sample(f, spec: GridSpec, valid=None) -> GridFunction:
    """Evaluate vectorised ``f`` at every node of ``spec``."""
    vals = np.asarray(f(spec.nodes()), dtype=float)
    if not np.all(np.isfinite(vals[valid] if valid is not None else vals)):
        raise NumericalBreakdown("non-finite sample in grid_sample")
    if valid is not None:
        vals = np.where(_expand(valid, vals.ndim), vals, 0.0)
    return GridFunction(spec, vals, valid)


def _stencil_axis(values, valid, spec: GridSpec, k: int):
    h = spec.h
    if spec.periodic[k]:
        acc = 0.0
        ok = valid.copy()
        for off, w in zip(STENCIL_OFFSETS, STENCIL_WEIGHTS):
            acc = acc + w * np.roll(values, -off, axis=k)
            ok &= np.roll(valid, -off, axis=k)
        return acc / (12.0 * h), ok
    n = spec.shape[k]
    out = np.zeros_like(values)
    ok = np.zeros_like(valid)

    def sl(a, b):
        s = [slice(None)] * values.ndim
        s[k] = slice(a, b)
        return tuple(s)

    def slv(a, b):
        s = [slice(None)] * valid.ndim
        s[k] = slice(a, b)
        return tuple(s)

    out[sl(2, n - 2)] = (values[sl(0, n - 4)] - 8.0 * values[sl(1, n - 3)]
                         + 8.0 * values[sl(3, n - 1)] - values[sl(4, n)]) / (12.0 * h)
    ok[slv(2, n - 2)] = (valid[slv(0, n - 4)] & valid[slv(1, n - 3)] & valid[slv(2, n - 2)]
                         & valid[slv(3, n - 1)] & valid[slv(4, n)])
    return out, ok


def grid_derivative(g: GridFunction, dim: Optional[int] = None) -> GridFunction:
    """Five-point derivative of stored samples.

    With ``dim`` given, differentiates along that axis keeping the payload
    shape.  With ``dim=None`` returns the full Jacobian, appending a trailing
    axis of length ``n_slow``.  The margin grows by two nodes (``2h``).
    """
    spec = g.spec
    margin = g.margin_nodes + (2 if spec.any_bounded else 0)
    dims = range(spec.ndim) if dim is None else [dim]
    parts, valid = [], g.valid.copy()
    if spec.spectral and not g.valid.all():
        raise DomainExceeded("spectral differentiation needs every node valid")
    for k in dims:
        if spec.spectral:
            parts.append(_fourier_derivative(g.values, spec))
            continue
        d, ok = _stencil_axis(g.values, g.valid, spec, k)
        parts.append(d)
        valid &= ok
    valid &= _margin_mask(spec, margin)
    if not valid.any():
        raise DomainExceeded("differentiation emptied the valid domain; widen the grid "
                             "or reduce the iteration depth")
    vals = parts[0] if dim is not None else np.stack(parts, axis=-1)
    return GridFunction(spec, vals, valid, margin)
