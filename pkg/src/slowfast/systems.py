"""Built-in model systems with closed-form reference expressions.

Each preset bundles a :class:`SlowFastSystem`, a default grid and a dictionary
of reference functions (``oracles``) used for validation.  Oracles take the
slow variable as an array with trailing dimension ``n_slow`` squeezed away
for scalar slow variables.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from .core import GridSpec, SlowFastSystem
from .errors import InvalidParameters

PRESET_NAMES = ("mmh", "lindemann", "lindemann-standard", "neishtadt")


@dataclass(frozen=True)
class SystemPreset:
    """A named system with its default grid, seed choice and oracles."""

    name: str
    params: Dict[str, float]
    system: SlowFastSystem
    grid: GridSpec
    seed: str = "root"
    oracles: Dict[str, Callable] = field(default_factory=dict)
    deviation: Optional[SlowFastSystem] = None
    forward: Optional[Callable] = None
    backward: Optional[Callable] = None

    @property
    def eps(self) -> float:
        return self.system.eps

    @property
    def nonstandard(self) -> bool:
        return self.system.nonstandard


def _s(x):
    """Scalar slow variable from an ``(..., 1)`` array."""
    return np.asarray(x, float)[..., 0]


def _col(v):
    return np.asarray(v, float)[..., None]


def _mat(v):
    return np.asarray(v, float)[..., None, None]


# ---------------------------------------------------------------- MMH

def make_mmh(kappa: float = 2.0, lam: float = 1.0, eps: float = 0.1,
             grid: Optional[GridSpec] = None) -> SystemPreset:
    """Michaelis-Menten-Henri kinetics ``x' = eps(-x + (x+k-l) y)``, ``y' = x - (x+k) y``.

    ``preset.system`` is the raw form; ``preset.deviation`` is the same flow
    written in the deviation ``y = x/(x+k) + y0`` from the critical manifold.
    """
    k, l = float(kappa), float(lam)
    if not (k >= l > 0):
        raise InvalidParameters(f"need kappa >= lambda > 0, got kappa={k}, lambda={l}")
    if not (np.isfinite(eps) and 0 < eps < k):
        raise InvalidParameters(f"need 0 < eps < kappa, got eps={eps}")

    def X(x, y):
        x, y = _s(x), _s(y)
        return _col(-x + (x + k - l) * y)

    def Y(x, y):
        x, y = _s(x), _s(y)
        return _col(x - (x + k) * y)

    partials = {
        "dxX": lambda x, y: _mat(-1.0 + _s(y)),
        "dyX": lambda x, y: _mat(_s(x) + k - l + 0 * _s(y)),
        "dxY": lambda x, y: _mat(1.0 - _s(y)),
        "dyY": lambda x, y: _mat(-(_s(x) + k) + 0 * _s(y)),
    }
    raw = SlowFastSystem(1, 1, eps, X, Y, partials, domain_lo=[0.0], domain_hi=[50.0],
                         name="mmh", initial_guess=lambda x: x / (x + k))

    def eta0(x):
        return x / (x + k)

    def deta0(x):
        return k / (x + k) ** 2

    def X0(x, y):
        x, y = _s(x), _s(y)
        return _col(-l * x / (x + k) + (x + k - l) * y)

    def Y0(x, y):
        x, y = _s(x), _s(y)
        u = x + k
        return _col(eps * k * l * x / u ** 3 - (u + eps * k * (u - l) / u ** 2) * y)

    dev_partials = {
        "dxX": lambda x, y: _mat(-l * k / (_s(x) + k) ** 2 + _s(y)),
        "dyX": lambda x, y: _mat(_s(x) + k - l + 0 * _s(y)),
        "dxY": lambda x, y: _mat(_dY0dx(_s(x), _s(y), k, l, eps)),
        "dyY": lambda x, y: _mat(-(_s(x) + k + eps * k * (_s(x) + k - l) / (_s(x) + k) ** 2)
                                 + 0 * _s(y)),
    }
    dev = SlowFastSystem(1, 1, eps, X0, Y0, dev_partials, domain_lo=[0.0], domain_hi=[50.0],
                         name="mmh-deviation")

    def eta1(x):
        u = x + k
        return eps * k * l * x / (u * (u ** 3 + eps * k * (u - l)))

    def rho0(x):
        return eps * k * l * x / (x + k) ** 3

    # epsilon-series coefficients in deviation coordinates
    def eta_c1(x):
        return k * l * x / (x + k) ** 4

    def eta_c2(x):
        return -k * l * x * (k * (k - 2 * l) + (k + 3 * l) * x) / (x + k) ** 7

    def phi_c0(x):
        return -(x + k - l) / (x + k)

    def phi_c1(x):
        return (k ** 3 - 3 * k ** 2 * l + 2 * x * k ** 2 - 3 * k * l * x + x ** 2 * k
                + 2 * k * l ** 2 + l ** 2 * x) / (x + k) ** 4

    def phi_c2(x):
        return -(k ** 2 * (k - l) * (6 * l ** 2 - 6 * k * l + k ** 2)
                 + k * (k - l) * (k - 2 * l) * (3 * k - 2 * l) * x
                 + (-3 * l ** 3 - k ** 2 * l + 3 * k ** 3) * x ** 2
                 + k * (k + 3 * l) * x ** 3) / (x + k) ** 7

    def eta_series(x, order, e=eps):
        cs = (eta_c1, eta_c2)
        return sum(e ** (i + 1) * cs[i](x) for i in range(order))

    def phi_series(x, order, e=eps):
        cs = (phi_c0, phi_c1, phi_c2)
        return sum(e ** i * cs[i](x) for i in range(order + 1))

    def lambda_series(x, e=eps):
        u = x + k
        return (-l * x / u + (u - l) * k * l * x / u ** 4 * e
                - (u - l) * k * l * x * (k ** 2 - 2 * k * l + (k + 3 * l) * x) / u ** 7 * e ** 2)

    def A_series(x, e=eps):
        u = x + k
        return (-u - k * (u - l) / u ** 2 * e
                - (k - 3 * x) * (u - l) * k * l / u ** 5 * e ** 2)

    def mu0(x):
        return x + k - l

    def mu1_lead(x, e=eps):
        return -l ** 2 * x / (x + k) ** 3 * e

    def phi1_lead(x, e=eps):
        return l ** 2 * x / (x + k) ** 4 * e

    def v_series(x, e=eps):
        u = x + k
        v1 = np.stack([-(u - l) / u, -(u - l) * k / u ** 3], axis=-1)
        v2 = np.stack([(k * (k - l) * (k - 2 * l) + (2 * k - l) * (k - l) * x + k * x ** 2) / u ** 4,
                       (k * (k - l) * (k - 3 * l) + (2 * k ** 2 - k * l - 2 * l ** 2) * x
                        + (k + 3 * l) * x ** 2) * k / u ** 6], axis=-1)
        base = np.stack([np.zeros_like(x), np.ones_like(x)], axis=-1)
        return base + e * v1 + e ** 2 * v2

    def Q1_lead(x, e=eps):
        return -(x + k - l) * l / (x + k) ** 2 * e

    def psi1_lead(x, e=eps):
        return (x + k - l) * l / (2 * (x + k) ** 3) * e

    def Q2_lead(x, e=eps):
        return -l ** 2 * (2 * (x + k) - 3 * l) * x / (2 * (x + k) ** 5) * e ** 2

    def psi2_lead(x, e=eps):
        return l ** 2 * (2 * (x + k) - 3 * l) * x / (4 * (x + k) ** 6) * e ** 2

    def psi_c2(x):
        return 0.25 * (k * (k - l) * (4 * k ** 2 - 18 * k * l + 17 * l ** 2)
                       + (12 * k ** 3 - 44 * k ** 2 * l + 39 * k * l ** 2 - 7 * l ** 3) * x
                       + (12 * k ** 2 - 22 * k * l + 4 * l ** 2) * x ** 2
                       + 4 * k * x ** 3) / (x + k) ** 6

    def psi_series(x, order, e=eps):
        out = psi1_lead(x, e)
        if order >= 2:
            out = out + e ** 2 * psi_c2(x)
        return out

    def curve_series(x, y, e=eps):
        """Quadratic fiber through (x, eta(x)) in deviation coordinates, through O(eps^2)."""
        u = x + k
        x0 = (x + (-(u - l) / u * e + (k * (k - l) * (k - 2 * l) + (2 * k - l) * (k - l) * x
                                       + k * x ** 2) / u ** 4 * e ** 2) * y
              + (u - l) * l / (2 * u ** 3) * e ** 2 * y ** 2)
        # the y^2 term of y0 is O(eps^3): eta = O(eps) here and it enters as eta'' (eps phi y)^2
        y0 = (k * x * l / u ** 4 * e
              - k * l * x * (k ** 2 + x * k - 2 * k * l + 3 * l * x) / u ** 7 * e ** 2
              + (1 - (u - l) * (k - 3 * x) * k * l / u ** 6 * e ** 2) * y)
        return x0, y0

    oracles = dict(eta0=eta0, deta0=deta0, eta1=eta1, rho0=rho0, eta_series=eta_series,
                   phi_series=phi_series, lambda_series=lambda_series, A_series=A_series,
                   mu0=mu0, mu1_lead=mu1_lead, phi1_lead=phi1_lead, v_series=v_series,
                   Q1_lead=Q1_lead, psi1_lead=psi1_lead, Q2_lead=Q2_lead, psi2_lead=psi2_lead,
                   psi_series=psi_series, psi_c2=psi_c2, curve_series=curve_series)
    grid = grid or GridSpec((0.5,), (3.0,), 0.01)
    return SystemPreset("mmh", {"kappa": k, "lambda": l, "eps": eps}, raw, grid, "root",
                        oracles, deviation=dev)


def _dY0dx(x, y, k, l, eps):
    u = x + k
    # d/dx of eps k l x / u^3 - (u + eps k (u - l) / u^2) y
    d_rho = eps * k * l * (u - 3 * x) / u ** 4
    d_coef = 1 + eps * k * (u ** 2 - 2 * u * (u - l)) / u ** 4
    return d_rho - d_coef * y


# ---------------------------------------------------------------- Lindemann

def make_lindemann(eps: float = 0.1, grid: Optional[GridSpec] = None) -> SystemPreset:
    """Lindemann mechanism ``x' = -x(x-y)``, ``y' = x(x-y) - eps y`` (non-standard form)."""
    if not (np.isfinite(eps) and eps > 0):
        raise InvalidParameters(f"need eps > 0, got {eps}")
    e = float(eps)

    def X(x, y):
        x, y = _s(x), _s(y)
        return _col(-x * (x - y))

    def Y(x, y):
        x, y = _s(x), _s(y)
        return _col(x * (x - y) - e * y)

    partials = {
        "dxX": lambda x, y: _mat(-2 * _s(x) + _s(y)),
        "dyX": lambda x, y: _mat(_s(x) + 0 * _s(y)),
        "dxY": lambda x, y: _mat(2 * _s(x) - _s(y)),
        "dyY": lambda x, y: _mat(-_s(x) - e + 0 * _s(y)),
    }
    raw = SlowFastSystem(1, 1, e, X, Y, partials, domain_lo=[0.0], domain_hi=[50.0],
                         nonstandard=True, name="lindemann", initial_guess=lambda x: x)
    oracles = _lindemann_oracles(e)
    grid = grid or GridSpec((0.2,), (3.0,), 0.01)
    return SystemPreset("lindemann", {"eps": e}, raw, grid, "root", oracles,
                        forward=lindemann_forward, backward=lindemann_backward)


def lindemann_forward(z):
    """``(x, y) -> (w, z) = (x + y, 2 y)``."""
    z = np.asarray(z, float)
    x, y = z[..., 0], z[..., 1]
    return np.stack([x + y, 2 * y], axis=-1)


def lindemann_backward(p):
    """Inverse of :func:`lindemann_forward`."""
    p = np.asarray(p, float)
    w, z = p[..., 0], p[..., 1]
    return np.stack([w - 0.5 * z, 0.5 * z], axis=-1)


def make_lindemann_standard(eps: float = 0.1, grid: Optional[GridSpec] = None) -> SystemPreset:
    """Lindemann mechanism in the coordinates ``w = x + y``, ``z = 2y``.

    ``w' = -eps z / 2``, ``z' = 2w^2 - (3w + eps) z + z^2``.
    """
    if not (np.isfinite(eps) and eps > 0):
        raise InvalidParameters(f"need eps > 0, got {eps}")
    e = float(eps)

    def W(w, z):
        return _col(-0.5 * _s(z) + 0 * _s(w))

    def Z(w, z):
        w, z = _s(w), _s(z)
        return _col(2 * w ** 2 - (3 * w + e) * z + z ** 2)

    partials = {
        "dxX": lambda w, z: _mat(0 * _s(w) + 0 * _s(z)),
        "dyX": lambda w, z: _mat(-0.5 + 0 * _s(w) + 0 * _s(z)),
        "dxY": lambda w, z: _mat(4 * _s(w) - 3 * _s(z)),
        "dyY": lambda w, z: _mat(-(3 * _s(w) + e) + 2 * _s(z)),
    }
    sys_ = SlowFastSystem(1, 1, e, W, Z, partials, domain_lo=[0.0], domain_hi=[50.0],
                          name="lindemann-standard", initial_guess=lambda w: w)
    oracles = _lindemann_oracles(e)
    grid = grid or GridSpec((0.2,), (3.0,), 0.01)
    return SystemPreset("lindemann-standard", {"eps": e}, sys_, grid, "root", oracles,
                        forward=lindemann_forward, backward=lindemann_backward)


def _lindemann_oracles(e):
    def eta0(x):
        return x ** 2 / (x + e)

    def cubic(x):
        return 2 * x ** 3 + 5 * e * x ** 2 + 3 * e ** 2 * x + e ** 3

    def eta1(x):
        return x ** 3 * (x + 2 * e) * e / ((x + e) * cubic(x))

    def eta_total1(x):
        return x ** 2 * (e ** 2 + 4 * x * e + 2 * x ** 2) / cubic(x)

    def rho0(x):
        return x ** 3 * (x + 2 * e) * e / (x + e) ** 3

    def rho1(x):
        return ((3 * x ** 4 + 16 * x ** 3 * e + 28 * e ** 2 * x ** 2 + 20 * e ** 3 * x
                 + 6 * e ** 4) * e ** 3 * x ** 4 / cubic(x) ** 3)

    def phi0(x):
        num = x * (4 * x ** 6 + 20 * x ** 5 * e + 37 * x ** 4 * e ** 2 + 34 * x ** 3 * e ** 3
                   + 19 * x ** 2 * e ** 4 + 6 * x * e ** 5 + e ** 6)
        den = (e ** 7 + 5 * x * e ** 6 + 18 * x ** 2 * e ** 5 + 52 * x ** 3 * e ** 4
               + 86 * x ** 4 * e ** 3 + 83 * x ** 5 * e ** 2 + 42 * x ** 6 * e + 8 * x ** 7)
        return -num / den

    def lambda1(x):
        return -x ** 2 * (x + e) ** 2 / cubic(x)

    def phi_series(x, order):
        # truncations of phi^0 and phi^1 through the order they are exact to
        if order == 0:
            return -0.5 + e / (8 * x) - 3 * e ** 2 / (32 * x ** 2)
        return -0.5 + e / (8 * x) - e ** 2 / (16 * x ** 2)

    def mu1_lead(x):
        return -e ** 2 / (16 * x)

    def lambda1_series(x):
        return -0.5 * x + 0.25 * e

    def v_series(x):
        return np.stack([-0.5 + e / (8 * x) - e ** 2 / (16 * x ** 2),
                         0.5 + e / (8 * x) + e ** 2 / (16 * x ** 2)], axis=-1)

    return dict(eta0=eta0, eta1=eta1, eta_total1=eta_total1, rho0=rho0, rho1=rho1,
                phi0=phi0, lambda1=lambda1, phi_series=phi_series, mu1_lead=mu1_lead,
                lambda1_series=lambda1_series, v_series=v_series)


# ---------------------------------------------------------------- Neishtadt

def neishtadt_f(x, N: int, m: int = 0):
    """``m``-th derivative of ``f_N(x) = sum_{k=1}^N e^-k sin(kx)``."""
    x = np.asarray(x, float)
    k = np.arange(1, N + 1)
    terms = np.exp(-k) * k.astype(float) ** m * np.sin(np.multiply.outer(x, k) + m * np.pi / 2)
    return terms.sum(axis=-1)


def make_neishtadt(eps: float = 0.2, grid: Optional[GridSpec] = None,
                   n_nodes: Optional[int] = None) -> SystemPreset:
    """Modified Neishtadt example on ``S^1 x R^2`` with non-smooth eps dependence.

    ``x' = eps``, ``y' = (eb f_N(x), 0) + [[0, 1], [-1, 0]] y`` with
    ``N = floor(1/eps)`` and ``eb = eps (1 + sin(2 pi / eps))``.  The normal
    spectrum is ``{i, -i}``.

    The default grid is a Fourier grid with ``n_nodes`` points (at least 32
    and more than ``2N``), on which ``f_N`` and its derivatives are exact.
    """
    if not (np.isfinite(eps) and 0 < eps < 1):
        raise InvalidParameters(f"need 0 < eps < 1, got {eps}")
    e = float(eps)
    N = int(math.floor(1.0 / e))
    eb = e * (1.0 + math.sin(2 * math.pi / e))
    rot = np.array([[0.0, 1.0], [-1.0, 0.0]])

    def X(x, y):
        return np.ones(np.broadcast_shapes(np.shape(x)[:-1], np.shape(y)[:-1]) + (1,))

    def Y(x, y):
        x, y = _s(x), np.asarray(y, float)
        return np.stack([eb * neishtadt_f(x, N) + y[..., 1], -y[..., 0]], axis=-1)

    def lead(x, y):
        return np.broadcast_shapes(np.shape(x)[:-1], np.shape(y)[:-1])

    partials = {
        "dxX": lambda x, y: np.zeros(lead(x, y) + (1, 1)),
        "dyX": lambda x, y: np.zeros(lead(x, y) + (1, 2)),
        "dxY": lambda x, y: np.broadcast_to(
            np.stack([eb * neishtadt_f(_s(x), N, 1), np.zeros(np.shape(x)[:-1])],
                     axis=-1)[..., None], lead(x, y) + (2, 1)),
        "dyY": lambda x, y: np.broadcast_to(rot, lead(x, y) + (2, 2)),
    }
    sys_ = SlowFastSystem(1, 2, e, X, Y, partials, name="neishtadt")

    def oracle_eta(n, x):
        x = np.asarray(x, float)
        val = (-1) ** (n // 2 + 1) * e ** (n - 1) * eb * neishtadt_f(x, N, n - 1)
        z = np.zeros_like(val)
        return np.stack([val, z] if n % 2 == 0 else [z, val], axis=-1)

    def oracle_rho(n, x):
        # the residual after n layers sits in the same component as eta_n
        x = np.asarray(x, float)
        val = (-1) ** (n // 2) * e ** n * eb * neishtadt_f(x, N, n)
        z = np.zeros_like(val)
        return np.stack([val, z] if n % 2 == 0 else [z, val], axis=-1)

    def rho_bound():
        return 2 * math.e ** 2 * e ** -0.5 * math.exp(-1.0 / e)

    if n_nodes is None:
        n_nodes = max(32, 1 << int(math.ceil(math.log2(2 * N + 2))))
    grid = grid or GridSpec((0.0,), (2 * math.pi,), 2 * math.pi / n_nodes, (True,), True)
    oracles = dict(oracle_eta=oracle_eta, oracle_rho=oracle_rho, rho_bound=rho_bound)
    return SystemPreset("neishtadt", {"eps": e, "N": N, "eps_bar": eb}, sys_, grid, "zero",
                        oracles)


def get_preset(name: str, eps: float, kappa: float = 2.0, lam: float = 1.0,
               grid: Optional[GridSpec] = None) -> SystemPreset:
    """Look up a preset by name: ``mmh``, ``lindemann``, ``lindemann-standard``, ``neishtadt``."""
    if name == "mmh":
        return make_mmh(kappa, lam, eps, grid)
    if name == "lindemann":
        return make_lindemann(eps, grid)
    if name == "lindemann-standard":
        return make_lindemann_standard(eps, grid)
    if name == "neishtadt":
        return make_neishtadt(eps, grid)
    raise InvalidParameters(f"unknown system {name!r}; choose from {', '.join(PRESET_NAMES)}")
