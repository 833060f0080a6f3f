"""Acceptance criteria 1-8. Each test prints one PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
"""
import time

import numpy as np
import pytest

from slowfast import dynamics
from slowfast.core import GridSpec, SlowFastSystem, grid_derivative
from slowfast.curvature import build_psi, solve_psi_batch
from slowfast.dynamics import order_fit
from slowfast.fibers import build_phi
from slowfast.manifold import build_manifold, invariance_residual
from slowfast.systems import make_lindemann, make_mmh, make_neishtadt

S_VALUES = [0.5, 0.75, 1.0, 1.5, 2.5, 4.0, 6.5, 10.0]
XB0 = 1.5


def _line(n, ok, detail):
    return f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"


def _first_below(history, tol):
    hits = [k for k, v in enumerate(history) if v <= tol]
    return hits[0] if hits else None


def criterion_1():
    """MMH residuals reach 1e-12 within 12 iterations, in under a minute."""
    p = make_mmh(2.0, 1.0, 0.1)
    t0 = time.perf_counter()
    man = build_manifold(p.system, p.grid, 12)
    fib = build_phi(man, 12)
    elapsed = time.perf_counter() - t0
    k_eta = _first_below(man.residual_history, 1e-12)
    k_phi = _first_below(fib.residual_history, 1e-12)
    ok = k_eta is not None and k_eta <= 12 and k_phi is not None and k_phi <= 12 and elapsed <= 60
    return ok, (f"E_eta={man.E_eta:.2e} (<=1e-12 at iteration {k_eta}), "
                f"E_phi={fib.E_phi:.2e} (<=1e-12 at iteration {k_phi}), {elapsed:.1f}s")


def _mmh_reduction(eps, quad=True):
    p = make_mmh(2.0, 1.0, eps)
    man = build_manifold(p.deviation, p.grid, 10)
    fib = build_phi(man, 8)
    return dynamics.Reduction(man, fib, build_psi(fib, 4) if quad else None)


def criterion_2():
    """Offset sweep: naive slope 1, linear slope 2."""
    t0 = time.perf_counter()
    ok, parts = True, []
    for eps in (0.1, 0.01):
        red = _mmh_reduction(eps, quad=False)
        rep = dynamics.compare_offsets(red.fibermap, [XB0], S_VALUES)
        sn, sl = rep.slope("naive"), rep.slope("linear")
        ok &= abs(sn - 1.0) <= 0.1 and abs(sl - 2.0) <= 0.15
        parts.append(f"eps={eps}: naive {sn:.3f}, linear {sl:.3f}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed <= 120
    return ok, "; ".join(parts) + f"; {elapsed:.1f}s"


def criterion_3():
    """Offset sweep with the curvature correction: slope 3."""
    red = _mmh_reduction(0.1)
    rep = dynamics.compare_offsets(red.fibermap, [XB0], S_VALUES, red.qmap)
    sq = rep.slope("quadratic")
    return abs(sq - 3.0) <= 0.2, f"quadratic slope {sq:.3f}"


def criterion_4():
    """Epsilon sweep at s = 0.5: naive slope 1, linear slope 2."""
    rep = dynamics.compare_eps(lambda e: _mmh_reduction(e, quad=False), [XB0], 0.5,
                               [0.1, 0.05, 0.025, 0.0125])
    sn, sl = rep.slope("naive"), rep.slope("linear")
    ok = abs(sn - 1.0) <= 0.15 and abs(sl - 2.0) <= 0.2
    return ok, f"naive {sn:.3f}, linear {sl:.3f}"


def criterion_5():
    """Neishtadt layers and residuals against the closed forms."""
    worst = 0.0
    for eps in (1 / 3, 1 / 5, 0.21):
        p = make_neishtadt(eps)
        man = build_manifold(p.system, p.grid, 5, seed=p.seed, stop_on_stagnation=False)
        x = p.grid.axis(0)
        for n in range(1, 6):
            worst = max(worst, np.abs(man.eta_layers[n - 1].values - p.oracles["oracle_eta"](n, x)).max())
            g = man.partial_graph(n)
            rho = invariance_residual(p.system, g, grid_derivative(g)).values
            worst = max(worst, np.abs(rho - p.oracles["oracle_rho"](n, x)).max())
    p = make_neishtadt(1 / 3)
    N = p.params["N"]
    man = build_manifold(p.system, p.grid, N, seed=p.seed, stop_on_stagnation=False)
    g = man.partial_graph(N)
    sup = np.abs(invariance_residual(p.system, g, grid_derivative(g)).values).max()
    bound = p.oracles["rho_bound"]()
    ok = worst <= 1e-12 and sup <= bound
    return ok, f"max oracle deviation {worst:.1e}; sup|rho_{N}| = {sup:.3e} <= {bound:.3e}"


def criterion_6():
    """Lindemann first-order series, rho_1(0) = 0 and the fiber series orders."""
    p = make_lindemann(0.1)
    man = build_manifold(p.system, p.grid, 1)
    x = np.linspace(0.5, 2.0, 31)[:, None]
    d_eta = np.abs(man.eta(x)[:, 0] - p.oracles["eta_total1"](x[:, 0])).max()
    d_rho = np.abs(man.rho(x)[:, 0] - p.oracles["rho1"](x[:, 0])).max()
    # rho_1 at the first valid node next to x = 0, under grid refinement
    xs, rs = [], []
    for h in (0.01, 0.005, 0.0025, 0.00125):
        q = make_lindemann(0.1, GridSpec((0.0,), (1.0,), h))
        m = build_manifold(q.system, q.grid, 1)
        i = np.flatnonzero(m.rho.valid)[0]
        xs.append(q.grid.axis(0)[i])
        rs.append(abs(m.rho.values[i, 0]))
    rho_order = order_fit(xs, rs)[0]
    # the phi^0 error is a function of eps/x; eps/x <= 0.05 is the asymptotic range
    eps_list = [0.025, 0.0125, 0.00625, 0.003125]
    e0, e1 = [], []
    for e in eps_list:
        q = make_lindemann(e)
        m = build_manifold(q.system, q.grid, 12)
        series = q.oracles["phi_series"](x[:, 0], 1)
        e0.append(np.abs(build_phi(m, 0).phi(x)[:, 0, 0] - series).max())
        e1.append(np.abs(build_phi(m, 1).phi(x)[:, 0, 0] - series).max())
    s0, s1 = order_fit(eps_list, e0)[0], order_fit(eps_list, e1)[0]
    ok = (d_eta <= 1e-10 and d_rho <= 1e-10 and rho_order > 0 and rs[-1] <= 1e-7
          and abs(s0 - 2.0) <= 0.3 and abs(s1 - 3.0) <= 0.3)
    return ok, (f"eta^1 {d_eta:.1e}, rho_1 {d_rho:.1e}, rho_1 at x={xs[-1]:g}: {rs[-1]:.1e} "
                f"(order {rho_order:.2f}); phi^0 slope {s0:.2f}, phi^1 slope {s1:.2f}")


def _nonnormal_two_fast():
    def X(x, y):
        return (y[..., 0] * y[..., 1] + x[..., 0] * y[..., 0] ** 2 + 1.0)[..., None]

    def Y(x, y):
        y0, y1 = y[..., 0], y[..., 1]
        return np.stack([-(1 + x[..., 0]) * y0 - 0.3 * y1 + 0.1 * x[..., 0],
                         -2 * y1 + 0.2 * x[..., 0] * y0], axis=-1)

    return SlowFastSystem(1, 2, 0.1, X, Y, name="nonnormal")


def criterion_7():
    """Frame orthogonality, psi symmetry, equilibrium exactness, matched depth."""
    p = make_mmh(2.0, 1.0, 0.1)
    fib = build_phi(build_manifold(p.system, p.grid, 10), 8)
    _, t, n = fib.frames_at_nodes()
    ortho = np.abs(n @ t).max()

    asym = 0.0
    for fm in (build_phi(build_manifold(p.deviation, p.grid, 10), 8),
               build_phi(build_manifold(_nonnormal_two_fast(), GridSpec((0.5,), (1.5,), 0.01), 8), 6)):
        quad = build_psi(fm, 3)
        sq = fm.quantities
        for Q in quad.Q_layers[:-1]:
            v = sq.dLam.valid & sq.A.valid & Q.valid
            asym = max(asym, solve_psi_batch(sq.dLam.values[v], sq.A.values[v], Q.values[v], sq.rate)[2])
        psi = quad.psi.values[quad.psi.valid]
        asym = max(asym, np.abs(psi - np.swapaxes(psi, -1, -2)).max())

    q = make_mmh(2.0, 1.0, 0.1, GridSpec((-0.5,), (2.0,), 0.01))
    man = build_manifold(q.system, q.grid, 6, stop_on_stagnation=False)
    fq = build_phi(man, 4, stop_on_stagnation=False)
    i = int(np.argmin(np.abs(q.grid.axis(0))))
    eq = max([abs(man.rho.values[i, 0])] + [np.abs(mu.values[i]).max() for mu in fq.mu_layers[1:]])

    # depth 2 is the root seed plus one straightening step
    m1 = build_manifold(p.system, p.grid, 1, stop_on_stagnation=False)
    c = [build_phi(m1, n2, stop_on_stagnation=False).coupling_error() for n2 in range(2, 9)]
    ratio = c[0] / min(c[1:])

    ok = ortho <= 1e-13 and asym <= 1e-12 and eq <= 1e-10 and ratio <= 2.0
    return ok, (f"|n.t| {ortho:.1e}, psi asymmetry {asym:.1e}, equilibrium {eq:.1e}, "
                f"matched-depth ratio {ratio:.2f}")


def criterion_8():
    """Stagnation residuals fall faster than eps^4 on the MMH deviation form."""
    eps_list = [0.2, 0.1, 0.05, 0.025]
    e_eta, e_phi = [], []
    for e in eps_list:
        p = make_mmh(2.0, 1.0, e)
        man = build_manifold(p.deviation, p.grid, 40)
        e_eta.append(man.E_eta)
        e_phi.append(build_phi(man, 40).E_phi)
    s_eta, s_phi = order_fit(eps_list, e_eta)[0], order_fit(eps_list, e_phi)[0]
    return s_eta > 4 and s_phi > 4, f"E_eta slope {s_eta:.2f}, E_phi slope {s_phi:.2f}"


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4,
            criterion_5, criterion_6, criterion_7, criterion_8]


@pytest.mark.parametrize("n", range(1, 9))
def test_criterion(n, capsys):
    ok, detail = CRITERIA[n - 1]()
    with capsys.disabled():
        print("\n" + _line(n, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    for k, fn in enumerate(CRITERIA, 1):
        print(_line(k, *fn()), flush=True)
