import numpy as np
import pytest

from slowfast.core import GridSpec, SlowFastSystem, grid_derivative
from slowfast.dynamics import order_fit
from slowfast.errors import IterationBudgetExceeded
from slowfast.manifold import build_manifold, invariance_residual, residual_rho, so_step, solve_eta0
from slowfast.systems import make_mmh, make_neishtadt

XS = np.linspace(0.8, 2.6, 19)[:, None]


def test_eta0_values(mmh, lindemann):
    eta0, deta0 = solve_eta0(mmh.system, mmh.grid)
    assert eta0(np.array([1.5]))[0] == pytest.approx(0.428571428571, abs=1e-12)
    assert np.allclose(deta0(XS)[..., 0, 0], mmh.oracles["deta0"](XS[:, 0]), atol=1e-12)
    l0, _ = solve_eta0(lindemann.system, lindemann.grid)
    assert l0(np.array([1.0]))[0] == pytest.approx(0.909090909091, abs=1e-12)


def test_eta0_zero_root():
    s = SlowFastSystem(1, 1, 0.1, lambda x, y: x, lambda x, y: -y * (1 + x ** 2))
    eta0, _ = solve_eta0(s, GridSpec((0.0,), (1.0,), 0.05))
    assert np.all(eta0.values == 0.0)


def test_first_step_matches_closed_form(mmh):
    pre = mmh
    # from y = 0 the first step solves Y0(x, v) = 0, which is the closed form
    m = build_manifold(pre.deviation, pre.grid, 1, seed="zero")
    x = np.array([[1.5]])
    assert m.eta(x)[0, 0] == pytest.approx(1.97612e-3, rel=1e-5)
    assert np.allclose(m.eta(XS)[:, 0], pre.oracles["eta1"](XS[:, 0]), atol=1e-12)


def test_raw_and_deviation_graphs_agree(mmh_raw_man, mmh_dev_man):
    raw = mmh_raw_man.eta(XS)[:, 0]
    dev = mmh_dev_man.eta(XS)[:, 0] + XS[:, 0] / (XS[:, 0] + 2.0)
    assert np.allclose(raw, dev, atol=1e-12)


def test_invariant_graph_gives_zero_layer():
    # y = 0 is exactly invariant: first layer vanishes
    s = SlowFastSystem(1, 1, 0.1, lambda x, y: 1 + 0 * x, lambda x, y: -(1 + x ** 2) * y)
    m = build_manifold(s, GridSpec((0.0,), (1.0,), 0.02), 1)
    assert np.all(np.abs(m.eta_layers[0].values) == 0.0)
    assert m.E_eta == 0.0


def test_residual_zero_without_slow_drift():
    s = SlowFastSystem(1, 1, 0.1, lambda x, y: 0 * x, lambda x, y: x - y)
    eta0, d0 = solve_eta0(s, GridSpec((0.0,), (1.0,), 0.02))
    _, e = residual_rho(s, eta0, d0)
    assert e <= 1e-15


def test_mmh_converges_within_ten_steps(mmh_raw_man):
    assert mmh_raw_man.E_eta <= 1e-12
    h = mmh_raw_man.residual_history
    assert h[1] < h[0] and h[2] < h[1] and h[3] < h[2]


def test_margin_bookkeeping(mmh):
    m = build_manifold(mmh.system, mmh.grid, 3, stop_on_stagnation=False)
    assert m.dgraph.margin_nodes == 6
    lo, hi = m.dgraph.valid_bounds()[0]
    assert lo == pytest.approx(0.56) and hi == pytest.approx(2.94)


def test_so_step_jacobian_matches_grid_derivative(mmh):
    eta0, d0 = solve_eta0(mmh.system, mmh.grid)
    new, dnew = so_step(mmh.system, eta0, d0)
    fd = grid_derivative(new)
    sel = fd.valid & dnew.valid
    assert np.abs(fd.values[sel] - dnew.values[sel]).max() < 1e-9


def test_eta1_series_order(mmh):
    eps = [0.04, 0.02, 0.01, 0.005]
    errs = []
    for e in eps:
        p = make_mmh(2.0, 1.0, e)
        m = build_manifold(p.deviation, p.grid, 1)
        errs.append(np.abs(m.eta(XS)[:, 0] - p.oracles["eta_series"](XS[:, 0], 1)).max())
    assert order_fit(eps, errs)[0] == pytest.approx(2.0, abs=0.2)


@pytest.mark.parametrize("form", ["system", "deviation"])
def test_residual_order_property(form):
    eps = [0.1, 0.05, 0.025, 0.0125]
    r1, r2 = [], []
    for e in eps:
        p = make_mmh(2.0, 1.0, e)
        m = build_manifold(getattr(p, form), p.grid, 2, stop_on_stagnation=False)
        r1.append(m.residual_history[1])
        r2.append(m.residual_history[2])
    assert order_fit(eps, r1)[0] >= 1.8
    assert order_fit(eps, r2)[0] >= 2.8


def test_lindemann_first_step(lindemann):
    m = build_manifold(lindemann.system, lindemann.grid, 1)
    x = np.linspace(0.5, 2.0, 16)[:, None]
    assert np.allclose(m.eta(x)[:, 0], lindemann.oracles["eta_total1"](x[:, 0]), atol=1e-10)
    rho = m.rho(x)[:, 0]
    assert np.allclose(rho, lindemann.oracles["rho1"](x[:, 0]), atol=1e-10)


def test_equilibrium_inclusion():
    # X vanishes on the graph at x = 1: the residual there stays at round-off
    s = SlowFastSystem(1, 1, 0.1, lambda x, y: (1 - x) * (1 + y), lambda x, y: x ** 2 - y,
                       name="eq")
    spec = GridSpec((0.5,), (1.5,), 0.01)
    m = build_manifold(s, spec, 4, stop_on_stagnation=False)
    idx = np.argmin(np.abs(spec.axis(0) - 1.0))
    for n in range(1, 5):
        g = m.partial_graph(n)
        assert abs(s.X(spec.nodes()[idx], g.values[idx])[0]) <= 1e-12
    assert abs(m.rho.values[idx, 0]) <= 1e-10


@pytest.mark.parametrize("eps", [1 / 3, 1 / 5, 0.21])
def test_neishtadt_oracle(eps):
    p = make_neishtadt(eps)
    m = build_manifold(p.system, p.grid, 5, seed=p.seed, stop_on_stagnation=False)
    x = p.grid.axis(0)
    for n in range(1, 6):
        layer = m.eta_layers[n - 1].values
        assert np.abs(layer - p.oracles["oracle_eta"](n, x)).max() <= 1e-12
        g = m.partial_graph(n)
        # the residual after n layers
        dg = grid_derivative(g)
        rho = invariance_residual(p.system, g, dg).values
        assert np.abs(rho - p.oracles["oracle_rho"](n, x)).max() <= 1e-12


def test_stagnation_is_reported(mmh):
    m = build_manifold(mmh.system, mmh.grid, 40)
    assert m.stagnated
    assert any("stagnated" in w for w in m.warnings)
    assert m.E_eta == min(m.residual_history)
    with pytest.raises(IterationBudgetExceeded):
        build_manifold(mmh.system, mmh.grid, 40, strict=True)


def test_degenerate_fast_direction_is_masked():
    # dyY = -x vanishes at the origin
    s = SlowFastSystem(1, 1, 0.1, lambda x, y: -x, lambda x, y: x * (x - y), name="degenerate")
    m = build_manifold(s, GridSpec((0.0,), (1.0,), 0.01), 2)
    assert m.masked_nodes >= 1
    assert not m.graph.valid[0]
    assert any("masked" in w for w in m.warnings)
