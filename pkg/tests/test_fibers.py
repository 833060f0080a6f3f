import numpy as np
import pytest
from scipy.linalg import solve_sylvester

from slowfast.core import GridFunction, GridSpec, SlowFastSystem
from slowfast.dynamics import order_fit
from slowfast.errors import SingularSylvester
from slowfast.fibers import (SlowQuantities, assemble_lambda_A_mu, build_phi, mu_update,
                             solve_phi_step, solve_sylvester_batch)
from slowfast.manifold import build_manifold
from slowfast.systems import make_lindemann, make_mmh

XS = np.linspace(1.0, 2.3, 14)[:, None]
EPS = [0.1, 0.05, 0.025, 0.0125]


def test_mu0_exact(mmh_raw_man, mmh_dev_man):
    for man in (mmh_raw_man, mmh_dev_man):
        sq = assemble_lambda_A_mu(man)
        v = sq.mu0.valid
        x = man.spec.nodes()[v][:, 0]
        assert np.abs(sq.mu0.values[v][:, 0, 0] - (x + 1.0)).max() <= 1e-15


def test_A_leading_term():
    p = make_mmh(2.0, 1.0, 1e-6)
    sq = assemble_lambda_A_mu(build_manifold(p.system, p.grid, 3))
    v = sq.A.valid
    x = p.grid.nodes()[v][:, 0]
    A = sq.A.values[v][:, 0, 0]
    assert np.abs(A - (-2.0 - x)).max() <= 1e-6
    assert np.abs(A - p.oracles["A_series"](x)).max() <= 1e-10


def test_slow_field_independent_of_fast_gives_zero_phi():
    s = SlowFastSystem(1, 1, 0.1, lambda x, y: np.sin(x), lambda x, y: x - y)
    fib = build_phi(build_manifold(s, GridSpec((0.0,), (1.0,), 0.01), 2), 3)
    # dyX comes from the stencil here, so zero holds to round-off
    assert np.abs(fib.phi.values).max() <= 1e-10
    assert fib.E_phi <= 1e-10


def test_scalar_phi_formula(mmh_raw_man):
    sq = assemble_lambda_A_mu(mmh_raw_man)
    phi0 = solve_phi_step(sq, sq.mu0)
    v = phi0.valid
    expect = sq.mu0.values[v] / (sq.A.values[v] - sq.rate * sq.dLam.values[v])
    assert np.allclose(phi0.values[v], expect, rtol=1e-13, atol=0)
    x = mmh_raw_man.spec.nodes()[v][:, 0]
    assert np.abs(phi0.values[v][:, 0, 0] + (x + 1.0) / (x + 2.0)).max() < 0.1 * 0.2


def test_sylvester_batch_against_scipy():
    rng = np.random.default_rng(3)
    n = 6
    dlam = rng.normal(size=(n, 2, 2))
    A = rng.normal(size=(n, 3, 3)) - 4 * np.eye(3)
    mu = rng.normal(size=(n, 2, 3))
    phi, ok = solve_sylvester_batch(dlam, A, mu, 0.1)
    assert ok.all()
    for i in range(n):
        ref = solve_sylvester(0.1 * dlam[i], -A[i], -mu[i])
        assert np.allclose(phi[i], ref, atol=1e-12)


def test_sylvester_eps_zero_is_inverse():
    rng = np.random.default_rng(4)
    A = rng.normal(size=(5, 2, 2)) + 3 * np.eye(2)
    mu = rng.normal(size=(5, 1, 2))
    phi, ok = solve_sylvester_batch(np.zeros((5, 1, 1)), A, mu, 0.0)
    assert ok.all()
    assert np.allclose(phi, mu @ np.linalg.inv(A), atol=1e-13)


def test_sylvester_zero_rhs_and_singular():
    A = np.array([[[-1.0]]])
    phi, ok = solve_sylvester_batch(np.array([[[0.5]]]), A, np.zeros((1, 1, 1)), 0.1)
    assert ok.all() and np.all(phi == 0.0)
    # rate dLam equals A: the operator is singular
    _, ok = solve_sylvester_batch(np.array([[[-10.0]]]), A, np.ones((1, 1, 1)), 0.1)
    assert not ok.any()


def test_singular_everywhere_raises():
    spec = GridSpec((0.0,), (1.0,), 0.1)
    one = GridFunction(spec, np.ones(spec.shape + (1, 1)))
    sq = SlowQuantities(GridFunction(spec, np.ones(spec.shape + (1,))), one, one, one, 1.0)
    with pytest.raises(SingularSylvester):
        solve_phi_step(sq, one)


def test_mu_update_vanishes_without_slow_drift():
    spec = GridSpec((0.0,), (1.0,), 0.05)
    x = spec.axis(0)
    phi = GridFunction(spec, np.sin(x)[:, None, None])
    zero = GridFunction(spec, np.zeros(spec.shape + (1,)))
    one = GridFunction(spec, np.ones(spec.shape + (1, 1)))
    mu = mu_update(phi, SlowQuantities(zero, one, one, one, 0.1))
    assert np.all(mu.values == 0.0)
    assert mu.margin_nodes == 2


@pytest.mark.parametrize("form", ["system", "deviation"])
def test_E_phi_converges(form, mmh):
    man = build_manifold(getattr(mmh, form), mmh.grid, 10)
    fib = build_phi(man, 8)
    assert fib.E_phi <= 1e-12
    g = fib.mu_history
    assert g[1] <= g[0] and g[2] <= g[1] and g[3] <= g[2]


def test_mu1_leading_coefficient():
    errs = []
    for e in EPS:
        p = make_mmh(2.0, 1.0, e)
        fib = build_phi(build_manifold(p.deviation, p.grid, 10), 1)
        errs.append(np.abs(fib.mu_layers[1](XS)[:, 0, 0] - p.oracles["mu1_lead"](XS[:, 0])).max())
    assert order_fit(EPS, errs)[0] == pytest.approx(2.0, abs=0.3)


def test_phi2_series():
    errs = []
    for e in EPS:
        p = make_mmh(2.0, 1.0, e)
        fib = build_phi(build_manifold(p.deviation, p.grid, 12), 2, stop_on_stagnation=False)
        errs.append(np.abs(fib.phi(XS)[:, 0, 0] - p.oracles["phi_series"](XS[:, 0], 2)).max())
    assert order_fit(EPS, errs)[0] == pytest.approx(3.0, abs=0.3)


def test_tangent_vector_series():
    errs = []
    for e in EPS:
        p = make_mmh(2.0, 1.0, e)
        fib = build_phi(build_manifold(p.system, p.grid, 12), 2, stop_on_stagnation=False)
        t = fib.tangent_frame(XS)[..., 0]
        errs.append(np.abs(t - p.oracles["v_series"](XS[:, 0])).max())
    assert order_fit(EPS, errs)[0] == pytest.approx(3.0, abs=0.3)


def test_lindemann_phi_and_mu_series():
    x = np.linspace(0.5, 2.0, 16)[:, None]
    e1, em = [], []
    for e in EPS:
        p = make_lindemann(e)
        fib = build_phi(build_manifold(p.system, p.grid, 12), 1)
        e1.append(np.abs(fib.phi(x)[:, 0, 0] - p.oracles["phi_series"](x[:, 0], 1)).max())
        em.append(np.abs(fib.mu_layers[1](x)[:, 0, 0] - p.oracles["mu1_lead"](x[:, 0])).max())
    assert order_fit(EPS, e1)[0] == pytest.approx(3.0, abs=0.3)
    assert order_fit(EPS, em)[0] == pytest.approx(3.0, abs=0.3)


def test_frames_identities(mmh_raw_fib):
    _, t, n = mmh_raw_fib.frames_at_nodes()
    assert np.abs(n @ t).max() <= 1e-13
    assert np.linalg.svd(t, compute_uv=False).min() > 1e-8
    assert np.linalg.svd(n, compute_uv=False).min() > 1e-8


def test_frames_small_eps_limit():
    p = make_mmh(2.0, 1.0, 1e-9)
    fib = build_phi(build_manifold(p.system, p.grid, 2), 1)
    x = np.array([[1.5]])
    t = fib.tangent_frame(x)[0]
    n = fib.normal_frame(x)[0]
    assert np.allclose(t, [[0.0], [1.0]], atol=1e-8)
    assert np.allclose(n, [[1.0, 0.0]], atol=1e-8)


def test_equilibrium_exactness():
    # MMH has its equilibrium at x = 0
    p = make_mmh(2.0, 1.0, 0.1, GridSpec((-0.5,), (2.0,), 0.01))
    man = build_manifold(p.system, p.grid, 6, stop_on_stagnation=False)
    fib = build_phi(man, 4, stop_on_stagnation=False)
    i = int(np.argmin(np.abs(p.grid.axis(0))))
    assert np.abs(fib.quantities.Lam.values[i]).max() <= 1e-12
    assert abs(man.rho.values[i, 0]) <= 1e-10
    for mu in fib.mu_layers[1:]:
        assert np.abs(mu.values[i]).max() <= 1e-10


def test_matched_depth(mmh):
    # depth 2: the root seed plus one step
    man = build_manifold(mmh.system, mmh.grid, 1, stop_on_stagnation=False)
    c = [build_phi(man, n2, stop_on_stagnation=False).coupling_error() for n2 in range(2, 9)]
    assert c[0] / min(c[1:]) <= 2.0
    # the deviation change is itself one step, so depth 2 there is the bare seed
    dev = build_manifold(mmh.deviation, mmh.grid, 0)
    d = [build_phi(dev, n2, stop_on_stagnation=False).coupling_error() for n2 in range(2, 9)]
    assert d[0] / min(d[1:]) <= 2.0


def test_stagnation_keeps_best(mmh_raw_man):
    fib = build_phi(mmh_raw_man, 30)
    assert fib.stagnated
    assert fib.E_phi == pytest.approx(min(fib.residual_history))
