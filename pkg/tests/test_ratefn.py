import numpy as np
import pytest
from hypothesis import given, strategies as st

from ssep import hydro, ratefn as rf, trialbounds as tb
from ssep.profiles import constant, eval_profile, heat_convolve, linear, step


def _zero(g):
    return np.zeros((g.n_t, g.n_x - 1))


# ------------------------------------------------------------------ grids

def test_grid_validation():
    with pytest.raises(ValueError):
        rf.SpaceTimeGrid(5.0, 41, 1.0, 100)
    with pytest.raises(ValueError):
        rf.SpaceTimeGrid(5.0, 40, 1.0, 10)
    g = rf.SpaceTimeGrid(5.0, 40, 1.0, 100)
    assert g.x_faces[g.origin_face] == pytest.approx(0.0, abs=1e-12)
    assert g.t_nodes[-1] == pytest.approx(1.0)


@pytest.mark.parametrize("a", [0.05, 0.37, -1.3])
def test_for_target_puts_target_on_a_face(a):
    g = rf.SpaceTimeGrid.for_target(step(0.6, 0.4), 1.0, a)
    assert np.min(np.abs(g.x_faces - a)) < 1e-9
    assert g.L >= abs(a) + 6.0


def test_self_similar_grid():
    g = rf.SpaceTimeGrid.self_similar(constant(0.5), 1.0, 10.0)
    assert g.dx == pytest.approx(0.5)
    assert g.L >= 40.0
    assert np.min(np.abs(g.x_faces - 10.0)) < 1e-9


# -------------------------------------------------------------- forward solve

def test_heat_flow_of_step_is_half_at_origin():
    g = rf.SpaceTimeGrid(10.0, 400, 1.0, 400)
    p = step(0.8, 0.2)
    f = rf.solve_forward(_zero(g), eval_profile(p, g.x_nodes), g)
    mid = np.interp(0.0, g.x_nodes, f.mu[-1])
    assert mid == pytest.approx(0.5, abs=1e-3)


def test_constant_density_is_stationary():
    g = rf.SpaceTimeGrid(4.0, 60, 1.0, 300)
    f = rf.solve_forward(_zero(g), np.full(g.n_x, 0.3), g)
    assert np.allclose(f.mu, 0.3, atol=1e-14, rtol=0)
    assert rf.integrated_current(f, g, 0.0) == pytest.approx(0.0, abs=1e-14)
    assert rf.i0_evaluate(f, g) == 0.0


def _heat_error(dx, p, T=1.0):
    L = 8.0
    n_x = int(round(2 * L / dx)) + 1
    n_x += n_x % 2
    g = rf.SpaceTimeGrid(0.5 * dx * (n_x - 1), n_x, T, int(round(T / dx**2)))
    f = rf.solve_forward(_zero(g), eval_profile(p, g.x_nodes), g)
    return np.max(np.abs(f.mu[-1] - heat_convolve(p, T, g.x_nodes)))


def test_heat_flow_convergence_order():
    p = linear(-1.0, 1.0, 0.8, 0.2)
    errs = [_heat_error(dx, p) for dx in (0.2, 0.1, 0.05)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.8), orders


def test_instability_is_reported():
    g = rf.SpaceTimeGrid(3.0, 20, 1.0, 100)
    h = np.tile(1e3 * (-1.0) ** np.arange(g.n_x - 1), (g.n_t, 1))
    with pytest.raises(rf.NumericalInstability, match="upwind"):
        rf.solve_forward(h, np.full(g.n_x, 0.5), g)


@pytest.mark.parametrize("scheme", ["centered", "upwind"])
def test_discrete_conservation(scheme, rng):
    g = rf.SpaceTimeGrid(3.0, 30, 1.0, 80)
    h = 0.5 * rng.standard_normal((g.n_t, g.n_x - 1))
    mu0 = eval_profile(step(0.7, 0.3), g.x_nodes)
    f = rf.solve_forward(h, mu0, g, scheme=scheme)
    dmu = (f.mu[1:, 1:-1] - f.mu[:-1, 1:-1]) / g.dt
    div = np.diff(f.j_field, axis=1) / g.dx
    assert np.max(np.abs(dmu + div)) < 1e-10


def _trial_grid(dx, L=6.0, T=1.0):
    n_x = int(round(2 * L / dx)) + 1
    n_x += n_x % 2
    return rf.SpaceTimeGrid(0.5 * dx * (n_x - 1), n_x, T, int(round(T / dx**2)))


def test_trial_drift_reproduces_trial_density():
    p, T, lam, L = constant(0.5), 1.0, 0.2, 2.0
    errs = []
    for dx in (0.2, 0.1):
        g = _trial_grid(dx)
        tf = tb.trial_field(p, T, lam, L, g)
        f = rf.solve_forward(tf.h_field, tf.mu[0], g)
        errs.append(np.max(np.abs(f.mu - tf.mu)))
    assert errs[1] < 2e-3
    assert errs[0] / errs[1] > 3.0


# ------------------------------------------------------------ functionals

def test_relative_entropy_examples():
    g = rf.SpaceTimeGrid(3.0, 40, 1.0, 100)
    p = constant(0.5)
    assert rf.relative_entropy(np.full(g.n_x, 0.5), p, g) == 0.0
    hd = 0.6 * np.log(1.2) + 0.4 * np.log(0.8)
    assert rf.relative_entropy(np.full(g.n_x, 0.6), p, g) == pytest.approx(2 * g.L * hd, rel=1e-12)
    mu0 = np.full(g.n_x, 0.5)
    assert rf.relative_entropy(mu0, step(1.0, 0.0), g) == np.inf


def test_hellinger_inequality_bulk(rng):
    a, b = rng.random(10_000), rng.uniform(1e-6, 1 - 1e-6, 10_000)
    assert np.all(tb.h_d(a, b) >= (np.sqrt(a) - np.sqrt(b)) ** 2 - 1e-15)


@given(st.floats(0, 1), st.floats(1e-9, 1 - 1e-9))
def test_hellinger_inequality(a, b):
    assert tb.h_d(a, b) >= (np.sqrt(a) - np.sqrt(b)) ** 2 - 1e-15


def test_integrated_current_lipschitz(rng):
    g = rf.SpaceTimeGrid(3.0, 60, 1.0, 300)
    for _ in range(5):
        h = rng.uniform(-2, 2, (g.n_t, g.n_x - 1))
        f = rf.solve_forward(h, eval_profile(step(0.7, 0.3), g.x_nodes), g, scheme="upwind")
        xs = rng.uniform(-2.5, 2.5, 20)
        J = np.array([rf.integrated_current(f, g, x) for x in xs])
        dif = np.abs(J[:, None] - J[None, :])
        assert np.all(dif <= np.abs(xs[:, None] - xs[None, :]) + 2 * g.dx)


def test_current_mass_relation():
    p, T = step(0.8, 0.2), 1.0
    g = rf.SpaceTimeGrid.for_target(p, T, 0.0, dx=0.05)
    tf = tb.trial_field(p, T, 0.05, 1.5, g)
    f = rf.solve_forward(tf.h_field, tf.mu[0], g)
    right = g.x_nodes > 0
    mass = np.sum(f.mu[-1, right] - f.mu[0, right]) * g.dx
    assert rf.integrated_current(f, g, 0.0) == pytest.approx(mass, abs=1e-3)
    assert rf.integrated_current(f, g, 0.0) == pytest.approx(
        hydro.lln_current(p, T) + 0.05 * 1.5 * tb.bump_calculus().int_psi_01, abs=2e-3)


def test_i0_of_trial_field_against_quadrature_and_bound():
    p, T, lam, L = constant(0.5), 1.0, 0.2, 2.0
    g = _trial_grid(0.05)
    f = rf.solve_forward(tb.trial_field(p, T, lam, L, g).h_field, eval_profile(p, g.x_nodes), g)
    val = rf.i0_evaluate(f, g)
    assert val == pytest.approx(tb.i0_trial_quadrature(p, T, lam, L), rel=0.02)
    assert val <= tb.i0_bound(p, T, lam, L)


def test_i0_grows_when_drift_doubles(rng):
    g = rf.SpaceTimeGrid(3.0, 40, 1.0, 100)
    h = rng.uniform(-1, 1, (g.n_t, g.n_x - 1))
    mu0 = np.full(g.n_x, 0.5)
    v1 = rf.i0_evaluate(rf.solve_forward(h, mu0, g), g)
    v2 = rf.i0_evaluate(rf.solve_forward(2 * h, mu0, g), g)
    assert v2 > v1 > 0


def _energy_residual(dx, h_scale):
    p, T = step(0.7, 0.3), 1.0
    g = _trial_grid(dx, L=6.0, T=T)
    mu0 = heat_convolve(p, 0.2, g.x_nodes)
    xf, tn = g.x_faces, g.t_nodes[:-1]
    h = h_scale * np.exp(-xf[None, :] ** 2) * np.sin(np.pi * tn)[:, None]
    f = rf.solve_forward(h, mu0, g)
    return rf.energy_identity_check(f, g, rf.smooth_reference(p, 0.5))


def test_energy_identity_heat_flow():
    assert _energy_residual(0.1, 0.0) <= 1e-3


def test_energy_identity_second_order():
    r = [_energy_residual(dx, 1.0) for dx in (0.2, 0.1, 0.05)]
    orders = np.log2(np.array(r[:-1]) / np.array(r[1:]))
    assert np.all(orders >= 1.5), orders


# ------------------------------------------------------------ gradients

@pytest.mark.parametrize("kind,init_kind,scheme", [
    ("current", "dic", "centered"), ("current", "dic", "upwind"),
    ("tagged", "dic", "centered"), ("tagged", "lem", "centered"), ("current", "lem", "upwind")])
def test_adjoint_gradient_matches_finite_differences(kind, init_kind, scheme, rng):
    p = step(0.7, 0.3)
    g = rf.SpaceTimeGrid(3.0, 40, 1.0, 60)
    a = 0.3
    h = 0.3 * rng.standard_normal((g.n_t, g.n_x - 1))
    th = 0.2 * rng.standard_normal(g.n_x - 2) if init_kind == "lem" else None
    gam = eval_profile(p, g.x_nodes[1:-1])
    th = None if th is None else np.log(gam / (1 - gam)) + th
    z = h.ravel() if th is None else np.concatenate([h.ravel(), th])

    def obj(zz):
        hh = zz[: h.size]
        tt = zz[h.size:] if th is not None else None
        return rf.objective_and_gradient(p, g, a, hh, kind=kind, init_kind=init_kind, scheme=scheme,
                                         nu=0.7, rho=3.0, theta_lem=tt)

    _, grad = obj(z)
    eps = 1e-6
    for _ in range(20):
        d = rng.standard_normal(z.size)
        d /= np.linalg.norm(d)
        fd = (obj(z + eps * d)[0] - obj(z - eps * d)[0]) / (2 * eps)
        assert fd == pytest.approx(grad @ d, rel=1e-4, abs=1e-9)


# ------------------------------------------------------------ minimisation

def test_typical_value_costs_nothing():
    p, T = step(0.8, 0.2), 1.0
    v = hydro.lln_current(p, T)
    g = rf.SpaceTimeGrid.for_target(p, T, 0.0, dx=0.1)
    sol = rf.minimize_rate_current(p, T, v, g)
    assert sol.value <= 1e-4
    assert abs(sol.residual) <= 1e-4


def test_small_current_deviation_curvature():
    p, T, a = constant(0.5), 1.0, 0.05
    sol = rf.minimize_rate_current(p, T, a, rf.SpaceTimeGrid.for_target(p, T, a))
    assert sol.converged
    assert sol.value / a**2 == pytest.approx(2 * np.sqrt(np.pi), rel=0.01)
    assert sol.value <= tb.upper_bound_current(p, T, a)[0]


def test_tagged_dic_relation():
    p, T, a = step(0.6, 0.4), 1.0, 0.3
    g = rf.SpaceTimeGrid.for_target(p, T, a, dx=0.1, margin=4.0)
    tag = rf.minimize_rate_tagged(p, T, a, g)
    cur = rf.minimize_rate_current(p.shifted(a), T, p.integral(0.0, a), g)
    assert tag.converged and cur.converged
    assert tag.value == pytest.approx(cur.value, abs=2 * max(tag.tolerance, cur.tolerance))


def test_local_equilibrium_start_is_cheaper():
    p, T, a = constant(0.5), 1.0, 0.1
    g = rf.SpaceTimeGrid.for_target(p, T, a, dx=0.2)
    dic = rf.minimize_rate_current(p, T, a, g)
    lem = rf.minimize_rate_current(p, T, a, g, init_kind="lem",
                                   opts=rf.RateOptions(init=(dic.fields.h_field, None)))
    assert lem.value <= dic.value + 2 * dic.tolerance
    assert lem.entropy > 0
    assert rf.relative_entropy(lem.mu0, p, g) == pytest.approx(lem.entropy, rel=0.05)


def test_lem_requires_interior_profile():
    p = step(1.0, 0.0)
    g = rf.SpaceTimeGrid.for_target(p, 1.0, 0.1)
    with pytest.raises(ValueError):
        rf.minimize_rate_current(p, 1.0, 0.1, g, init_kind="lem")


def test_rate_curve_small_targets():
    p = constant(0.5)
    curve = rf.rate_curve(p, 1.0, [0.0, 0.05], dx=0.2)
    assert curve.values[0] <= 1e-6
    assert curve.points[1].kind == "numeric_min"
    assert all(pt.meta["converged"] for pt in curve.points)
    assert not rf.is_large_deviation(p, 1.0, 1.0) and rf.is_large_deviation(p, 1.0, 10.0)
