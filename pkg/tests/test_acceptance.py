"""End-to-end acceptance checks, one test and one reported line per criterion.

Tolerances are the contract values; a failing line is reported as such and
the corresponding test fails.
"""
import time

import numpy as np
import pytest

from ssep import experiments as ex
from ssep import hydro, profiles, ratefn, trialbounds, varprob

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

SQRT_PI = np.sqrt(np.pi)
HALF = profiles.constant(0.5)
LARGE_A = (10.0, 20.0, 40.0)


def test_criterion_1_exact_identities(report):
    t0 = time.perf_counter()
    rows = ex.identity_suite(samples=10_000, seed=0)
    elapsed = time.perf_counter() - t0
    failures = sum(r[-1] for r in rows)
    per_profile = {r[0] for r in rows}
    ok = failures == 0 and elapsed < 60.0 and len(per_profile) == 5 and sum(r[3] for r in rows) // 5 >= 10_000
    report(1, ok, f"{failures} identity failures over 5 profiles x {rows[0][3]} samples in {elapsed:.1f}s (limit 60s)")
    assert ok


def test_criterion_2_law_of_large_numbers(report):
    p = profiles.step(0.8, 0.2)
    # independent oracle: for a step the mean current is (rho_l - rho_r) sqrt(T / (2 pi))
    closed = 0.6 / np.sqrt(2 * np.pi)
    cfg = ex.ExperimentConfig("lln", profile="step 0.8 0.2", N=100, T=1.0, samples=400, seed=0)
    s = ex.run_experiment(cfg, write=False).summary
    ok = abs(s["z_J"]) <= 3 and abs(s["z_X"]) <= 3 and abs(s["v_T"] - closed) < 1e-10 \
        and abs(s["v_T"] - 0.2394) < 5e-5 and s["flag_rate"] < 0.01
    report(2, ok, f"J/N={s['mean_J_over_N']:.4f} vs v_T={s['v_T']:.4f} (z={s['z_J']:+.2f}); "
                  f"X/N={s['mean_X_over_N']:.4f} vs u_T={s['u_T']:.4f} (z={s['z_X']:+.2f}); "
                  f"flag rate {s['flag_rate']:.3f}")
    assert hydro.lln_current(p, 1.0) == pytest.approx(closed, abs=1e-12)
    assert ok


def test_criterion_3_equilibrium_variance(report):
    cfg = ex.ExperimentConfig("clt", rho=0.5, t_phys=400.0, W=120, samples=50_000, seed=0)
    s = ex.run_experiment(cfg, write=False).summary
    ok = s["rel_err_J"] <= 0.1 and s["rel_err_X"] <= 0.1 and abs(s["target_J"] - 0.19947) < 1e-5 \
        and max(s["flag_rate_current"], s["flag_rate_tagged"]) < 0.01
    report(3, ok, f"Var(J)/sqrt t={s['var_J_over_sqrt_t']:.4f} vs {s['target_J']:.5f} "
                  f"(err {100 * s['rel_err_J']:.1f}%); Var(X)/sqrt t={s['var_X_over_sqrt_t']:.4f} "
                  f"vs {s['target_X']:.5f} (err {100 * s['rel_err_X']:.1f}%); limit 10%")
    assert ok


def test_criterion_4_dynamical_variance(report):
    cfg = ex.ExperimentConfig("dyn-variance", rho=0.5, T=1e4, t_phys=400.0, W=120, samples=20_000,
                              seed=0, numeric=True)
    s = ex.run_experiment(cfg, write=False).summary
    target_q = (np.sqrt(2) - 1) * 0.25 / SQRT_PI
    ok = abs(s["Q0_over_sqrt_T"] / target_q - 1) <= 0.01 and s["rel_err_mc"] <= 0.1 \
        and abs(s["target_J_dyn"] - 0.14105) < 1e-5 and s["flag_rate"] < 0.01
    report(4, ok, f"Q0/sqrt T={s['Q0_over_sqrt_T']:.5f} vs {target_q:.5f} "
                  f"(err {100 * abs(s['Q0_over_sqrt_T'] / target_q - 1):.2f}%, limit 1%); "
                  f"MC Var(J)/sqrt t={s['mc_var_J_over_sqrt_t']:.4f} vs {s['target_J_dyn']:.5f} "
                  f"(err {100 * s['rel_err_mc']:.1f}%, limit 10%)")
    assert ok


def test_criterion_5_variational_problem(report):
    val, ik = varprob.inf_M()
    g = varprob.reconstruct_minimizer()
    e1, e2, e3 = abs(ik - 4 * SQRT_PI), abs(val - SQRT_PI / 2), abs(g.value - SQRT_PI / 2)
    ok = e1 <= 1e-8 and e2 <= 1e-8 and e3 <= 1e-4
    report(5, ok, f"|int 1/K - 4 sqrt pi|={e1:.1e}, |inf M - sqrt pi/2|={e2:.1e} (spectral), "
                  f"{e3:.1e} (grid)")
    assert ok


@pytest.fixture(scope="module")
def numeric_curves():
    small = (0.05, 0.1)
    cur = ratefn.rate_curve(HALF, 1.0, small + (0.5, 1.0) + LARGE_A, kind="current")
    tag = ratefn.rate_curve(HALF, 1.0, small, kind="tagged")
    return cur, tag


def test_criterion_6_rate_curve_structure(report, numeric_curves):
    cur, tag = numeric_curves
    T = 1.0
    lines = []

    # (a) numeric current rate below the closed-form bound, above the cubic bound where informative
    up = trialbounds.upper_bound_curve(HALF, T, cur.a, kind="current")
    below = all(n.value <= u.value + n.meta["tolerance"] for n, u in zip(cur.points, up.points))
    low = [(n.a, trialbounds.lower_bound_cubic(HALF, T, n.a, 1.0, HALF), n.value) for n in cur.points]
    above = all(v >= lb for _, lb, v in low if lb > 0)
    converged = all(n.meta["converged"] for n in cur.points + tag.points)
    ok_a = below and above and converged
    lines.append(f"(a) {'ok' if ok_a else 'FAIL'} numeric<=upper at {len(cur.points)} targets, "
                 f">=cubic lower at {sum(lb > 0 for _, lb, _ in low)}")

    # (b) small-a curvature
    ratios = {}
    for pt in cur.points[:2]:
        ratios[f"J({pt.a:g})/a^2"] = (pt.value / pt.a ** 2, 2 * SQRT_PI)
    for pt in tag.points:
        ratios[f"I({pt.a:g})/a^2"] = (pt.value / pt.a ** 2, SQRT_PI / 2)
    ok_b = all(abs(v / t - 1) <= 0.15 for v, t in ratios.values())
    lines.append("(b) " + ("ok " if ok_b else "FAIL ")
                 + ", ".join(f"{k}={v:.4f} ({100 * (v / t - 1):+.2f}%)" for k, (v, t) in ratios.items()))

    # (c) cubic growth of the bound and of the numeric curve on [10 sqrt T, 40 sqrt T]
    big_up = trialbounds.upper_bound_curve(HALF, T, np.geomspace(10, 40, 7)).values
    s_up = np.polyfit(np.log(np.geomspace(10, 40, 7)), np.log(big_up), 1)[0]
    big_num = np.array([pt.value for pt in cur.points if pt.a in LARGE_A])
    s_num = np.polyfit(np.log(LARGE_A), np.log(big_num), 1)[0]
    ok_c = abs(s_up - 3) <= 0.1 and abs(s_num - 3) <= 0.3
    lines.append(f"(c) {'ok' if ok_c else 'FAIL'} slopes upper={s_up:.3f} (3+-0.1), numeric={s_num:.3f} (3+-0.3)")

    # (d) local-equilibrium start is cheaper; tagged rate equals current rate of the shifted profile
    a = 0.1
    g = ratefn.SpaceTimeGrid.for_target(HALF, T, a, dx=0.1)
    dic = ratefn.minimize_rate_current(HALF, T, a, g)
    lem = ratefn.minimize_rate_current(HALF, T, a, g, init_kind="lem",
                                       opts=ratefn.RateOptions(init=(dic.fields.h_field, None)))
    tagged = ratefn.minimize_rate_tagged(HALF, T, a, g)
    shifted = ratefn.minimize_rate_current(HALF.shifted(a), T, HALF.integral(0.0, a), g)
    tol_order = 2 * max(dic.tolerance, lem.tolerance)
    tol_rel = 2 * max(tagged.tolerance, shifted.tolerance)
    ok_d = lem.value <= dic.value + tol_order and abs(tagged.value - shifted.value) <= tol_rel
    lines.append(f"(d) {'ok' if ok_d else 'FAIL'} LEM={lem.value:.6f} <= DIC={dic.value:.6f}; "
                 f"|I - J_shifted|={abs(tagged.value - shifted.value):.1e} <= {tol_rel:.1e}")

    ok = ok_a and ok_b and ok_c and ok_d
    report(6, ok, "; ".join(lines))
    assert ok


def test_criterion_7_empirical_ldp_slope(report):
    N_list = (8.0, 12.0, 16.0, 24.0)
    samples = (40_000, 500_000, 500_000, 300_000)
    cfg = ex.ExperimentConfig("ldp-fit", profile="constant 0.5", a=0.3, T=1.0, N_list=N_list,
                              samples_list=samples, seed=0, numeric=True)
    try:
        out = ex.run_experiment(cfg, write=False)
    except ex.UndersampledTail as err:
        report(7, False, f"tail guard refused the fit: successes {err.counts} from samples "
                         f"{err.samples} at N={tuple(int(n) for n in N_list)} (need >= 20 each)")
        raise
    s = out.summary
    ok = bool(out.passed) and s["slope"] < 0
    report(7, ok, f"slope={s['slope']:.4f} (CI {s['slope_ci'][0]:.4f}..{s['slope_ci'][1]:.4f}, "
                  f"width {s['ci_width']:.4f}); upper bound {s['upper_bound']:.4f}; "
                  f"numeric rate {s['numeric_rate']:.4f} ({s['numeric_gap_in_ci_widths']:.2f} CI widths, limit 2)")
    assert ok


def test_criterion_8_degenerate_profile(report):
    a_grid = tuple(np.round(np.linspace(0.05, 3.0, 60), 6))
    bound = ex.run_experiment(ex.ExperimentConfig("theorem4", kind="tagged", a_list=a_grid, T=1.0),
                              write=False).summary
    cur = ex.run_experiment(ex.ExperimentConfig("theorem4", kind="current", a_list=a_grid, T=1.0),
                            write=False).summary
    emp = ex.run_experiment(ex.ExperimentConfig("theorem4", kind="tagged", a_list=(0.3, 0.5),
                                                N_list=(10.0, 20.0), samples=2000, seed=0, T=1.0), write=False)
    exact = all(r[9] for r in emp.tables[1].rows)
    ok = bound["fitted_C"] > 0 and cur["fitted_C"] > 0 and exact and emp.summary["empirical_below_bound"]
    report(8, ok, f"C_tagged={bound['fitted_C']:.4f}, C_current={cur['fitted_C']:.4f} on [0.05, 3]; "
                  f"current never exceeds initial left count: {exact}; "
                  f"empirical tails below bound within CI: {emp.summary['empirical_below_bound']}")
    assert ok


def _heat_error(dx):
    p = profiles.linear(-1.0, 1.0, 0.8, 0.2)
    n_x = int(round(16.0 / dx)) + 1
    n_x += n_x % 2
    g = ratefn.SpaceTimeGrid(0.5 * dx * (n_x - 1), n_x, 1.0, int(round(1.0 / dx ** 2)))
    f = ratefn.solve_forward(np.zeros((g.n_t, g.n_x - 1)), profiles.eval_profile(p, g.x_nodes), g)
    return np.max(np.abs(f.mu[-1] - profiles.heat_convolve(p, 1.0, g.x_nodes)))


def _energy_residual(dx):
    p = profiles.step(0.7, 0.3)
    n_x = int(round(12.0 / dx)) + 1
    n_x += n_x % 2
    g = ratefn.SpaceTimeGrid(0.5 * dx * (n_x - 1), n_x, 1.0, int(round(1.0 / dx ** 2)))
    h = np.exp(-g.x_faces[None, :] ** 2) * np.sin(np.pi * g.t_nodes[:-1])[:, None]
    f = ratefn.solve_forward(h, profiles.heat_convolve(p, 0.2, g.x_nodes), g)
    return ratefn.energy_identity_check(f, g, ratefn.smooth_reference(p, 0.5))


def test_criterion_9_numerics_hygiene(report):
    rng = np.random.default_rng(0)
    worst = 0.0
    for kind, init_kind, scheme in [("current", "dic", "centered"), ("current", "dic", "upwind"),
                                    ("tagged", "dic", "centered"), ("tagged", "lem", "upwind")]:
        p = profiles.step(0.7, 0.3)
        g = ratefn.SpaceTimeGrid(3.0, 40, 1.0, 60)
        h = 0.3 * rng.standard_normal((g.n_t, g.n_x - 1))
        th = 0.2 * rng.standard_normal(g.n_x - 2) if init_kind == "lem" else None
        z = h.ravel() if th is None else np.concatenate([h.ravel(), th])

        def obj(zz):
            return ratefn.objective_and_gradient(p, g, 0.3, zz[: h.size], kind=kind, init_kind=init_kind,
                                                 scheme=scheme, nu=0.7, rho=3.0,
                                                 theta_lem=None if th is None else zz[h.size:])

        _, grad = obj(z)
        for _ in range(10):
            d = rng.standard_normal(z.size)
            d /= np.linalg.norm(d)
            fd = (obj(z + 1e-6 * d)[0] - obj(z - 1e-6 * d)[0]) / 2e-6
            worst = max(worst, abs(fd - grad @ d) / max(abs(fd), 1e-12))
    dxs = (0.2, 0.1, 0.05)
    he = np.array([_heat_error(dx) for dx in dxs])
    en = np.array([_energy_residual(dx) for dx in dxs])
    heat_orders = np.log2(he[:-1] / he[1:])
    energy_orders = np.log2(en[:-1] / en[1:])
    ok = worst <= 1e-4 and np.all(heat_orders >= 1.8) and energy_orders[-1] >= 1.8
    report(9, ok, f"gradient rel err {worst:.1e} (limit 1e-4); heat orders "
                  f"{', '.join(f'{o:.2f}' for o in heat_orders)} (>=1.8); energy residuals "
                  f"{', '.join(f'{e:.1e}' for e in en)}, orders {', '.join(f'{o:.2f}' for o in energy_orders)}")
    assert ok
