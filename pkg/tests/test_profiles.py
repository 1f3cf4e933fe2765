import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate
from scipy.stats import norm

from ssep import profiles as P


profile_strategy = st.builds(
    lambda ys, x0, w: P.table(np.linspace(x0, x0 + w, len(ys)), ys),
    st.lists(st.floats(0.0, 1.0), min_size=2, max_size=6),
    st.floats(-3.0, 1.0),
    st.floats(0.5, 4.0),
)


def test_eval_profile_examples():
    assert P.eval_profile(P.constant(0.5), 3.7) == 0.5
    s = P.step(0.8, 0.2)
    assert P.eval_profile(s, -1.0) == 0.8
    assert P.eval_profile(s, 1.0) == 0.2


def test_parse_profile_round_trip():
    assert P.parse_profile("step 0.8 0.2") == P.step(0.8, 0.2)
    assert P.parse_profile("indicator -1 1") == P.indicator(-1.0, 1.0)
    t = P.parse_profile("table 0.3 0.6 -0.5:0.9 0.5:0.1")
    assert t.left == 0.3 and t.right == 0.6 and t(0.0) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        P.parse_profile("wave 1 2")
    with pytest.raises(ValueError):
        P.constant(1.5)


def test_heat_convolve_examples():
    assert P.heat_convolve(P.constant(0.3), 2.0, 1.3) == pytest.approx(0.3, abs=1e-14)
    s = P.step(0.8, 0.2)
    assert P.heat_convolve(s, 0.7, 0.0) == pytest.approx(0.5, abs=1e-14)
    assert P.heat_convolve(s, 1.0, 1.0) == pytest.approx(0.2 + 0.6 * norm.cdf(-1.0), abs=1e-12)
    with pytest.raises(ValueError):
        P.heat_convolve(s, 0.0, 0.0)


def _direct(p, t, x):
    f = lambda y: P.eval_profile(p, y) * norm.pdf((x - y) / np.sqrt(t)) / np.sqrt(t)
    span = 12 * np.sqrt(t)
    pts = [v for v in (p.x_lo, p.x_hi) if x - span < v < x + span]
    val, _ = integrate.quad(f, x - span, x + span, points=pts or None, limit=400, epsabs=1e-13)
    return val


@pytest.mark.parametrize("p", [P.step(0.8, 0.2), P.indicator(-1, 1), P.linear(-1, 2, 0.9, 0.1),
                               P.table([-1, 0, 1.5], [0.2, 0.9, 0.4], 0.5, 0.6)])
@pytest.mark.parametrize("t,x", [(0.3, -0.7), (1.0, 0.0), (2.5, 1.9)])
def test_heat_convolve_matches_quadrature(p, t, x):
    assert P.heat_convolve(p, t, x) == pytest.approx(_direct(p, t, x), abs=1e-10)


def test_heat_convolve_dx_matches_difference():
    p = P.linear(-1, 2, 0.9, 0.1)
    x = np.linspace(-3, 3, 13)
    h = 1e-5
    fd = (P.heat_convolve(p, 0.8, x + h) - P.heat_convolve(p, 0.8, x - h)) / (2 * h)
    assert np.allclose(P.heat_convolve_dx(p, 0.8, x), fd, atol=1e-8)


@given(profile_strategy, st.floats(0.01, 5.0), st.floats(-6.0, 6.0))
def test_maximum_principle(p, t, x):
    lo, hi = p.extrema()
    v = P.heat_convolve(p, t, x)
    assert lo - 1e-12 <= v <= hi + 1e-12


@given(profile_strategy, st.floats(0.05, 2.0), st.floats(0.05, 2.0), st.floats(-4.0, 4.0))
def test_semigroup(p, s, t, x):
    inner = lambda y: P.heat_convolve(p, t, y)
    val, _ = integrate.quad(lambda y: inner(y) * norm.pdf((x - y) / np.sqrt(s)) / np.sqrt(s),
                            x - 14 * np.sqrt(s), x + 14 * np.sqrt(s), epsabs=1e-12, limit=200)
    assert val == pytest.approx(P.heat_convolve(p, s + t, x), abs=1e-8)


@given(profile_strategy, st.floats(-5, 5), st.floats(-5, 5))
def test_integral_matches_quadrature(p, a, b):
    knots = {v for pc in p.pieces for v in pc.xs} | {p.x_lo, p.x_hi}
    pts = sorted(v for v in knots if min(a, b) < v < max(a, b))
    ref, _ = integrate.quad(lambda y: P.eval_profile(p, y), a, b, points=pts or None, limit=200)
    assert p.integral(a, b) == pytest.approx(ref, abs=1e-9)


def test_shift_and_reflect():
    p = P.linear(-1, 2, 0.9, 0.1)
    x = np.linspace(-4, 4, 17)
    assert np.allclose(p.shifted(0.7)(x), p(x + 0.7))
    assert np.allclose(p.reflected()(x), p(-x))


def test_make_dic_examples():
    c = P.make_dic(P.constant(0.5), 4, 4)
    occ = c.occupancy
    assert c.origin_occupied
    assert np.all(occ[:-1] != occ[1:]), "alternating pattern"
    assert abs(int(occ.sum()) - int(np.ceil(9 / 2))) <= 1
    assert P.make_dic(P.constant(1.0), 7, 30).occupancy.all()


def test_make_dic_empirical_density():
    p = P.step(0.8, 0.2)
    N = 50
    c = P.make_dic(p, N, 200)
    G = lambda u: ((u >= -1) & (u <= 1)).astype(float)
    from ssep.simulator import empirical_density
    assert abs(empirical_density(c, N, G) - p.integral(-1, 1)) <= 2 / N


@given(profile_strategy, st.integers(1, 40), st.floats(-2.0, 1.0), st.floats(0.1, 3.0))
def test_make_dic_interval_counts(p, N, a, w):
    W = int(N * 8) + 10
    c = P.make_dic(p, N, W)
    lo, hi = int(np.ceil(a * N)), int(np.floor((a + w) * N))
    if hi < lo:
        return
    count = c.count(lo, hi)
    # sites lo..hi carry the mass of [lo - 1/2, hi + 1/2] up to rounding; origin forcing adds one
    target = N * p.integral((lo - 0.5) / N, (hi + 0.5) / N)
    assert abs(count - target) <= 2


def test_sample_lem():
    p = P.constant(0.5)
    rng = np.random.default_rng(7)
    c = P.sample_lem(p, 1.0, 5000, rng)
    occ = c.occupancy.astype(float)
    assert c.origin_occupied
    se = 0.5 / np.sqrt(occ.size)
    assert abs(occ.mean() - 0.5) <= 3 * se + 1 / occ.size
    again = P.sample_lem(p, 1.0, 5000, np.random.default_rng(7))
    assert np.array_equal(again.occupancy, c.occupancy)
    for seed in range(20):
        assert P.sample_lem(P.constant(0.1), 1.0, 20, np.random.default_rng(seed)).origin_occupied


@pytest.mark.parametrize("text", ["step 0.8 0.2", "constant 0.3", "linear -1 1 0.9 0.1"])
@pytest.mark.parametrize("N", [7.0, 20.0, 50.0])
def test_make_dic_forces_origin_without_adding_mass(text, N):
    p = P.parse_profile(text)
    W = 200
    cfg = P.make_dic(p, N, W)
    assert cfg.origin_occupied
    # half-line masses follow the cumulative profile to within one particle
    right = cfg.count(0, W)
    assert abs(right - N * p.integral(0.0, (W + 1) / N)) <= 1.0
    left = cfg.count(-W, -1)
    assert abs(left - N * p.integral(-W / N, 0.0)) <= 1.0
