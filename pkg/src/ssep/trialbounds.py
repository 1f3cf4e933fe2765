"""Explicit trial densities and the closed-form bounds built from them.

The trial density is the heat flow of ``gamma`` plus a smooth bump that is
switched on after ``T/10``:

    mu(s, x) = sigma_s * gamma(x) + lam * eps(s/T) * psi(x/L).

It solves the controlled equation with an explicit drift supported on
``[T/10, T] x [-|L|, |L|]``, which yields an upper bound on the current and
tagged-particle rate functions.  Sign convention: ``lam >= 0`` and the sign
of the displacement is carried by ``L``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import CubicHermiteSpline
from scipy.special import ndtr

from . import hydro
from .profiles import Profile, eval_profile, heat_convolve

_UNDERFLOW = 1e-12


# ------------------------------------------------------------------ bumps

def psi0(x):
    """``exp(-1/(1-x^2))`` on ``(-1, 1)``, zero elsewhere."""
    x = np.asarray(x, dtype=float)
    d = 1.0 - x * x
    with np.errstate(divide="ignore", over="ignore"):
        out = np.where(d > _UNDERFLOW, np.exp(-1.0 / np.where(d > _UNDERFLOW, d, 1.0)), 0.0)
    return out if out.ndim else float(out)


def dpsi0(x):
    x = np.asarray(x, dtype=float)
    d = 1.0 - x * x
    safe = np.where(d > _UNDERFLOW, d, 1.0)
    out = np.where(d > _UNDERFLOW, psi0(x) * (-2.0 * x / safe ** 2), 0.0)
    return out if out.ndim else float(out)


@lru_cache(maxsize=1)
def _psi0_antiderivative():
    """Hermite spline of ``A(v) = int_{-1}^v psi0`` (exact derivative data)."""
    v = np.linspace(-1.0, 1.0, 4001)
    nodes, weights = np.polynomial.legendre.leggauss(12)
    cum = np.zeros_like(v)
    for k in range(1, v.size):
        a, b = v[k - 1], v[k]
        u = 0.5 * (b - a) * nodes + 0.5 * (b + a)
        cum[k] = cum[k - 1] + 0.5 * (b - a) * np.dot(weights, psi0(u))
    return CubicHermiteSpline(v, cum, psi0(v)), float(cum[-1])


def _A(v):
    spline, total = _psi0_antiderivative()
    v = np.asarray(v, dtype=float)
    out = np.where(v <= -1.0, 0.0, np.where(v >= 1.0, total, spline(np.clip(v, -1.0, 1.0))))
    return out


def psi(x):
    """Antisymmetric bump: ``-psi0(2x + 1)`` for ``x <= 0`` and ``psi0(2x - 1)`` for ``x >= 0``."""
    x = np.asarray(x, dtype=float)
    out = np.where(x <= 0, -psi0(2.0 * x + 1.0), psi0(2.0 * x - 1.0))
    return out if out.ndim else float(out)


def dpsi(x):
    x = np.asarray(x, dtype=float)
    out = np.where(x <= 0, -2.0 * dpsi0(2.0 * x + 1.0), 2.0 * dpsi0(2.0 * x - 1.0))
    return out if out.ndim else float(out)


def Psi(x):
    """``int_{-1}^x psi``; non-positive and supported on ``[-1, 1]``."""
    x = np.asarray(x, dtype=float)
    total = _A(1.0)
    out = np.where(x <= 0, -0.5 * _A(2.0 * x + 1.0), -0.5 * total + 0.5 * _A(2.0 * x - 1.0))
    out = np.where(np.abs(x) >= 1.0, 0.0, out)
    return out if out.ndim else float(out)


def eps_ramp(t):
    """Smooth ramp: 0 on ``[0, 1/10]``, 1 at ``t = 1``."""
    t = np.asarray(t, dtype=float)
    u = np.clip((t - 0.1) / 0.9, 0.0, 1.0)
    out = _A(2.0 * u - 1.0) / _A(1.0)
    return out if out.ndim else float(out)


def deps_ramp(t):
    t = np.asarray(t, dtype=float)
    u = (t - 0.1) / 0.9
    inside = (u > 0) & (u < 1)
    out = np.where(inside, 2.0 * psi0(2.0 * np.clip(u, 0, 1) - 1.0) / (0.9 * _A(1.0)), 0.0)
    return out if out.ndim else float(out)


def bump_eval(which: str, x):
    funcs = {"psi0": psi0, "psi": psi, "Psi": Psi, "eps": eps_ramp, "dpsi": dpsi, "deps": deps_ramp}
    if which not in funcs:
        raise ValueError(f"unknown bump {which!r}")
    return funcs[which](x)


@dataclass(frozen=True)
class BumpCalculus:
    int_dpsi_sq: float
    int_Psi_sq: float
    int_psi_01: float
    eps_star: float

    def partial(self, r):
        """``int_r^1 psi`` for ``0 <= r <= 1``."""
        r = np.clip(np.asarray(r, dtype=float), 0.0, 1.0)
        out = 0.5 * (_A(1.0) - _A(2.0 * r - 1.0))
        return out if out.ndim else float(out)


@lru_cache(maxsize=1)
def bump_calculus() -> BumpCalculus:
    opts = dict(epsabs=1e-13, epsrel=1e-12, limit=200)
    d2 = 2.0 * integrate.quad(lambda x: dpsi(x) ** 2, 0.0, 1.0, points=[0.5], **opts)[0]
    P2 = 2.0 * integrate.quad(lambda x: Psi(x) ** 2, 0.0, 1.0, points=[0.5], **opts)[0]
    p01 = integrate.quad(psi, 0.0, 1.0, **opts)[0]
    # the ramp derivative peaks where psi0 does, at u = 1/2
    eps_star = 1.0 + deps_ramp(0.1 + 0.9 * 0.5) ** 2
    return BumpCalculus(d2, P2, p01, eps_star)


# ------------------------------------------------------------- trial fields

@dataclass(frozen=True)
class TrialParams:
    lam: float
    L: float
    gamma_lo: float
    gamma_hi: float

    @property
    def cap(self) -> float:
        return 0.5 * min(self.gamma_lo, 1.0 - self.gamma_hi)


def profile_bounds(p: Profile, T: float) -> tuple[float, float]:
    """``(gamma_*, gamma^*)``: bounds of ``sigma_{T/10} * gamma``."""
    return hydro.smoothed_bounds(p, T)


def trial_density(p: Profile, T: float, lam: float, L: float, s: float, x):
    """Trial density at time ``s`` (scalar) and positions ``x``."""
    base = heat_convolve(p, s, x) if s > 0 else eval_profile(p, x)
    if lam == 0.0:
        return base
    return base + lam * eps_ramp(s / T) * psi(np.asarray(x) / L)


def trial_flux(T: float, lam: float, L: float, s, x):
    """``H mu (1 - mu)``: the drift part of the trial current."""
    s = np.asarray(s, dtype=float)
    x = np.asarray(x, dtype=float)
    if lam == 0.0:
        return np.zeros(np.broadcast(s, x).shape)
    return lam * eps_ramp(s / T) / (2.0 * L) * dpsi(x / L) - lam * L * deps_ramp(s / T) / T * Psi(x / L)


def trial_drift(p: Profile, T: float, lam: float, L: float, s, x, mu=None):
    """Drift ``H`` of the trial density; ``mu`` may be supplied to avoid recomputation."""
    m = trial_density(p, T, lam, L, s, x) if mu is None else mu
    return trial_flux(T, lam, L, s, x) / (m * (1.0 - m))


def check_admissible(p: Profile, T: float, lam: float) -> TrialParams:
    lo, hi = profile_bounds(p, T)
    params = TrialParams(lam, np.nan, lo, hi)
    if lam < 0 or lam > params.cap * (1.0 + 1e-12):
        raise ValueError(f"lambda={lam:g} outside [0, {params.cap:g}]")
    return params


def trial_field(p: Profile, T: float, lam: float, L: float, grid):
    """Sample the trial density and drift on a space-time grid.

    Densities live on the grid nodes, drifts on the cell faces at the start
    of each time step (the forward scheme's layout).  Returns a
    :class:`ssep.ratefn.FieldTriple` whose current is the closed-form
    trial current.
    """
    from .ratefn import FieldTriple

    check_admissible(p, T, lam)
    t = grid.t_nodes
    xs = grid.x_nodes
    xf = grid.x_faces
    mu = np.empty((t.size, xs.size))
    mu[0] = eval_profile(p, xs)
    for k in range(1, t.size):
        mu[k] = heat_convolve(p, t[k], xs)
    if lam != 0.0:
        mu += lam * eps_ramp(t / T)[:, None] * psi(xs / L)[None, :]
    h = np.zeros((grid.n_t, xf.size))
    j = np.zeros((grid.n_t, xf.size))
    for k in range(grid.n_t):
        tk = t[k]
        if tk > 0:
            base = heat_convolve(p, tk, xf)
            dbase = _heat_dx(p, tk, xf)
        else:
            base = eval_profile(p, xf)
            dbase = np.zeros_like(xf)
        flux = trial_flux(T, lam, L, tk, xf)
        m = base + (lam * eps_ramp(tk / T) * psi(xf / L) if lam else 0.0)
        h[k] = flux / (m * (1.0 - m))
        dm = dbase + (lam * eps_ramp(tk / T) * dpsi(xf / L) / L if lam else 0.0)
        j[k] = -0.5 * dm + flux
    return FieldTriple(mu, h, j)


def _heat_dx(p, t, x):
    from .profiles import heat_convolve_dx
    return heat_convolve_dx(p, t, x)


def i0_bound(p: Profile, T: float, lam: float, L: float, bounds=None) -> float:
    """Closed-form upper bound on the trial cost."""
    if lam == 0.0:
        return 0.0
    bc = bump_calculus()
    lo, hi = profile_bounds(p, T) if bounds is None else bounds
    aL = abs(L)
    return float(4.0 * bc.eps_star / (lo * (1.0 - hi))
                 * (lam ** 2 * T / (4.0 * aL) * bc.int_dpsi_sq + lam ** 2 * aL ** 3 / T * bc.int_Psi_sq))


def i0_trial_quadrature(p: Profile, T: float, lam: float, L: float, panels: int = 16,
                        order: int = 16) -> float:
    """``1/2 int int (H mu(1-mu))^2 / (mu(1-mu))`` by composite Gauss-Legendre.

    The integrand is smooth on ``[T/10, T] x [-|L|, |L|]``, so a tensor
    rule with ``panels`` panels of ``order`` nodes per axis converges fast.
    """
    if lam == 0.0:
        return 0.0
    aL = abs(L)
    t, wt = _composite_gauss(0.1 * T, T, panels, order)
    x, wx = _composite_gauss(-aL, aL, panels, order)
    total = 0.0
    for tk, wk in zip(t, wt):
        f = trial_flux(T, lam, L, tk, x) ** 2 / _mm(p, T, lam, L, tk, x)
        total += wk * np.dot(wx, f)
    return 0.5 * float(total)


def _composite_gauss(lo: float, hi: float, panels: int, order: int):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    w = (half[:, None] * weights[None, :]).ravel()
    return x, w


def _mm(p, T, lam, L, s, x):
    m = trial_density(p, T, lam, L, s, x)
    return m * (1.0 - m)


# ---------------------------------------------------------- constraint solves

def solve_constraint_current(p: Profile, T: float, a: float) -> TrialParams:
    """Pick ``(lam, L)`` with ``lam L int_0^1 psi = a - v_T`` and ``L = kappa sqrt(T)``."""
    lo, hi = profile_bounds(p, T)
    v = hydro.lln_current(p, T)
    d = a - v
    if d == 0.0:
        return TrialParams(0.0, np.sqrt(T), lo, hi)
    bc = bump_calculus()
    cap = 0.5 * min(lo, 1.0 - hi)
    kappa0 = 1.0 / (cap * bc.int_psi_01)
    kappa = max(1.0, kappa0 * abs(d) / np.sqrt(T))
    L = np.copysign(kappa * np.sqrt(T), d)
    lam = d / (L * bc.int_psi_01)
    return TrialParams(float(min(lam, cap)), float(L), lo, hi)


def solve_constraint_tagged(p: Profile, T: float, a: float) -> TrialParams:
    """Pick ``(lam, L)`` with ``lam L int_{|a|/|L|}^1 psi = int_{u_T}^a sigma_T*gamma``.

    ``lam`` decreases along the constraint as ``|L|`` grows, so the admissible
    set is ``|L| >= L_cap``; the bound is minimised over that half-line.
    """
    lo, hi = profile_bounds(p, T)
    cap = 0.5 * min(lo, 1.0 - hi)
    u = hydro.lln_tagged(p, T)
    m = hydro.mass_integral(p, T, a, u)
    if m == 0.0:
        return TrialParams(0.0, max(abs(a), np.sqrt(T)) + 1.0, lo, hi)
    bc = bump_calculus()
    aa = abs(a)
    sgn = np.sign(m)

    def lam_of(Labs):
        denom = Labs * bc.partial(aa / Labs)
        return abs(m) / denom if denom > 0 else np.inf

    # just past |a| the left side is positive but astronomically small
    start = aa / 0.999 + 1e-12
    hi_L = max(2.0 * start, np.sqrt(T))
    while lam_of(hi_L) > cap:
        hi_L *= 2.0
    L_cap = optimize.brentq(lambda Lx: lam_of(Lx) - cap, start, hi_L, xtol=1e-12) if lam_of(start) > cap else start
    obj = lambda Lx: i0_bound(p, T, lam_of(Lx), Lx, (lo, hi))
    upper = max(4.0 * L_cap, 4.0 * np.sqrt(T) + L_cap)
    res = optimize.minimize_scalar(obj, bounds=(L_cap, upper), method="bounded", options={"xatol": 1e-10})
    Lbest = res.x if res.fun < obj(L_cap) else L_cap
    lam = min(lam_of(Lbest), cap)
    return TrialParams(float(lam), float(sgn * Lbest), lo, hi)


# ------------------------------------------------------------- bound curves

@dataclass
class CurvePoint:
    a: float
    value: float
    kind: str
    meta: dict


@dataclass
class RateCurve:
    points: list

    @property
    def a(self) -> np.ndarray:
        return np.array([pt.a for pt in self.points])

    @property
    def values(self) -> np.ndarray:
        return np.array([pt.value for pt in self.points])


def upper_bound_current(p: Profile, T: float, a: float) -> tuple[float, TrialParams]:
    prm = solve_constraint_current(p, T, a)
    return i0_bound(p, T, prm.lam, prm.L, (prm.gamma_lo, prm.gamma_hi)), prm


def upper_bound_curve(p: Profile, T: float, a_list, kind: str = "current") -> RateCurve:
    """Closed-form upper bound at each target.

    The tagged curve uses the translation identity for deterministic initial
    states: the tagged cost at ``a`` equals the current cost for the profile
    shifted by ``a`` at target ``int_0^a gamma``.
    """
    pts = []
    for a in a_list:
        a = float(a)
        if kind == "current":
            val, prm = upper_bound_current(p, T, a)
        elif kind == "tagged":
            target = float(p.integral(0.0, a))
            val, prm = upper_bound_current(p.shifted(a), T, target)
        else:
            raise ValueError("kind must be 'current' or 'tagged'")
        pts.append(CurvePoint(a, val, "upper_bound", {"lam": prm.lam, "L": prm.L}))
    return RateCurve(pts)


def h_d(alpha, beta):
    """Bernoulli relative entropy with ``0 log 0 = 0`` and ``+inf`` on support mismatch."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(alpha > 0, alpha * np.log(alpha / beta), 0.0)
        t2 = np.where(alpha < 1, (1.0 - alpha) * np.log((1.0 - alpha) / (1.0 - beta)), 0.0)
    out = t1 + t2
    out = np.where(((beta == 0) & (alpha > 0)) | ((beta == 1) & (alpha < 1)), np.inf, out)
    return out if out.ndim else float(out)


def lower_bound_cubic(p: Profile, T: float, a: float, eps: float, ref: Profile) -> float:
    """``(|a| - eps)^3/(3T) - h(gamma; ref)/2 - T int ref'^2/(ref(1-ref))^2 - 3 eps/2``.

    ``ref`` should be smooth and strictly between 0 and 1; piecewise-linear
    profiles are accepted and their derivative is taken piecewise.
    """
    lo = min(p.x_lo, ref.x_lo) - 1.0
    hi = max(p.x_hi, ref.x_hi) + 1.0
    pts = sorted({p.x_lo, p.x_hi, ref.x_lo, ref.x_hi})
    ent = integrate.quad(lambda x: h_d(eval_profile(p, x), eval_profile(ref, x)), lo, hi,
                         points=pts, limit=400, epsabs=1e-12)[0]
    grad = 0.0
    for a0, b0, alpha, beta in ref.segments():
        if beta != 0.0:
            g = lambda x: beta ** 2 / (eval_profile(ref, x) * (1.0 - eval_profile(ref, x))) ** 2
            grad += integrate.quad(g, a0, b0, epsabs=1e-12)[0]
    return float((abs(a) - eps) ** 3 / (3.0 * T) - 0.5 * ent - T * grad - 1.5 * eps)


# ----------------------------------------------------------- degenerate start

def _tail_integral(lo: float, hi: float, a: float, t: float, upper: bool) -> float:
    """``int_lo^hi P(N(0,t) > a - x) dx`` (``upper``) or ``P(N(0,t) <= a - x)``."""
    if hi <= lo:
        return 0.0
    s = np.sqrt(t)
    if upper:
        f = lambda x: ndtr((x - a) / s)
    else:
        f = lambda x: ndtr((a - x) / s)
    return float(integrate.quad(f, lo, hi, epsabs=1e-13, epsrel=1e-12)[0])


def _golden_min(f, lo: float, hi: float, tol: float = 1e-10):
    g = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - g * (b - a)
    d = a + g * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    best = min((f(lo), lo), (f(x), x), (f(hi), hi))
    return best[1], best[0]


def theorem4_bound(a: float, t: float, kind: str = "tagged") -> float:
    """Exponential-rate upper bound for displacements starting from ``1_{[-1,1]}``.

    ``kind="tagged"`` bounds ``(1/N) log P(X >= aN)``, ``kind="current"``
    bounds ``(1/N) log P(J_{-1,0} >= aN)``; ``-inf`` when the event is
    impossible.
    """
    if a < 0 or t <= 0:
        raise ValueError("need a >= 0 and t > 0")
    if kind == "current":
        if a > 1.0:
            return -np.inf
        up = _tail_integral(-1.0, 0.0, 0.0, t, True)
        down = _tail_integral(0.0, 1.0, 0.0, t, False)
        f = lambda lam: -lam * a + 0.5 * np.expm1(2 * lam) * up + 0.5 * np.expm1(-2 * lam) * down
    elif kind == "tagged":
        if a >= 1.0:
            p = _tail_integral(-1.0, 1.0, a, t, True)
            return float(np.log(p) + 1.0 - p) if p > 0 else -np.inf
        up = _tail_integral(-1.0, a, a, t, True)
        down = _tail_integral(a, 1.0, a, t, False)
        f = lambda lam: -lam * a + 0.5 * np.expm1(2 * lam) * up + 0.5 * np.expm1(-2 * lam) * down
    else:
        raise ValueError("kind must be 'tagged' or 'current'")
    if a == 0.0:
        return 0.0
    _, val = _golden_min(f, 0.0, 10.0)
    return float(min(val, 0.0))
