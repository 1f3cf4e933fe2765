"""The quadratic space-time problem behind the small-deviation curvature, and
the dynamical variances of current and tagged particle at equilibrium.

The functional is

    M[M] = 1/4 int M_x(1, x)^2 dx + 1/2 int int M_t^2 + 1/8 int int M_xx^2

over ``M(0, .) = 0``, ``M(1, 0) = 1``.  Its minimiser has Fourier spectrum
``Mhat(1, y) = c / K(y)`` and

    Mhat(t, y) = Mhat(1, y) sinh(t y^2 / 2) / sinh(y^2 / 2).

Because ``1 / K(y) = 2 int_0^1 exp(-s y^2) ds``, the inverse transform is a
superposition of heat kernels: with ``G(s, x) = (2 s)^{-1/2} exp(-x^2 / 4 s)``,

    M(t, x) = 2 c int_{(1-t)/2}^{(1+t)/2} G(s, x) ds,

and ``M_t``, ``M_xx`` follow from ``d_s G = d_xx G``.  The grid evaluation
below uses these closed forms on graded meshes that resolve the integrable
singularity at ``(t, x) = (1, 0)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import erfc

SQRT_PI = np.sqrt(np.pi)


# ----------------------------------------------------------------- kernels

def K_kernel(y):
    """``K(y) = (y^2/2) e^{u} / (e^{u} - e^{-u})`` with ``u = y^2/2``."""
    y2 = np.square(np.asarray(y, dtype=float))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(y2 > 1e-300, 0.5 * y2 / -np.expm1(-y2), 0.5)
    small = y2 < 1e-8
    out = np.where(small, 0.5 + 0.25 * y2, out)
    return out if out.ndim else float(out)


def k_kernel(y):
    """``k(y) = (y^2/4) coth(y^2/2)``, equal to ``K(y) - y^2/4``."""
    y2 = np.square(np.asarray(y, dtype=float))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(y2 > 1e-300, 0.25 * y2 * (1.0 + np.exp(-y2)) / -np.expm1(-y2), 0.5)
    small = y2 < 1e-8
    out = np.where(small, 0.5 + y2 * y2 / 24.0, out)
    return out if out.ndim else float(out)


def inverse_K(y):
    """``1/K(y) = 2 (1 - e^{-y^2}) / y^2``, regular at the origin."""
    y2 = np.square(np.asarray(y, dtype=float))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(y2 > 1e-8, 2.0 * -np.expm1(-y2) / y2, 2.0 - y2)
    return out if out.ndim else float(out)


def integral_inverse_K() -> float:
    """``int_R 1/K``; the exact value is ``4 sqrt(pi)``."""
    head, _ = integrate.quad(inverse_K, 0.0, 1.0, epsabs=1e-14, epsrel=1e-13)
    tail, _ = integrate.quad(inverse_K, 1.0, np.inf, epsabs=1e-14, epsrel=1e-13, limit=400)
    return 2.0 * (head + tail)


def inf_M() -> tuple[float, float]:
    """Return ``(inf M, int 1/K)``; the infimum is ``2 pi / int 1/K``."""
    total = integral_inverse_K()
    return 2.0 * np.pi / total, total


@dataclass(frozen=True)
class SpectralSolution:
    """Fourier-side minimiser: ``Mhat(1, y) = c / K(y)``."""

    y_grid: np.ndarray
    Mhat1: np.ndarray
    c: float
    value: float
    integral_invK: float

    def Mhat(self, t: float, y) -> np.ndarray:
        y2 = np.square(np.asarray(y, dtype=float))
        # 2c (exp(-(1-t) y^2/2) - exp(-(1+t) y^2/2)) / y^2, regular at y = 0
        with np.errstate(invalid="ignore", divide="ignore"):
            num = np.exp(-(1.0 - t) * y2 / 2.0) * -np.expm1(-t * y2)
            out = np.where(y2 > 1e-12, 2.0 * self.c * num / y2, 2.0 * self.c * t)
        return out

    def constraint(self) -> float:
        """``(2 pi)^{-1/2} int Mhat(1, y) dy``, which should equal 1."""
        val, _ = integrate.quad(lambda y: self.c * inverse_K(y), 0.0, np.inf, epsabs=1e-15, limit=400)
        return 2.0 * val / np.sqrt(2.0 * np.pi)


def spectral_solution(y_max: float = 40.0, n_y: int = 2001) -> SpectralSolution:
    value, total = inf_M()
    c = np.sqrt(2.0 * np.pi) / total
    y = np.linspace(-y_max, y_max, n_y)
    return SpectralSolution(y, c * inverse_K(y), c, value, total)


# --------------------------------------------------------- space-time fields

def _G(s, x):
    return np.exp(-x * x / (4.0 * s)) / np.sqrt(2.0 * s)


def _int_G(s, x):
    """``int_0^s G(r, x) dr`` in closed form."""
    s = np.asarray(s, dtype=float)
    ax = np.abs(x)
    with np.errstate(invalid="ignore", divide="ignore"):
        val = np.sqrt(2.0 * s) * np.exp(-x * x / (4.0 * s)) - ax * np.sqrt(np.pi / 2.0) * erfc(ax / (2.0 * np.sqrt(s)))
    return np.where(s > 0, val, 0.0)


def minimiser_field(t, x, c: float):
    """``M, M_t, M_x, M_xx`` of the minimiser on broadcast ``(t, x)``."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    sp = 0.5 * (1.0 + t)
    sm = 0.5 * (1.0 - t)
    M = 2.0 * c * (_int_G(sp, x) - _int_G(sm, x))
    Gp = _G(sp, x)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        Gm = np.where(sm > 0, _G(np.maximum(sm, 1e-300), x), 0.0)
    Mt = c * (Gp + Gm)
    Mxx = 2.0 * c * (Gp - Gm)
    # d_x int_0^s G = -sign(x) sqrt(pi/2) erfc(|x| / (2 sqrt s))
    def dx_int(s):
        with np.errstate(divide="ignore", invalid="ignore"):
            v = -np.sign(x) * np.sqrt(np.pi / 2.0) * erfc(np.abs(x) / (2.0 * np.sqrt(s)))
        return np.where(s > 0, v, 0.0)
    Mx = 2.0 * c * (dx_int(sp) - dx_int(sm))
    return M, Mt, Mx, Mxx


def _graded_grids(n_t: int, n_x: int, L: float):
    """Time nodes ``t = 1 - s^2`` (Gauss-Legendre in ``s``) and sinh-graded space nodes."""
    s_nodes, s_w = np.polynomial.legendre.leggauss(n_t)
    s_nodes = 0.5 * (s_nodes + 1.0)
    s_w = 0.5 * s_w
    t = 1.0 - s_nodes ** 2
    w_t = 2.0 * s_nodes * s_w
    beta = 10.0
    xi = np.linspace(-1.0, 1.0, n_x)
    x = L * np.sinh(beta * xi) / np.sinh(beta)
    w_x = np.empty_like(x)
    w_x[1:-1] = 0.5 * (x[2:] - x[:-2])
    w_x[0] = 0.5 * (x[1] - x[0])
    w_x[-1] = 0.5 * (x[-1] - x[-2])
    return t, w_t, x, w_x


def functional_value(Mt, Mxx, Mx1, w_t, w_x) -> float:
    """Tensor quadrature of the functional from sampled derivatives."""
    term1 = 0.25 * np.sum(w_x * Mx1 ** 2)
    term2 = 0.5 * np.sum(w_t[:, None] * w_x[None, :] * Mt ** 2)
    term3 = 0.125 * np.sum(w_t[:, None] * w_x[None, :] * Mxx ** 2)
    return float(term1 + term2 + term3)


@dataclass
class MinimiserGrid:
    t: np.ndarray
    x: np.ndarray
    M: np.ndarray
    value: float
    w_t: np.ndarray
    w_x: np.ndarray


def reconstruct_minimizer(n_t: int = 256, n_x: int = 1024, L: float = 8.0) -> MinimiserGrid:
    """Sample the minimiser on a graded ``n_t x n_x`` grid over ``[0,1] x [-L, L]``
    and evaluate the functional by direct quadrature there."""
    if L < 8:
        raise ValueError("L must be at least 8")
    sol = spectral_solution()
    t, w_t, x, w_x = _graded_grids(n_t, n_x, L)
    M, Mt, _, Mxx = minimiser_field(t[:, None], x[None, :], sol.c)
    _, _, Mx1, _ = minimiser_field(1.0, x, sol.c)
    value = functional_value(Mt, Mxx, Mx1, w_t, w_x)
    return MinimiserGrid(t, x, M, value, w_t, w_x)


def field_from_spectrum(sol: SpectralSolution, t: float, x: float) -> float:
    """``M(t, x)`` by direct inverse-Fourier quadrature of ``Mhat(t, .)``."""
    if x == 0:
        val, _ = integrate.quad(lambda y: sol.Mhat(t, y), 0.0, np.inf, epsabs=1e-12, limit=2000)
    else:
        # Fourier-weighted rule for the slowly decaying oscillatory integrand
        val, _ = integrate.quad(lambda y: sol.Mhat(t, y), 0.0, np.inf, weight="cos", wvar=abs(x),
                                epsabs=1e-12, limlst=200)
    return float(2.0 * val / np.sqrt(2.0 * np.pi))


def perturbed_value(grid: MinimiserGrid, c: float, x0: float, width: float, eps: float) -> float:
    """Functional at ``(M + eps B) / (1 + eps B(1, 0))`` for ``B = t^2 exp(-(x-x0)^2 / (2 w^2))``."""
    t, x = grid.t[:, None], grid.x[None, :]
    _, Mt, _, Mxx = minimiser_field(t, x, c)
    _, _, Mx1, _ = minimiser_field(1.0, grid.x, c)
    g = np.exp(-((x - x0) ** 2) / (2.0 * width ** 2))
    gx = -(x - x0) / width ** 2 * g
    gxx = ((x - x0) ** 2 / width ** 4 - 1.0 / width ** 2) * g
    Bt = 2.0 * t * g
    Bxx = t * t * gxx
    g1 = np.exp(-((grid.x - x0) ** 2) / (2.0 * width ** 2))
    Bx1 = -(grid.x - x0) / width ** 2 * g1
    scale = 1.0 + eps * np.exp(-x0 ** 2 / (2.0 * width ** 2))
    return functional_value((Mt + eps * Bt) / scale, (Mxx + eps * Bxx) / scale,
                            (Mx1 + eps * Bx1) / scale, grid.w_t, grid.w_x)


# -------------------------------------------------------- random-walk kernel

@dataclass
class WalkKernel:
    """Transition probabilities of the rate-1 continuous-time simple random walk.

    ``p[k, j + R]`` is ``P(S_{t_k} = j)`` and ``cum[k, j + R]`` its time
    integral from 0 to ``t_k``.
    """

    t_grid: np.ndarray
    R: int
    p: np.ndarray
    cum: np.ndarray
    mass_loss: float

    @property
    def sites(self) -> np.ndarray:
        return np.arange(-self.R, self.R + 1)


def _rhs(p):
    # neighbours summed as p[j-1] + p[j+1] so that mirror sites round identically
    pad = np.concatenate(([0.0], p, [0.0]))
    return 0.5 * (pad[:-2] + pad[2:]) - p


def walk_kernel(t_max: float, R: int | None = None, dt: float = 0.05,
                record: int = 64, mass_tol: float = 1e-10) -> WalkKernel:
    """Integrate ``dp_j/dt = (p_{j-1} + p_{j+1})/2 - p_j`` by RK4 on ``|j| <= R``.

    The running time integral is carried as part of the state so it shares
    the fourth-order accuracy.  ``record`` snapshots are kept, evenly spaced.
    """
    if R is None:
        R = int(np.ceil(8.0 * np.sqrt(t_max))) + 10
    if R < 6.0 * np.sqrt(t_max):
        raise ValueError("range must be at least 6 sqrt(t_max)")
    n = 2 * R + 1
    steps = max(int(np.ceil(t_max / dt)), 1)
    h = t_max / steps
    p = np.zeros(n)
    p[R] = 1.0
    q = np.zeros(n)
    every = max(steps // record, 1)
    ts, ps, qs = [0.0], [p.copy()], [q.copy()]
    for k in range(1, steps + 1):
        k1 = _rhs(p)
        k2 = _rhs(p + 0.5 * h * k1)
        k3 = _rhs(p + 0.5 * h * k2)
        k4 = _rhs(p + h * k3)
        q = q + h / 6.0 * (p + 2.0 * (p + 0.5 * h * k1) + 2.0 * (p + 0.5 * h * k2) + (p + h * k3))
        p = p + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if k % every == 0 or k == steps:
            if ts[-1] != k * h:
                ts.append(k * h)
                ps.append(p.copy())
                qs.append(q.copy())
    loss = abs(1.0 - p.sum())
    if loss > mass_tol:
        raise ValueError(f"walk kernel lost mass {loss:.2e}; enlarge the range")
    return WalkKernel(np.asarray(ts), R, np.asarray(ps), np.asarray(qs), loss)


def static_variance(T: float, rho: float, kernel: WalkKernel | None = None) -> float:
    """``Q_0(T) = rho(1-rho) sum_i |1/2 int_0^T (p(t, i+1) - p(t, i)) dt|^2``."""
    if rho in (0.0, 1.0):
        return 0.0
    ker = walk_kernel(T) if kernel is None else kernel
    if not np.isclose(ker.t_grid[-1], T):
        raise ValueError("kernel horizon does not match T")
    integ = ker.cum[-1]
    diff = 0.5 * np.diff(integ)
    # the differences at both ends see a zero beyond the range
    tails = 0.5 * np.array([integ[0], -integ[-1]])
    return float(rho * (1.0 - rho) * (np.sum(diff ** 2) + np.sum(tails ** 2)))


def static_limit(rho: float) -> float:
    """``lim Q_0(T)/sqrt(T) = (sqrt 2 - 1) rho (1 - rho) / sqrt(pi)``."""
    return (np.sqrt(2.0) - 1.0) * rho * (1.0 - rho) / SQRT_PI


def dyn_variance_current(T: float, rho: float) -> tuple[float, float]:
    """``(Q_0(T)/sqrt(T), limit)``."""
    return static_variance(T, rho) / np.sqrt(T), static_limit(rho)


def static_double_integral(T: float, eps: float = 0.0) -> float:
    """``(sqrt 2 / (8 sqrt(pi T))) int int_{[eps T, T]^2} (t + s)^{-3/2} ds dt``."""
    lo = eps * T
    f = lambda s, t: (t + s) ** -1.5
    if lo == 0.0:
        # integrate analytically in s, numerically in t
        g = lambda t: 2.0 * (t ** -0.5 - (t + T) ** -0.5)
        val, _ = integrate.quad(g, 0.0, T, epsabs=1e-12)
    else:
        val, _ = integrate.dblquad(f, lo, T, lo, T, epsabs=1e-12)
    return float(np.sqrt(2.0) / (8.0 * np.sqrt(np.pi * T)) * val)


@dataclass(frozen=True)
class VarianceTargets:
    rho: float
    sigma2_J: float
    sigma2_X: float
    sigma2_J_dyn: float
    sigma2_X_dyn: float


def variance_targets(rho: float) -> VarianceTargets:
    """Limits of ``Var/sqrt(t)`` for current and tagged particle, total and dynamical."""
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    m = rho * (1.0 - rho)
    sJ = np.sqrt(2.0 / np.pi) * m
    sJd = m / SQRT_PI
    out = VarianceTargets(rho, sJ, sJ / rho ** 2, sJd, sJd / rho ** 2)
    if not np.isclose(out.sigma2_J, out.sigma2_J_dyn + static_limit(rho), rtol=1e-12, atol=0):
        raise ArithmeticError("static and dynamical parts do not add up")
    return out
