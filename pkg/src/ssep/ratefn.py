"""Discrete rate functional, controlled heat equation and constrained minimisation.

Layout on a :class:`SpaceTimeGrid`: densities ``mu[k, i]`` on nodes
``x_i = -L + i dx`` at times ``t_k = k dt``; drifts ``h[k, f]`` and currents
``j[k, f]`` on the faces ``x_i + dx/2`` for the step ``[t_k, t_{k+1}]``.
With an even number of nodes one face sits exactly at the origin.

The forward scheme is conservative.  Diffusion is Crank-Nicolson, the drift
flux is explicit:

    (mu^{k+1}_i - mu^k_i)/dt + (j^k_{i+1/2} - j^k_{i-1/2})/dx = 0,
    j^k_f = -(1/4dx) [D mu^k + D mu^{k+1}]_f + F(h^k_f, mu^k),
    F = h m_f + theta |h|_eps (mu_f - mu_{f+1}) / 2,   m_f = (mu_f + mu_{f+1})/2 - mu_f mu_{f+1}.

``theta = 0`` is the centred flux (second order), ``theta = 1`` adds
Rusanov-type upwind dissipation for large drifts.  The boundary nodes are
pinned.  The cost is ``1/2 sum dt dx h^2 (m(mu^k) + m(mu^{k+1}))/2`` and its
gradient is obtained from the discrete adjoint of the scheme.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy import optimize

from . import hydro, trialbounds
from .profiles import Profile, eval_profile

log = logging.getLogger(__name__)

DELTA = 1e-6


class NumericalInstability(RuntimeError):
    pass


@dataclass(frozen=True)
class SpaceTimeGrid:
    L: float
    n_x: int
    T: float
    n_t: int

    def __post_init__(self):
        if self.n_x < 4 or self.n_x % 2:
            raise ValueError("n_x must be an even number >= 4 so that a face sits at x = 0")
        if self.n_t < 1 or self.T <= 0 or self.L <= 0:
            raise ValueError("grid sizes must be positive")
        if self.dt > self.dx ** 2 * (1 + 1e-12):
            raise ValueError(f"dt = {self.dt:.3g} exceeds dx^2 = {self.dx ** 2:.3g}; increase n_t")

    @property
    def dx(self) -> float:
        return 2.0 * self.L / (self.n_x - 1)

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def x_nodes(self) -> np.ndarray:
        return -self.L + self.dx * np.arange(self.n_x)

    @property
    def x_faces(self) -> np.ndarray:
        return -self.L + self.dx * (np.arange(self.n_x - 1) + 0.5)

    @property
    def t_nodes(self) -> np.ndarray:
        return self.dt * np.arange(self.n_t + 1)

    @property
    def origin_face(self) -> int:
        return self.n_x // 2 - 1

    @classmethod
    def for_target(cls, p: Profile, T: float, a: float, dx: float = 0.1, margin: float = 2.0,
                   cfl: float = 1.0) -> "SpaceTimeGrid":
        """Grid with ``L >= |a| + max|x_edge| + 6 sqrt(T)`` and ``dt <= cfl * dx^2``.

        ``dx`` is shrunk slightly so that ``a`` falls on a cell face.
        """
        if a != 0.0:
            dx = abs(a) / max(1, int(np.ceil(abs(a) / dx - 1e-9)))
        L = abs(a) + max(abs(p.x_lo), abs(p.x_hi)) + 6.0 * np.sqrt(T) + margin
        n_x = int(np.ceil(2 * L / dx)) + 1
        n_x += n_x % 2
        L = 0.5 * dx * (n_x - 1)
        n_t = int(np.ceil(T / (cfl * dx * dx)))
        return cls(L, n_x, T, n_t)

    @classmethod
    def self_similar(cls, p: Profile, T: float, a: float, cells: int = 20, extent: float = 4.0,
                     n_t: int = 1500) -> "SpaceTimeGrid":
        """Grid scaled with ``a``: ``dx = |a|/cells`` and ``L >= extent |a|``.

        Far from the hydrodynamic value the optimal profile is a travelling
        front of width proportional to ``a``, so a fixed number of cells per
        unit of ``a`` resolves it uniformly.  ``a`` falls on a cell face.
        """
        dx = abs(a) / cells
        L = max(extent * abs(a), abs(a) + max(abs(p.x_lo), abs(p.x_hi)) + 6.0 * np.sqrt(T))
        n_x = int(np.ceil(2 * L / dx)) + 1
        n_x += n_x % 2
        n_t = max(n_t, int(np.ceil(T / (dx * dx))))
        return cls(0.5 * dx * (n_x - 1), n_x, T, n_t)


@dataclass
class FieldTriple:
    mu: np.ndarray
    h_field: np.ndarray
    j_field: np.ndarray
    meta: dict = field(default_factory=dict)


# -------------------------------------------------------------- numba kernels

@nb.njit(cache=True, inline="always")
def _absreg(h, eps):
    return np.sqrt(h * h + eps * eps)


@nb.njit(cache=True)
def _thomas_factors(m, r):
    """Forward-elimination factors for the symmetric tridiagonal ``(1+2r, -r)``."""
    cp = np.empty(m)
    den = np.empty(m)
    b = 1.0 + 2.0 * r
    den[0] = b
    cp[0] = -r / b
    for i in range(1, m):
        den[i] = b + r * cp[i - 1]
        cp[i] = -r / den[i]
    return cp, den


@nb.njit(cache=True)
def _thomas_solve(cp, den, r, d, out):
    m = d.size
    y = np.empty(m)
    y[0] = d[0] / den[0]
    for i in range(1, m):
        y[i] = (d[i] + r * y[i - 1]) / den[i]
    out[m - 1] = y[m - 1]
    for i in range(m - 2, -1, -1):
        out[i] = y[i] - cp[i] * out[i + 1]


@nb.njit(cache=True)
def _forward(u0, h, r, c, theta, eps_h, U):
    n = u0.size
    nt = h.shape[0]
    m = n - 2
    cp, den = _thomas_factors(m, r)
    F = np.empty(n - 1)
    d = np.empty(m)
    sol = np.empty(m)
    for i in range(n):
        U[0, i] = u0[i]
    for k in range(nt):
        for f in range(n - 1):
            a = U[k, f]
            b = U[k, f + 1]
            hf = h[k, f]
            F[f] = hf * (0.5 * (a + b) - a * b) + theta * 0.5 * _absreg(hf, eps_h) * (a - b)
        for i in range(1, n - 1):
            d[i - 1] = U[k, i] + r * (U[k, i + 1] - 2.0 * U[k, i] + U[k, i - 1]) - c * (F[i] - F[i - 1])
        d[0] += r * U[k, 0]
        d[m - 1] += r * U[k, n - 1]
        _thomas_solve(cp, den, r, d, sol)
        U[k + 1, 0] = U[k, 0]
        U[k + 1, n - 1] = U[k, n - 1]
        for i in range(m):
            U[k + 1, i + 1] = sol[i]


@nb.njit(cache=True)
def _adjoint(U, h, r, c, theta, eps_h, dt, dx, w, cw, gN, grad_h, g0):
    """Gradient of ``cost + w sum_k dt sum_f cw_f j^k_f + gN . u^N`` w.r.t. ``h`` and ``u^0``."""
    n = U.shape[1]
    nt = h.shape[0]
    m = n - 2
    cp, den = _thomas_factors(m, r)
    p_next = np.zeros(n)      # p^{k+1}, zero at boundary nodes
    p_cur = np.zeros(n)
    rhs = np.empty(m)
    sol = np.empty(m)
    dl_next = np.zeros(n)     # d l_k / d u^{k+1}, carried into the next (earlier) solve
    q = np.zeros(n - 1)
    wc = w * dt / (4.0 * dx)
    quarter = 0.25 * dt * dx
    # terminal: A p^N = d l_{N-1}/d u^N + gN
    k = nt - 1
    for i in range(n):
        dl_next[i] = gN[i]
    for f in range(n - 1):
        hf2 = h[k, f] * h[k, f]
        dl_next[f] += quarter * hf2 * (0.5 - U[k + 1, f + 1])
        dl_next[f + 1] += quarter * hf2 * (0.5 - U[k + 1, f])
    for f in range(n - 1):
        if cw[f] != 0.0:
            dl_next[f] += wc * cw[f]
            dl_next[f + 1] -= wc * cw[f]
    for i in range(m):
        rhs[i] = dl_next[i + 1]
    _thomas_solve(cp, den, r, rhs, sol)
    for i in range(m):
        p_next[i + 1] = sol[i]
    for k in range(nt - 1, -1, -1):
        # q = G^T p^{k+1}
        for f in range(n - 1):
            q[f] = p_next[f] - p_next[f + 1]
        # gradient in h^k
        for f in range(n - 1):
            a = U[k, f]
            b = U[k, f + 1]
            hf = h[k, f]
            mk = 0.5 * (a + b) - a * b
            a1 = U[k + 1, f]
            b1 = U[k + 1, f + 1]
            mk1 = 0.5 * (a1 + b1) - a1 * b1
            dF = mk + theta * 0.5 * (hf / _absreg(hf, eps_h)) * (a - b)
            gh = 0.5 * dt * dx * hf * (mk + mk1) - c * dF * q[f]
            gh += w * dt * cw[f] * dF
            grad_h[k, f] = gh
        # d l_k / d u^k (+ d l_{k-1}/d u^k) + B p^{k+1} - c (dF/du)^T q
        s = np.zeros(n)
        for f in range(n - 1):
            a = U[k, f]
            b = U[k, f + 1]
            hf = h[k, f]
            hf2 = hf * hf
            s[f] += quarter * hf2 * (0.5 - b)
            s[f + 1] += quarter * hf2 * (0.5 - a)
            ab = theta * 0.5 * _absreg(hf, eps_h)
            dFa = hf * (0.5 - b) + ab
            dFb = hf * (0.5 - a) - ab
            s[f] -= c * dFa * q[f]
            s[f + 1] -= c * dFb * q[f]
            if cw[f] != 0.0:
                s[f] += w * dt * cw[f] * dFa + wc * cw[f]
                s[f + 1] += w * dt * cw[f] * dFb - wc * cw[f]
        for i in range(1, n - 1):
            s[i] += p_next[i] + r * (p_next[i + 1] - 2.0 * p_next[i] + p_next[i - 1])
        if k == 0:
            for i in range(n):
                g0[i] = s[i]
            break
        # contributions of l_{k-1} through u^k
        for f in range(n - 1):
            hf2 = h[k - 1, f] * h[k - 1, f]
            s[f] += quarter * hf2 * (0.5 - U[k, f + 1])
            s[f + 1] += quarter * hf2 * (0.5 - U[k, f])
            if cw[f] != 0.0:
                s[f] += wc * cw[f]
                s[f + 1] -= wc * cw[f]
        for i in range(m):
            rhs[i] = s[i + 1]
        _thomas_solve(cp, den, r, rhs, sol)
        p_cur[0] = 0.0
        p_cur[n - 1] = 0.0
        for i in range(m):
            p_cur[i + 1] = sol[i]
        for i in range(n):
            p_next[i] = p_cur[i]


# ------------------------------------------------------------ forward solves

def _theta(scheme: str) -> float:
    if scheme == "centered":
        return 0.0
    if scheme == "upwind":
        return 1.0
    raise ValueError("scheme must be 'centered' or 'upwind'")


def _eps_h(g: SpaceTimeGrid) -> float:
    # smoothing of |h| in the upwind term, keeps the adjoint differentiable
    return 1e-3


def _currents(U, h, g: SpaceTimeGrid, theta: float) -> np.ndarray:
    a = U[:-1, :-1]
    b = U[:-1, 1:]
    eps_h = _eps_h(g)
    F = h * (0.5 * (a + b) - a * b) + theta * 0.5 * np.sqrt(h * h + eps_h * eps_h) * (a - b)
    D = -(np.diff(U[:-1], axis=1) + np.diff(U[1:], axis=1)) / (4.0 * g.dx)
    return D + F


def solve_forward(h_field, mu0, g: SpaceTimeGrid, scheme: str = "centered",
                  tol: float = 1e-3) -> FieldTriple:
    """March the controlled heat equation from ``mu0`` under drift ``h_field``."""
    h = np.ascontiguousarray(h_field, dtype=float)
    mu0 = np.ascontiguousarray(mu0, dtype=float)
    if h.shape != (g.n_t, g.n_x - 1) or mu0.shape != (g.n_x,):
        raise ValueError("field shapes do not match the grid")
    theta = _theta(scheme)
    U = np.empty((g.n_t + 1, g.n_x))
    r = g.dt / (4.0 * g.dx ** 2)
    _forward(mu0, h, r, g.dt / g.dx, theta, _eps_h(g), U)
    lo, hi = U.min(), U.max()
    if not np.isfinite(lo) or lo < -tol or hi > 1.0 + tol:
        raise NumericalInstability(
            f"density left [0, 1] (min {lo:.3g}, max {hi:.3g}); "
            "reduce dt or the drift bound, or use the upwind scheme")
    return FieldTriple(U, h, _currents(U, h, g, theta), {"scheme": scheme})


def mobility(mu):
    m = np.clip(mu, DELTA, 1.0 - DELTA)
    return m * (1.0 - m)


def _face_mobility(U):
    a = np.clip(U[:, :-1], DELTA, 1 - DELTA)
    b = np.clip(U[:, 1:], DELTA, 1 - DELTA)
    return 0.5 * (a + b) - a * b


def i0_evaluate(f: FieldTriple, g: SpaceTimeGrid) -> float:
    """``1/2 int int h^2 mu(1-mu)``: midpoint in space, trapezoid in time."""
    m = _face_mobility(f.mu)
    return float(0.25 * g.dt * g.dx * np.sum(f.h_field ** 2 * (m[:-1] + m[1:])))


def relative_entropy(mu0, p: Profile, g: SpaceTimeGrid | None = None, x=None) -> float:
    """``int h_d(mu0(x); gamma(x)) dx`` by the trapezoid rule on the grid nodes."""
    xs = g.x_nodes if x is None else np.asarray(x, dtype=float)
    vals = trialbounds.h_d(np.asarray(mu0, dtype=float), eval_profile(p, xs))
    if np.any(np.isinf(vals)):
        return float("inf")
    return float(np.trapezoid(vals, xs) if hasattr(np, "trapezoid") else np.trapz(vals, xs))


def integrated_current(f: FieldTriple, g: SpaceTimeGrid, x: float = 0.0) -> float:
    """``int_0^T J(x, t) dt`` interpolated linearly between face columns."""
    totals = g.dt * f.j_field.sum(axis=0)
    xf = g.x_faces
    if not xf[0] <= x <= xf[-1]:
        raise ValueError("x outside the face range")
    return float(np.interp(x, xf, totals))


def mass_weights(g: SpaceTimeGrid, a: float) -> np.ndarray:
    """Weights ``w`` with ``w . mu = int_0^a`` of the piecewise-linear interpolant of ``mu``."""
    xs = g.x_nodes
    w = np.zeros(g.n_x)
    lo, hi = (0.0, a) if a >= 0 else (a, 0.0)
    sign = 1.0 if a >= 0 else -1.0
    dx = g.dx
    for i in range(g.n_x - 1):
        x0, x1 = xs[i], xs[i + 1]
        s0, s1 = max(lo, x0), min(hi, x1)
        if s1 <= s0:
            continue
        # int_{s0}^{s1} of the hat functions of nodes i and i+1
        l0 = ((x1 - s0) ** 2 - (x1 - s1) ** 2) / (2 * dx)
        l1 = ((s1 - x0) ** 2 - (s0 - x0) ** 2) / (2 * dx)
        w[i] += sign * l0
        w[i + 1] += sign * l1
    return w


def face_weights(g: SpaceTimeGrid, x: float) -> np.ndarray:
    """Weights ``cw`` with ``cw . j = j(x)`` by linear interpolation between faces."""
    xf = g.x_faces
    if not xf[0] <= x <= xf[-1]:
        raise ValueError("x outside the face range")
    cw = np.zeros(xf.size)
    pos = (x - xf[0]) / g.dx
    i = min(int(np.floor(pos)), xf.size - 2)
    frac = pos - i
    cw[i] += 1.0 - frac
    cw[i + 1] += frac
    cw[np.abs(cw) < 1e-13] = 0.0
    return cw


def smooth_reference(p: Profile, alpha: float):
    """``(value, derivative)`` callables of ``sigma_alpha * gamma``."""
    from .profiles import heat_convolve, heat_convolve_dx
    return (lambda x: heat_convolve(p, alpha, x)), (lambda x: heat_convolve_dx(p, alpha, x))


def energy_identity_check(f: FieldTriple, g: SpaceTimeGrid, ref) -> float:
    """Residual of the energy decomposition of the cost.

    ``ref`` is a ``(value, derivative)`` pair of callables for a smooth
    strictly interior reference profile (see :func:`smooth_reference`).
    Returns ``|I0 - [1/8 E + 1/2 (h(mu_T) - h(mu_0)) + 1/2 int r' int J + 1/2 int int J^2/m]|``.
    """
    ref_val, ref_dx = ref
    dx, dt = g.dx, g.dt
    U = f.mu
    i0 = i0_evaluate(f, g)
    m = _face_mobility(U)
    grad = np.diff(U, axis=1) / dx
    e_nodes = np.sum(grad ** 2 / m, axis=1) * dx
    energy = dt * (0.5 * e_nodes[0] + e_nodes[1:-1].sum() + 0.5 * e_nodes[-1])
    xs = g.x_nodes
    r = ref_val(xs)
    ent_T = _entropy_vs(U[-1], r, xs)
    ent_0 = _entropy_vs(U[0], r, xs)
    xf = g.x_faces
    rf = ref_val(xf)
    weight = ref_dx(xf) / (rf * (1.0 - rf))
    cross = np.sum(weight * dt * f.j_field.sum(axis=0)) * dx
    m_mid = _face_mobility(0.5 * (U[:-1] + U[1:]))
    quad = np.sum(f.j_field ** 2 / m_mid) * dt * dx
    rhs = 0.125 * energy + 0.5 * (ent_T - ent_0) + 0.5 * cross + 0.5 * quad
    return float(abs(i0 - rhs))


def _entropy_vs(mu, ref, xs):
    vals = trialbounds.h_d(np.clip(mu, DELTA, 1 - DELTA), ref)
    return float(np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(xs)))


# -------------------------------------------------------------- minimisation

@dataclass
class RateOptions:
    scheme: str = "auto"
    eps_c: float | None = None
    max_outer: int = 25
    max_inner: int = 3000
    gtol: float = 1e-9
    ftol: float = 1e-14
    init: object = "trial"
    rho0: float | None = None
    nu0: float | None = None
    h_bound: float | None = None
    rel_tol: float = 2e-3


@dataclass
class RateSolution:
    value: float
    fields: FieldTriple
    a: float
    kind: str
    init_kind: str
    residual: float
    iterations: int
    converged: bool
    multiplier: float
    tolerance: float
    grid: SpaceTimeGrid
    cost: float
    entropy: float
    message: str = ""
    mu0: np.ndarray | None = None


class _Problem:
    def __init__(self, p, g, a, kind, init_kind, scheme):
        self.p, self.g, self.a, self.kind, self.init_kind = p, g, float(a), kind, init_kind
        self.theta = _theta(scheme)
        self.scheme = scheme
        self.gamma = np.asarray(eval_profile(p, g.x_nodes), dtype=float)
        self.mu0 = self.gamma.copy()
        self.eps_h = _eps_h(g)
        self.r = g.dt / (4 * g.dx ** 2)
        self.c = g.dt / g.dx
        self.nh = g.n_t * (g.n_x - 1)
        self.lem = init_kind == "lem"
        # The tagged constraint J(0) = int_0^a mu_T is imposed in the equivalent
        # conservative form J(a) = int_0^a mu_0, which avoids terminal boundary layers.
        if kind == "tagged":
            self.cw = face_weights(g, a)
            self.weights = mass_weights(g, a) if self.lem else None
            self.target = p.integral(0.0, a) if a >= 0 else -p.integral(a, 0.0)
        else:
            self.cw = face_weights(g, 0.0)
            self.weights = None
            self.target = self.a
        self.faces = np.flatnonzero(self.cw)
        self.U = np.empty((g.n_t + 1, g.n_x))
        if self.lem and (np.any(self.gamma <= 0) or np.any(self.gamma >= 1)):
            raise ValueError("local-equilibrium starts need 0 < gamma < 1")

    def unpack(self, z):
        h = z[: self.nh].reshape(self.g.n_t, self.g.n_x - 1)
        mu0 = self.mu0
        if self.lem:
            mu0 = self.gamma.copy()
            mu0[1:-1] = 1.0 / (1.0 + np.exp(-z[self.nh:]))
        return h, mu0

    def run(self, z):
        h, mu0 = self.unpack(z)
        h = np.ascontiguousarray(h)
        _forward(mu0, h, self.r, self.c, self.theta, self.eps_h, self.U)
        U = self.U
        g = self.g
        a = U[:-1, :-1]
        b = U[:-1, 1:]
        mk = 0.5 * (a + b) - a * b
        a1 = U[1:, :-1]
        b1 = U[1:, 1:]
        mk1 = 0.5 * (a1 + b1) - a1 * b1
        cost = 0.25 * g.dt * g.dx * float(np.sum(h * h * (mk + mk1)))
        current = 0.0
        for f0 in self.faces:
            hf = h[:, f0]
            F = hf * mk[:, f0] + self.theta * 0.5 * np.sqrt(hf * hf + self.eps_h ** 2) * (a[:, f0] - b[:, f0])
            D = -((U[:-1, f0 + 1] - U[:-1, f0]) + (U[1:, f0 + 1] - U[1:, f0])) / (4 * g.dx)
            current += self.cw[f0] * g.dt * float(np.sum(D + F))
        if self.weights is not None:
            constraint = current - float(self.weights @ mu0)
        else:
            constraint = current - self.target
        ent = 0.0
        if self.lem:
            ent = g.dx * float(np.sum(trialbounds.h_d(mu0[1:-1], self.gamma[1:-1])))
        return h, mu0, cost, ent, constraint

    def objective(self, z, nu, rho):
        h, mu0, cost, ent, cons = self.run(z)
        w = nu + rho * cons
        gN = np.zeros(self.g.n_x)
        grad_h = np.empty_like(h)
        g0 = np.empty(self.g.n_x)
        _adjoint(self.U, h, self.r, self.c, self.theta, self.eps_h, self.g.dt, self.g.dx,
                 w, self.cw, gN, grad_h, g0)
        if self.weights is not None:
            g0 -= w * self.weights
        val = cost + ent + nu * cons + 0.5 * rho * cons * cons
        if not np.isfinite(val):
            return 1e300, np.zeros_like(z)
        grad = grad_h.ravel()
        if self.lem:
            mu = mu0[1:-1]
            gam = self.gamma[1:-1]
            dent = self.g.dx * (np.log(mu / gam) - np.log((1 - mu) / (1 - gam)))
            grad = np.concatenate([grad, (g0[1:-1] + dent) * mu * (1 - mu)])
        return val, grad


def _auto_scheme(p: Profile, T: float, a: float, kind: str) -> str:
    ref = hydro.lln_current(p, T) if kind == "current" else 0.0
    return "upwind" if abs(a - ref) / np.sqrt(T) >= 5.0 else "centered"


def _initial_h(prob: _Problem, init, T: float) -> np.ndarray:
    g = prob.g
    if isinstance(init, np.ndarray):
        return np.asarray(init, dtype=float).reshape(g.n_t, g.n_x - 1).copy()
    if init == "zero":
        return np.zeros((g.n_t, g.n_x - 1))
    if init == "trial":
        if prob.kind == "current":
            prm = trialbounds.solve_constraint_current(prob.p, T, prob.a)
        else:
            prm = trialbounds.solve_constraint_tagged(prob.p, T, prob.a)
        if prm.lam == 0.0 or abs(prm.L) > g.L - 1.0:
            return np.zeros((g.n_t, g.n_x - 1))
        tf = trialbounds.trial_field(prob.p, T, prm.lam, prm.L, g)
        return tf.h_field
    raise ValueError(f"unknown init {init!r}")


def _h_bound(g: SpaceTimeGrid, scheme: str, opts: RateOptions) -> float:
    if opts.h_bound is not None:
        return opts.h_bound
    if scheme == "upwind":
        return 0.5 * g.dx / g.dt
    return min(1.0 / g.dx, 1.0 / np.sqrt(g.dt))


def _minimise(p: Profile, T: float, a: float, g: SpaceTimeGrid, kind: str, init_kind: str,
              opts: RateOptions) -> RateSolution:
    if not np.isclose(g.T, T):
        raise ValueError("grid horizon differs from T")
    if init_kind not in ("dic", "lem"):
        raise ValueError("init_kind must be 'dic' or 'lem'")
    scheme = _auto_scheme(p, T, a, kind) if opts.scheme == "auto" else opts.scheme
    prob = _Problem(p, g, a, kind, init_kind, scheme)
    eps_c = opts.eps_c if opts.eps_c is not None else 1e-4 * max(1.0, abs(a))
    lem_start = None
    if init_kind == "lem" and isinstance(opts.init, tuple):
        h0, lem_start = opts.init
    else:
        h0 = _initial_h(prob, opts.init, T) if not (init_kind == "lem" and opts.init == "dic-warm") else None
    if h0 is None:
        dic = _minimise(p, T, a, g, kind, "dic", RateOptions(**{**opts.__dict__, "init": "trial"}))
        h0 = dic.fields.h_field
    z = h0.ravel().copy()
    if prob.lem:
        mu_start = prob.gamma[1:-1] if lem_start is None else np.clip(lem_start[1:-1], 1e-9, 1 - 1e-9)
        z = np.concatenate([z, np.log(mu_start / (1 - mu_start))])
    hb = _h_bound(g, scheme, opts)
    bounds = [(-hb, hb)] * prob.nh + ([(-30.0, 30.0)] * (g.n_x - 2) if prob.lem else [])
    z[: prob.nh] = np.clip(z[: prob.nh], -hb, hb)

    ref = hydro.lln_current(p, T) if kind == "current" else hydro.lln_tagged(p, T) if min(p.left, p.right) > 0 else 0.0
    dev = abs(a - ref)
    # rough cost model used only to scale the multiplier and penalty
    scale = 3.5 * dev ** 2 / np.sqrt(T) + 4.0 * dev ** 3 / T
    rho = opts.rho0 if opts.rho0 is not None else max(10.0 * scale / max(dev, 1e-3) ** 2, 10.0)
    _, _, _, _, c_start = prob.run(z)
    nu = opts.nu0 if opts.nu0 is not None else 0.0
    if opts.nu0 is None and dev > 0:
        # multiplier of a quadratic-plus-cubic cost model, sign set by the constraint direction
        slope = 7.0 * dev / np.sqrt(T) + 12.0 * dev ** 2 / T
        nu = slope * np.sign(-(a - ref)) * (1.0 if kind == "current" else 0.5)
    iters = 0
    converged = False
    last_c = np.inf
    msg = ""
    for outer in range(opts.max_outer):
        res = optimize.minimize(prob.objective, z, args=(nu, rho), jac=True, method="L-BFGS-B",
                                bounds=bounds,
                                options={"maxiter": opts.max_inner, "gtol": opts.gtol, "ftol": opts.ftol,
                                         "maxcor": 20})
        z = res.x
        iters += res.nit
        _, _, cost, ent, cons = prob.run(z)
        log.debug("outer %d: cost %.6g ent %.3g c %.3g nu %.4g rho %.3g (%s)",
                  outer, cost, ent, cons, nu, rho, res.message)
        nu += rho * cons
        msg = str(res.message)
        # stop once the constraint meets eps_c and its first-order effect on the value is negligible
        if abs(cons) <= eps_c and abs((nu - rho * cons) * cons) <= 0.1 * opts.rel_tol * max(cost + ent, 1e-300):
            converged = True
            break
        if abs(cons) > 0.25 * last_c:
            rho *= 10.0
        last_c = abs(cons)
    h, mu0, cost, ent, cons = prob.run(z)
    U = prob.U.copy()
    fields = FieldTriple(U, h.copy(), _currents(U, h, g, prob.theta), {"scheme": scheme})
    value = cost + ent
    tol = abs(nu) * eps_c + opts.rel_tol * value
    if not converged:
        msg = f"constraint residual {cons:.3g} above {eps_c:.3g} after {opts.max_outer} outer iterations"
        log.warning(msg)
    return RateSolution(value, fields, float(a), kind, init_kind, float(cons), iters, converged, float(nu),
                        float(tol), g, float(cost), float(ent), msg, mu0.copy())


def minimize_rate_current(p: Profile, T: float, a: float, g: SpaceTimeGrid,
                          init_kind: str = "dic", opts: RateOptions | None = None) -> RateSolution:
    """Minimal cost of ``int_0^T J(0, t) dt = a``."""
    return _minimise(p, T, a, g, "current", init_kind, opts or RateOptions())


def minimize_rate_tagged(p: Profile, T: float, a: float, g: SpaceTimeGrid,
                         init_kind: str = "dic", opts: RateOptions | None = None) -> RateSolution:
    """Minimal cost of ``int_0^T J(0, t) dt = int_0^a mu_T``."""
    return _minimise(p, T, a, g, "tagged", init_kind, opts or RateOptions())


def objective_and_gradient(p: Profile, g: SpaceTimeGrid, a: float, h, *, kind: str = "current",
                           init_kind: str = "dic", scheme: str = "centered", nu: float = 0.0,
                           rho: float = 0.0, theta_lem=None):
    """Augmented objective and its adjoint gradient, exposed for gradient checks."""
    prob = _Problem(p, g, a, kind, init_kind, scheme)
    z = np.asarray(h, dtype=float).ravel()
    if prob.lem:
        th = np.zeros(g.n_x - 2) if theta_lem is None else theta_lem
        z = np.concatenate([z, th])
    return prob.objective(z, nu, rho)


def is_large_deviation(p: Profile, T: float, a: float, kind: str = "current") -> bool:
    """True when ``a`` is far enough from the typical value to need the upwind scheme."""
    return _auto_scheme(p, T, a, kind) == "upwind"


def rate_curve(p: Profile, T: float, a_list, kind: str = "current", init_kind: str = "dic",
               dx: float = 0.1, opts: RateOptions | None = None) -> trialbounds.RateCurve:
    """Numerical rate function at each target, as a ``numeric_min`` curve.

    Targets near the typical value use :meth:`SpaceTimeGrid.for_target` with
    step ``dx``; large deviations use :meth:`SpaceTimeGrid.self_similar` and
    start from a zero drift.
    """
    fn = minimize_rate_current if kind == "current" else minimize_rate_tagged
    pts = []
    for a in a_list:
        a = float(a)
        if is_large_deviation(p, T, a, kind):
            g = SpaceTimeGrid.self_similar(p, T, a)
            o = opts or RateOptions(init="zero")
        else:
            g = SpaceTimeGrid.for_target(p, T, a, dx=dx)
            o = opts or RateOptions()
        sol = fn(p, T, a, g, init_kind=init_kind, opts=o)
        meta = {"residual": sol.residual, "iterations": sol.iterations, "converged": sol.converged,
                "tolerance": sol.tolerance, "n_x": g.n_x, "n_t": g.n_t, "dx": g.dx}
        pts.append(trialbounds.CurvePoint(a, sol.value, "numeric_min", meta))
    return trialbounds.RateCurve(pts)
