"""Law-of-large-numbers speeds of the current and of the tagged particle.

``v_T = int_0^inf (sigma_T*gamma - gamma) dx`` is the macroscopic current
through the origin and ``u_T`` solves ``int_0^u sigma_T*gamma = v_T``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, optimize
from scipy.special import ndtr

from .profiles import Profile, heat_convolve


@dataclass(frozen=True)
class LlnResult:
    v_T: float
    u_T: float
    profile_at_T: Callable


def _remainder_terms(p: Profile, T: float) -> float:
    """``int r(y) [Phi(y/sqrt T) - 1_{y>0}] dy`` for ``r = gamma - step(left, right)``.

    Writing ``gamma = step + r`` with ``r`` compactly supported, the current
    of ``r`` through the origin is ``int r(y) P(y + B_T > 0) dy - int_0^inf r``.
    Each linear piece of ``r`` is integrated against the Gaussian CDF in
    closed form.
    """
    s = np.sqrt(T)
    total = 0.0
    segments = []
    for a, b, alpha, beta in p.segments():
        for lo, hi in ((a, min(b, 0.0)), (max(a, 0.0), b)):
            if hi > lo:
                base = p.left if hi <= 0.0 else p.right
                segments.append((lo, hi, alpha - base, beta))
    # tails reaching across the origin
    x_lo, x_hi = p.x_lo, p.x_hi
    if x_lo > 0:
        segments.append((0.0, x_lo, p.left - p.right, 0.0))
    if x_hi < 0:
        segments.append((x_hi, 0.0, p.right - p.left, 0.0))
    for lo, hi, alpha, beta in segments:
        total += _lin_times_cdf(alpha, beta, lo, hi, s)
        if hi > 0:
            lo0 = max(lo, 0.0)
            total -= alpha * (hi - lo0) + 0.5 * beta * (hi * hi - lo0 * lo0)
    return total


def _lin_times_cdf(alpha, beta, lo, hi, s):
    """``int_lo^hi (alpha + beta y) Phi(y/s) dy`` in closed form."""
    def prim(y):
        z = y / s
        phi = np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)
        Phi = ndtr(z)
        # int Phi(y/s) dy = y Phi + s phi ; int y Phi(y/s) dy = (y^2 - s^2)/2 Phi + y s phi / 2
        return alpha * (y * Phi + s * phi) + beta * (0.5 * (y * y - s * s) * Phi + 0.5 * y * s * phi)

    return float(prim(hi) - prim(lo))


def lln_current(p: Profile, T: float) -> float:
    """``v_T = int_0^inf (sigma_T*gamma - gamma) dx``."""
    if not T > 0:
        raise ValueError("T must be positive")
    return float((p.left - p.right) * np.sqrt(T / (2.0 * np.pi)) + _remainder_terms(p, T))


def mass_integral(p: Profile, T: float, a: float, b: float = 0.0) -> float:
    """``int_b^a sigma_T*gamma dx`` (signed)."""
    if a == b:
        return 0.0
    val, _ = integrate.quad(lambda x: heat_convolve(p, T, x), b, a, epsabs=1e-13, epsrel=1e-13, limit=200)
    return float(val)


def lln_tagged(p: Profile, T: float, v_T: float | None = None) -> float:
    """Root ``u_T`` of ``F(u) = int_0^u sigma_T*gamma - v_T``."""
    if not T > 0:
        raise ValueError("T must be positive")
    if min(p.left, p.right) <= 0:
        raise ValueError("lln_tagged needs positive tail densities")
    v = lln_current(p, T) if v_T is None else v_T
    if v == 0.0:
        return 0.0
    F = lambda u: mass_integral(p, T, u) - v
    lo = -(abs(p.x_lo) + 10.0 * np.sqrt(T))
    hi = abs(p.x_hi) + 10.0 * np.sqrt(T)
    while F(lo) > 0:
        lo *= 2.0
    while F(hi) < 0:
        hi *= 2.0
    root = optimize.brentq(F, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)
    return float(root)


def lln(p: Profile, T: float) -> LlnResult:
    v = lln_current(p, T)
    u = lln_tagged(p, T, v) if min(p.left, p.right) > 0 else float("nan")
    return LlnResult(v, u, lambda x: heat_convolve(p, T, x))


def smoothed_bounds(p: Profile, T: float, width: float | None = None) -> tuple[float, float]:
    """``(min, max)`` of ``sigma_{T/10} * gamma`` over the line."""
    t = T / 10.0
    s = np.sqrt(t)
    span = max(abs(p.x_lo), abs(p.x_hi)) + 12.0 * s if width is None else width
    x = np.linspace(-span, span, 4001)
    vals = heat_convolve(p, t, x)
    lo = min(float(vals.min()), p.left, p.right)
    hi = max(float(vals.max()), p.left, p.right)
    return lo, hi
