"""Macroscopic density profiles and microscopic initial states.

A profile is a piecewise-linear density on a compact core ``[x_lo, x_hi]``
with constant tails outside it.  Jumps are allowed between pieces.  Its
heat-flow evolution ``(sigma_t * gamma)(x)`` is computed in closed form:
each linear segment convolved with a Gaussian reduces to normal CDF/PDF
terms, and the tails are Gaussian CDFs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

_SQRT2PI = np.sqrt(2.0 * np.pi)


def _npdf(z):
    return np.exp(-0.5 * z * z) / _SQRT2PI


@dataclass(frozen=True)
class Piece:
    """Linear interpolation of ``(xs, ys)`` on ``[xs[0], xs[-1]]``."""

    xs: tuple
    ys: tuple

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        ys = np.asarray(self.ys, dtype=float)
        if xs.ndim != 1 or xs.size < 2 or xs.size != ys.size:
            raise ValueError("a piece needs at least two (x, y) samples")
        if np.any(np.diff(xs) <= 0):
            raise ValueError("piece abscissae must be strictly increasing")
        if np.any(ys < 0) or np.any(ys > 1):
            raise ValueError("densities must lie in [0, 1]")

    @property
    def lo(self) -> float:
        return float(self.xs[0])

    @property
    def hi(self) -> float:
        return float(self.xs[-1])

    def segments(self):
        """Yield ``(a, b, alpha, beta)`` with value ``alpha + beta*x`` on [a, b]."""
        for a, b, ya, yb in zip(self.xs[:-1], self.xs[1:], self.ys[:-1], self.ys[1:]):
            beta = (yb - ya) / (b - a)
            yield a, b, ya - beta * a, beta


@dataclass(frozen=True)
class Profile:
    """Density with constant tails.

    ``gamma(x) = left`` for ``x <= x_lo``, ``gamma(x) = right`` for
    ``x >= x_hi`` (the left tail wins when ``x_lo == x_hi``), and the pieces
    cover ``[x_lo, x_hi]`` contiguously.
    """

    left: float
    right: float
    pieces: tuple = ()
    jump: float = 0.0
    label: str = field(default="", compare=False)

    def __post_init__(self):
        for v in (self.left, self.right):
            if not 0.0 <= v <= 1.0:
                raise ValueError("tail densities must lie in [0, 1]")
        for p, q in zip(self.pieces[:-1], self.pieces[1:]):
            if not np.isclose(p.hi, q.lo, rtol=0, atol=1e-14):
                raise ValueError("pieces must be contiguous")

    @property
    def x_lo(self) -> float:
        return self.pieces[0].lo if self.pieces else self.jump

    @property
    def x_hi(self) -> float:
        return self.pieces[-1].hi if self.pieces else self.jump

    def segments(self):
        for piece in self.pieces:
            yield from piece.segments()

    def extrema(self) -> tuple[float, float]:
        vals = [self.left, self.right]
        for piece in self.pieces:
            vals.extend(piece.ys)
        return float(min(vals)), float(max(vals))

    def is_binary(self) -> bool:
        vals = {self.left, self.right}
        for piece in self.pieces:
            vals.update(float(y) for y in piece.ys)
        return vals <= {0.0, 1.0}

    def __call__(self, x):
        return eval_profile(self, x)

    def shifted(self, c: float) -> "Profile":
        """Profile ``x -> gamma(x + c)``."""
        pieces = tuple(Piece(tuple(np.asarray(p.xs) - c), p.ys) for p in self.pieces)
        return Profile(self.left, self.right, pieces, self.jump - c, label=f"{self.label} shifted {c:g}")

    def reflected(self) -> "Profile":
        """Profile ``x -> gamma(-x)``."""
        pieces = tuple(
            Piece(tuple(-np.asarray(p.xs)[::-1]), tuple(np.asarray(p.ys)[::-1]))
            for p in reversed(self.pieces)
        )
        return Profile(self.right, self.left, pieces, -self.jump, label=f"{self.label} reflected")

    def integral(self, a, b):
        """Exact ``int_a^b gamma``; vectorised over ``b``."""
        return _antiderivative(self, np.asarray(b, dtype=float)) - _antiderivative(
            self, np.asarray(a, dtype=float)
        )


def _antiderivative(p: Profile, x: np.ndarray) -> np.ndarray:
    """``G(x) = int_0^x gamma`` for piecewise-linear ``gamma``."""
    x = np.asarray(x, dtype=float)

    def prim(u):
        out = p.left * (np.minimum(u, p.x_lo) - p.x_lo)
        out = out + p.right * np.maximum(u - p.x_hi, 0.0)
        for a, b, alpha, beta in p.segments():
            v = np.clip(u, a, b)
            out = out + alpha * (v - a) + 0.5 * beta * (v * v - a * a)
        return out

    return prim(x) - prim(np.zeros(()))


# ---------------------------------------------------------------- constructors

def constant(rho: float) -> Profile:
    return Profile(rho, rho, (), label=f"constant {rho:g}")


def step(rho_left: float, rho_right: float, at: float = 0.0) -> Profile:
    return Profile(rho_left, rho_right, (), at, label=f"step {rho_left:g} {rho_right:g}")


def indicator(a: float, b: float) -> Profile:
    """``1_{[a, b]}`` with zero tails."""
    if not a < b:
        raise ValueError("indicator needs a < b")
    return Profile(0.0, 0.0, (Piece((a, b), (1.0, 1.0)),), label=f"indicator {a:g} {b:g}")


def linear(x0: float, x1: float, y0: float, y1: float) -> Profile:
    """Linear ramp from ``y0`` at ``x0`` to ``y1`` at ``x1``, constant outside."""
    return Profile(y0, y1, (Piece((x0, x1), (y0, y1)),), label=f"linear {x0:g} {x1:g} {y0:g} {y1:g}")


def table(xs, ys, left: float | None = None, right: float | None = None) -> Profile:
    """Linear interpolation of samples; tails default to the end samples."""
    xs = tuple(float(v) for v in xs)
    ys = tuple(float(v) for v in ys)
    left = ys[0] if left is None else float(left)
    right = ys[-1] if right is None else float(right)
    return Profile(left, right, (Piece(xs, ys),), label="table")


def parse_profile(text: str) -> Profile:
    """Parse ``constant r``, ``step rl rr``, ``indicator a b``, ``linear x0 x1 y0 y1``
    or ``table left right x:y x:y ...``."""
    tok = text.split()
    if not tok:
        raise ValueError("empty profile description")
    kind, args = tok[0].lower(), tok[1:]
    try:
        if kind == "constant" and len(args) == 1:
            return constant(float(args[0]))
        if kind == "step" and len(args) == 2:
            return step(float(args[0]), float(args[1]))
        if kind == "indicator" and len(args) == 2:
            return indicator(float(args[0]), float(args[1]))
        if kind == "linear" and len(args) == 4:
            return linear(*map(float, args))
        if kind == "table" and len(args) >= 4:
            pts = [a.split(":") for a in args[2:]]
            return table([float(u) for u, _ in pts], [float(v) for _, v in pts],
                         float(args[0]), float(args[1]))
    except (TypeError, ValueError) as exc:
        raise ValueError(f"bad profile {text!r}: {exc}") from None
    raise ValueError(f"unrecognised profile {text!r}")


# ------------------------------------------------------------------ evaluation

def eval_profile(p: Profile, x):
    """``gamma(x)`` respecting the tails; vectorised."""
    x = np.asarray(x, dtype=float)
    out = np.where(x <= p.x_lo, p.left, p.right).astype(float)
    for piece in p.pieces:
        inside = (x > p.x_lo) & (x < p.x_hi) & (x >= piece.lo) & (x <= piece.hi)
        if np.any(inside):
            out = np.where(inside, np.interp(x, piece.xs, piece.ys), out)
    return out if out.ndim else float(out)


def heat_convolve(p: Profile, t: float, x):
    """``(sigma_t * gamma)(x)`` with ``sigma_t`` the centred Gaussian of variance ``t``."""
    if not t > 0:
        raise ValueError("heat_convolve needs t > 0")
    x = np.asarray(x, dtype=float)
    s = np.sqrt(t)
    out = p.left * ndtr((p.x_lo - x) / s) + p.right * ndtr((x - p.x_hi) / s)
    for a, b, alpha, beta in p.segments():
        za = (a - x) / s
        zb = (b - x) / s
        # Phi(zb) - Phi(za) computed on the far side to avoid cancellation
        mass = np.where(za > 0, ndtr(-za) - ndtr(-zb), ndtr(zb) - ndtr(za))
        out = out + (alpha + beta * x) * mass + beta * s * (_npdf(za) - _npdf(zb))
    return out if out.ndim else float(out)


def heat_convolve_dx(p: Profile, t: float, x):
    """Spatial derivative of :func:`heat_convolve`."""
    if not t > 0:
        raise ValueError("heat_convolve needs t > 0")
    x = np.asarray(x, dtype=float)
    s = np.sqrt(t)
    out = (-p.left * _npdf((p.x_lo - x) / s) + p.right * _npdf((x - p.x_hi) / s)) / s
    for a, b, alpha, beta in p.segments():
        za = (a - x) / s
        zb = (b - x) / s
        mass = np.where(za > 0, ndtr(-za) - ndtr(-zb), ndtr(zb) - ndtr(za))
        # d/dx of (alpha + beta x)(Phi(zb)-Phi(za)) + beta s (phi(za)-phi(zb))
        out = out + beta * mass + (alpha + beta * a) * _npdf(za) / s - (alpha + beta * b) * _npdf(zb) / s
    return out if out.ndim else float(out)


# ------------------------------------------------------------ initial states

@dataclass
class Configuration:
    """Occupancies of sites ``-W..W``; ``occupancy[W + x]`` is site ``x``."""

    W: int
    occupancy: np.ndarray

    def __post_init__(self):
        self.occupancy = np.ascontiguousarray(self.occupancy, dtype=np.uint8)
        if self.occupancy.shape != (2 * self.W + 1,):
            raise ValueError("occupancy length must be 2W+1")

    @property
    def sites(self) -> np.ndarray:
        return np.arange(-self.W, self.W + 1)

    @property
    def origin_occupied(self) -> bool:
        return bool(self.occupancy[self.W])

    def at(self, x) -> np.ndarray:
        return self.occupancy[np.asarray(x) + self.W]

    def count(self, lo: int, hi: int) -> int:
        """Particles on sites ``lo..hi`` inclusive."""
        lo = max(lo, -self.W)
        hi = min(hi, self.W)
        return int(self.occupancy[lo + self.W: hi + self.W + 1].sum()) if hi >= lo else 0


def make_dic(p: Profile, N: float, W: int) -> Configuration:
    """Deterministic configuration by cumulative rounding of ``gamma(x/N)``.

    Site ``x`` is occupied iff ``floor(C(x+1)) > floor(C(x))`` with
    ``C(x) = 1/2 + int_0^x gamma(y/N) dy``.  If the origin is empty, the
    nearest particle to its right is moved onto it, which keeps the mass of
    each half-line and so adds no bias to the current through ``(-1, 0)``.
    Profiles taking only the values 0 and 1 are placed directly, occupying
    every site whose rescaled position lies in the closure of ``{gamma = 1}``.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    x = np.arange(-W, W + 1, dtype=float)
    if p.is_binary():
        u = x / N
        tiny = 1e-12 * max(1.0, np.max(np.abs(u)))
        occ = np.maximum.reduce([eval_profile(p, u), eval_profile(p, u - tiny), eval_profile(p, u + tiny)])
        occ = (occ > 0.5).astype(np.uint8)
    else:
        edges = np.arange(-W, W + 2, dtype=float)
        C = 0.5 + N * p.integral(0.0, edges / N)
        F = np.floor(C + 1e-9)
        occ = (F[1:] > F[:-1]).astype(np.uint8)
        if not occ[W]:
            right = np.flatnonzero(occ[W + 1:])
            if right.size:
                occ[W + 1 + right[0]] = 0
    occ[W] = 1
    return Configuration(W, occ)


def sample_lem(p: Profile, N: float, W: int, rng: np.random.Generator) -> Configuration:
    """Independent Bernoulli(gamma(x/N)) occupancies with the origin forced occupied."""
    prob = lem_probabilities(p, N, W)
    occ = (rng.random(prob.size) < prob).astype(np.uint8)
    occ[W] = 1
    return Configuration(W, occ)


def lem_probabilities(p: Profile, N: float, W: int) -> np.ndarray:
    return np.asarray(eval_profile(p, np.arange(-W, W + 1) / N), dtype=float)
