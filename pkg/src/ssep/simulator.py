"""Continuous-time Harris stirring simulation of the symmetric exclusion process.

Every nearest-neighbour bond of the window ``[-W, W]`` rings at rate 1/2;
on a ring the contents of its two sites are swapped.  Two extra "ghost"
bonds connect the window edges to the frozen exterior.  They never move
particles (the window is closed, so particle number is conserved), but each
ghost ring marks the edge site as possibly different from the infinite
system.  Marks travel with the stirring and a sample is flagged as soon as a
tracked quantity reads a marked site.

Particles keep their labels when they jump (exclusion never lets them
pass), so the tagged particle is the one starting at the origin and its
position is updated whenever a jump involves its site.

Random numbers come from a splitmix64 stream per sample whose seed is derived
from ``(master_seed, sample_index)`` through :class:`numpy.random.SeedSequence`,
so results do not depend on the number of threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .profiles import Configuration, Profile, lem_probabilities, make_dic

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@nb.njit(inline="always")
def _next(state):
    state = state + _GOLDEN
    z = state
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return state, z ^ (z >> _S31)


@nb.njit(inline="always")
def _uniform(state):
    """Uniform on (0, 1]."""
    state, z = _next(state)
    return state, (float(z >> _S11) + 1.0) * _INV53


def sample_seeds(master_seed: int, n: int, offset: int = 0) -> np.ndarray:
    """Per-sample 64-bit seeds, a pure function of ``(master_seed, index)``."""
    out = np.empty(n, dtype=np.uint64)
    for k in range(n):
        ss = np.random.SeedSequence(int(master_seed), spawn_key=(offset + k,))
        out[k] = ss.generate_state(1, dtype=np.uint64)[0]
    return out


@nb.njit(inline="always")
def _init_state(occ0, lem_prob, forced, state, occ):
    n = occ.size
    if lem_prob.size > 0:
        for i in range(n):
            state, u = _uniform(state)
            occ[i] = 1 if u <= lem_prob[i] else 0
    else:
        for i in range(n):
            occ[i] = occ0[i]
    if forced:
        occ[n // 2] = 1
    return state


@nb.njit(parallel=True, cache=True)
def _batch_kernel(occ0, lem_prob, forced, seeds, checkpoints, track_tag,
                  out_J, out_X, out_flag, out_comp):
    S = seeds.size
    C = checkpoints.size
    for s in nb.prange(S):
        n = occ0.size
        W = n // 2
        occ = np.empty(n, dtype=np.uint8)
        mark = np.zeros(n, dtype=np.uint8)
        state = _init_state(occ0, lem_prob, forced, seeds[s], occ)
        nbonds = n + 1
        rate = 0.5 * nbonds
        tag = W if (track_tag and occ[W] == 1) else -1
        J = 0
        flag = 0
        comp = 0.0
        t = 0.0
        state, u = _uniform(state)
        t_next = -np.log(u) / rate
        for c in range(C):
            tc = checkpoints[c]
            while t_next <= tc:
                # compensator 0.5 * int (eta(-1) - eta(0)) ds
                comp += 0.5 * (t_next - t) * (float(occ[W - 1]) - float(occ[W]))
                t = t_next
                state, u = _uniform(state)
                k = int(u * nbonds)
                if k >= nbonds:
                    k = nbonds - 1
                if k == 0:
                    mark[0] = 1
                    if tag == 0:
                        flag = 1
                elif k == nbonds - 1:
                    mark[n - 1] = 1
                    if tag == n - 1:
                        flag = 1
                else:
                    i = k - 1
                    mi = mark[i]
                    mj = mark[i + 1]
                    if mi | mj:
                        if i == W - 1 or i == tag or i + 1 == tag:
                            flag = 1
                        mark[i] = mj
                        mark[i + 1] = mi
                    a = occ[i]
                    b = occ[i + 1]
                    if a != b:
                        occ[i] = b
                        occ[i + 1] = a
                        if i == W - 1:
                            J += 1 if a == 1 else -1
                        if tag == i:
                            tag = i + 1
                        elif tag == i + 1:
                            tag = i
                state, u = _uniform(state)
                t_next = t - np.log(u) / rate
            comp += 0.5 * (tc - t) * (float(occ[W - 1]) - float(occ[W]))
            t = tc
            out_J[s, c] = J
            out_X[s, c] = tag - W if tag >= 0 else 0
            out_flag[s, c] = flag
            out_comp[s, c] = comp


@nb.njit(parallel=True, cache=True)
def _history_kernel(occ0, lem_prob, forced, seeds, checkpoints,
                    snap_occ, snap_lab, snap_bonds, out_X, out_flag, out_comp):
    S = seeds.size
    C = checkpoints.size
    for s in nb.prange(S):
        n = occ0.size
        W = n // 2
        occ = np.empty(n, dtype=np.uint8)
        lab = np.empty(n, dtype=np.int32)
        mark = np.zeros(n, dtype=np.uint8)
        bonds = np.zeros(n - 1, dtype=np.int64)
        state = _init_state(occ0, lem_prob, forced, seeds[s], occ)
        # labels: particles numbered left to right, tagged particle at the origin gets 0
        left = 0
        for i in range(W):
            left += occ[i]
        nxt = -left
        for i in range(n):
            if occ[i] == 1:
                lab[i] = nxt
                nxt += 1
            else:
                lab[i] = -2147483647
        for i in range(n):
            snap_occ[s, 0, i] = occ[i]
            snap_lab[s, 0, i] = lab[i]
        tag = W if occ[W] == 1 else -1
        nbonds = n + 1
        rate = 0.5 * nbonds
        flag = 0
        comp = 0.0
        t = 0.0
        state, u = _uniform(state)
        t_next = -np.log(u) / rate
        for c in range(C):
            tc = checkpoints[c]
            while t_next <= tc:
                comp += 0.5 * (t_next - t) * (float(occ[W - 1]) - float(occ[W]))
                t = t_next
                state, u = _uniform(state)
                k = int(u * nbonds)
                if k >= nbonds:
                    k = nbonds - 1
                if k == 0:
                    mark[0] = 1
                    if tag == 0:
                        flag = 1
                elif k == nbonds - 1:
                    mark[n - 1] = 1
                    if tag == n - 1:
                        flag = 1
                else:
                    i = k - 1
                    mi = mark[i]
                    mj = mark[i + 1]
                    if mi | mj:
                        if i == W - 1 or i == tag or i + 1 == tag:
                            flag = 1
                        mark[i] = mj
                        mark[i + 1] = mi
                    a = occ[i]
                    b = occ[i + 1]
                    if a != b:
                        occ[i] = b
                        occ[i + 1] = a
                        li = lab[i]
                        lab[i] = lab[i + 1]
                        lab[i + 1] = li
                        bonds[i] += 1 if a == 1 else -1
                        if tag == i:
                            tag = i + 1
                        elif tag == i + 1:
                            tag = i
                state, u = _uniform(state)
                t_next = t - np.log(u) / rate
            comp += 0.5 * (tc - t) * (float(occ[W - 1]) - float(occ[W]))
            t = tc
            for i in range(n):
                snap_occ[s, c + 1, i] = occ[i]
                snap_lab[s, c + 1, i] = lab[i]
            for i in range(n - 1):
                snap_bonds[s, c, i] = bonds[i]
            out_X[s, c] = tag - W if tag >= 0 else 0
            out_flag[s, c] = flag
            out_comp[s, c] = comp


# ----------------------------------------------------------------- public API

@dataclass
class SimConfig:
    """Simulation settings; times are physical (already multiplied by ``N**2``)."""

    W: int
    checkpoints: tuple
    seed: int = 0
    N: float = 1.0

    def __post_init__(self):
        cps = np.asarray(self.checkpoints, dtype=float)
        if self.W < 1:
            raise ValueError("W must be >= 1")
        if cps.ndim != 1 or cps.size == 0 or np.any(cps < 0) or np.any(np.diff(cps) < 0):
            raise ValueError("checkpoints must be a sorted, non-empty list of times >= 0")
        self.checkpoints = tuple(float(c) for c in cps)

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self.checkpoints, dtype=float)

    @classmethod
    def for_profile(cls, p: Profile, N: float, T_macro: float, seed: int = 0,
                    n_checkpoints: int = 1, safety: float = 1.0) -> "SimConfig":
        """Window sized by :func:`default_window`; checkpoints evenly spaced up to ``N**2 T``."""
        W = default_window(p, N, T_macro, safety)
        t_end = N * N * T_macro
        cps = tuple(t_end * (k + 1) / n_checkpoints for k in range(n_checkpoints))
        return cls(W=W, checkpoints=cps, seed=seed, N=N)


def default_window(p: Profile, N: float, T_macro: float, safety: float = 1.0) -> int:
    """``N max(|x_lo|, |x_hi|, 1) + 6 N sqrt(T)`` sites, times ``safety``."""
    reach = max(abs(p.x_lo), abs(p.x_hi), 1.0)
    return int(np.ceil(safety * (N * reach + 6.0 * N * np.sqrt(T_macro))))


@dataclass
class BatchResult:
    """Scalar outputs of many samples, shape ``(samples, checkpoints)``."""

    times: np.ndarray
    J: np.ndarray
    X: np.ndarray
    flag: np.ndarray
    compensator: np.ndarray
    seeds: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        return self.flag == 0

    @property
    def flag_rate(self) -> float:
        return float(self.flag[:, -1].mean())


def run_batch(init, cfg: SimConfig, samples: int, *, lem: Profile | None = None,
              forced_origin: bool = True, track_tag: bool = True,
              offset: int = 0) -> BatchResult:
    """Run ``samples`` independent trajectories from a common initial state.

    ``init`` is a :class:`Configuration`; with ``lem`` given, each sample
    instead draws independent Bernoulli occupancies from that profile (the
    scale ``cfg.N`` maps sites to macroscopic positions).  ``forced_origin``
    puts a particle at the origin after sampling.
    """
    W = cfg.W
    if lem is not None:
        prob = lem_probabilities(lem, cfg.N, W)
        occ0 = np.zeros(2 * W + 1, dtype=np.uint8)
    else:
        if init.W != W:
            raise ValueError("initial configuration window does not match cfg.W")
        prob = np.empty(0)
        occ0 = init.occupancy
    seeds = sample_seeds(cfg.seed, samples, offset)
    C = len(cfg.checkpoints)
    J = np.zeros((samples, C), dtype=np.int64)
    X = np.zeros((samples, C), dtype=np.int64)
    flag = np.zeros((samples, C), dtype=np.uint8)
    comp = np.zeros((samples, C))
    _batch_kernel(occ0, prob, forced_origin, seeds, cfg.times, track_tag, J, X, flag, comp)
    return BatchResult(cfg.times, J, X, flag, comp, seeds)


@dataclass
class TrajectorySample:
    """Full record of one trajectory.

    ``occupancy[c]`` and ``labels[c]`` are snapshots at time ``times[c]``
    with ``times[0] = 0``; ``bond_currents[c - 1, W + x]`` is the current
    across bond ``(x, x+1)`` up to ``times[c]``.
    """

    W: int
    times: np.ndarray
    occupancy: np.ndarray
    labels: np.ndarray
    bond_currents: np.ndarray
    X: np.ndarray
    flag: np.ndarray
    compensator: np.ndarray
    seed: int = 0
    track_bonds: tuple | None = field(default=None)

    @property
    def J_origin(self) -> np.ndarray:
        """Current across ``(-1, 0)`` at each checkpoint (index 0 is time 0)."""
        return np.concatenate([[0], self.bond_currents[:, self.W - 1]])

    @property
    def positions(self) -> np.ndarray:
        return np.concatenate([[0], self.X])

    @property
    def valid(self) -> bool:
        return not bool(self.flag[-1])

    def bond_current(self, x: int) -> np.ndarray:
        """Current across ``(x, x+1)`` at each checkpoint including time 0."""
        if not -self.W <= x < self.W:
            if x in (-self.W - 1, self.W):
                return np.zeros(self.times.size, dtype=np.int64)
            raise KeyError(f"bond ({x},{x + 1}) outside the window")
        if self.track_bonds is not None and x not in self.track_bonds:
            raise KeyError(f"bond ({x},{x + 1}) was not tracked")
        return np.concatenate([[0], self.bond_currents[:, self.W + x]])

    def configuration(self, c: int = -1) -> Configuration:
        return Configuration(self.W, self.occupancy[c])


def run_many(init: Configuration, cfg: SimConfig, samples: int, *, lem: Profile | None = None,
             forced_origin: bool = True, offset: int = 0) -> list[TrajectorySample]:
    """Full-history trajectories (snapshots, labels and every bond current)."""
    W = cfg.W
    n = 2 * W + 1
    if lem is not None:
        prob = lem_probabilities(lem, cfg.N, W)
        occ0 = np.zeros(n, dtype=np.uint8)
    else:
        if init.W != W:
            raise ValueError("initial configuration window does not match cfg.W")
        prob = np.empty(0)
        occ0 = init.occupancy
    seeds = sample_seeds(cfg.seed, samples, offset)
    C = len(cfg.checkpoints)
    occ = np.zeros((samples, C + 1, n), dtype=np.uint8)
    lab = np.zeros((samples, C + 1, n), dtype=np.int32)
    bonds = np.zeros((samples, C, n - 1), dtype=np.int64)
    X = np.zeros((samples, C), dtype=np.int64)
    flag = np.zeros((samples, C), dtype=np.uint8)
    comp = np.zeros((samples, C))
    _history_kernel(occ0, prob, forced_origin, seeds, cfg.times, occ, lab, bonds, X, flag, comp)
    times = np.concatenate([[0.0], cfg.times])
    return [
        TrajectorySample(W, times, occ[s], lab[s], bonds[s], X[s], flag[s], comp[s], int(seeds[s]))
        for s in range(samples)
    ]


def run(cfg: SimConfig, init: Configuration, track_bonds=None, *, forced_origin: bool = False,
        index: int = 0) -> TrajectorySample:
    """Simulate one trajectory from ``init``; every bond current is recorded.

    ``track_bonds`` restricts which bonds :meth:`TrajectorySample.bond_current`
    will serve (the kernel records all of them).  The sample is a pure function
    of ``(cfg.seed, index)``.
    """
    sample = run_many(init, cfg, 1, forced_origin=forced_origin, offset=index)[0]
    if track_bonds is not None:
        sample.track_bonds = tuple(int(b) for b in track_bonds)
    return sample


# ------------------------------------------------------------------ identities

def telescoping_residual(s: TrajectorySample) -> int:
    """Max over checkpoints and sites of ``|J_{x-1,x} - J_{x,x+1} - (eta_t(x) - eta_0(x))|``."""
    zeros = np.zeros((s.times.size, 1), dtype=np.int64)
    b = np.concatenate([zeros, np.vstack([np.zeros((1, 2 * s.W), dtype=np.int64), s.bond_currents]), zeros], axis=1)
    lhs = b[:, :-1] - b[:, 1:]
    rhs = s.occupancy.astype(np.int64) - s.occupancy[0].astype(np.int64)
    return int(np.abs(lhs - rhs).max())


def check_tagged_current_relation(s: TrajectorySample, r: int) -> bool:
    """Check the position/current relation at every checkpoint.

    For ``r >= 0``: ``X_t >= r`` iff ``J_{-1,0}(t) >= sum_{x=0}^{r-1} eta_t(x)``.
    For ``r < 0``: ``X_t <= r`` iff ``J_{-1,0}(t) <= -1 - sum_{x=r+1}^{-1} eta_t(x)``.
    """
    W = s.W
    J = s.J_origin
    X = s.positions
    occ = s.occupancy.astype(np.int64)
    if r >= 0:
        total = occ[:, W:W + r].sum(axis=1)
        return bool(np.all((X >= r) == (J >= total)))
    total = occ[:, W + r + 1:W].sum(axis=1)
    return bool(np.all((X <= r) == (J <= -1 - total)))


def order_preserved(s: TrajectorySample) -> bool:
    """Labels read left to right are strictly increasing at every snapshot and the tag sits at ``X``."""
    for c in range(s.times.size):
        occupied = s.occupancy[c] == 1
        labs = s.labels[c][occupied]
        if labs.size and np.any(np.diff(labs) != 1):
            return False
        if s.occupancy[0][s.W] == 1:
            x = s.positions[c]
            if s.labels[c][s.W + x] != 0 or s.occupancy[c][s.W + x] != 1:
                return False
    return True


def empirical_density(c: Configuration, N: float, G, support=None) -> float:
    """``(1/N) sum_x G(x/N) eta(x)`` over the window.

    ``support`` is an interval ``(lo, hi)`` outside which ``G`` vanishes; it
    must fit inside the window.
    """
    if support is not None:
        lo, hi = support
        if lo * N < -c.W or hi * N > c.W:
            raise ValueError("test function support exceeds the window")
    x = c.sites
    return float(np.sum(np.asarray(G(x / N), dtype=float) * c.occupancy) / N)


def cutoff_function(n: float):
    """``G_n(u) = 1_{[0, n]}(u) (1 - u/n)``."""
    def G(u):
        u = np.asarray(u, dtype=float)
        return np.where((u >= 0) & (u <= n), 1.0 - u / n, 0.0)
    return G


def cutoff_decomposition(s: TrajectorySample, n: float, N: float, c: int = -1) -> float:
    """Residual of ``J_{-1,0}/N = Y_t(G_n) - Y_0(G_n) + (1/(n N^2)) sum_{x=1}^{nN} J_{x-1,x}``."""
    M = int(round(n * N))
    if not np.isclose(M, n * N):
        raise ValueError("n*N must be an integer")
    if M >= s.W:
        raise KeyError("cutoff extends beyond the tracked bonds")
    if s.track_bonds is not None:
        missing = [x for x in range(-1, M) if x not in s.track_bonds]
        if missing:
            raise KeyError(f"bonds {missing[:5]} not tracked")
    G = cutoff_function(n)
    y_t = empirical_density(Configuration(s.W, s.occupancy[c]), N, G)
    y_0 = empirical_density(Configuration(s.W, s.occupancy[0]), N, G)
    total = sum(int(s.bond_current(x - 1)[c]) for x in range(1, M + 1))
    return float(s.bond_current(-1)[c] / N - (y_t - y_0 + total / (n * N * N)))


def current_bounds_hold(s: TrajectorySample) -> bool:
    """``-#{initially >= 0} <= J_{-1,0} <= #{initially < 0}`` at every checkpoint."""
    W = s.W
    left = int(s.occupancy[0][:W].sum())
    right = int(s.occupancy[0][W:].sum())
    J = s.J_origin
    return bool(np.all(J <= left) and np.all(J >= -right))
