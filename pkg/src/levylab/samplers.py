"""Monte Carlo engines for Levy forests.

``simulate_first_passage`` runs the spectrally positive Levy path with
Laplace exponent psi from level r until it first drops to 0.  Jumps above
``eps`` are exact compound-Poisson events; the rest is replaced by a drift and
a Brownian part with matching variance.  Every jump above ``delta_record`` is
stored with its pre-jump level and the running minimum that follows it, which
is enough to recover the genealogy of the big nodes.

``sample_gw_forest`` draws the same big-node forest from its Galton-Watson
description using paths of the pruned mechanism, so the two routes can be
compared.
"""
import enum
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .errors import ZeroTail
from .mechanism import JUMP_DISCRETE, JUMP_POWER, BranchingMechanism

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


class PathFlag(enum.IntFlag):
    NONE = 0
    TRUNCATED = 1       # max_steps reached before first passage
    CENSORED = 2        # stopped at the horizon after a big jump was seen
    BIG_CAP = 4         # stopped after max_big_jumps big jumps
    POPULATION_CAP = 8  # Galton-Watson forest hit its node cap


INCOMPLETE = PathFlag.TRUNCATED | PathFlag.CENSORED | PathFlag.BIG_CAP


@dataclass(frozen=True)
class PathSimConfig:
    """Discretisation and stopping rules for path simulation.

    ``horizon`` and ``max_big_jumps`` are optional early stops that keep
    long critical excursions affordable; records stopped by them are flagged.
    """
    eps: float = 1e-3
    dt: float = 1e-3
    max_steps: int = 10**8
    seed: int = 0
    replica_index: int = 0
    horizon: float = math.inf
    max_big_jumps: Optional[int] = None

    def __post_init__(self):
        if not (self.eps > 0.0 and self.dt > 0.0 and self.max_steps > 0):
            raise ValueError("eps, dt and max_steps must be positive")


def rng_for(seed, replica_index):
    """Counter-based stream for one replica; no global state."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(replica_index),))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class PathRecord:
    r: float
    sigma_hat: float
    max_jump: float
    t_first_big: Optional[float]
    big_jumps: np.ndarray  # rows: time, size, pre-jump level, running min until next big jump
    delta_record: float
    flags: PathFlag = PathFlag.NONE

    @property
    def forest_degree(self):
        return max(self.r, self.max_jump)

    @property
    def complete(self):
        return not (self.flags & INCOMPLETE)


@njit(nogil=True, cache=True)
def _draw_jump(rng, kind, params, locs, cum):
    if kind == 0:
        v = 1.0 - rng.random()
        return (params[2] + v * (params[1] - params[2])) ** (-1.0 / params[0])
    if kind == 1:
        u = rng.random() * cum[-1]
        i = np.searchsorted(cum, u, side="right")
        if i >= locs.size:
            i = locs.size - 1
        return locs[i]
    u = rng.random()
    i = np.searchsorted(cum, u, side="right")
    if i >= cum.size:
        i = cum.size - 1
    if i < 1:
        i = 1
    span = cum[i] - cum[i - 1]
    frac = (u - cum[i - 1]) / span if span > 0.0 else 0.0
    return math.exp(locs[i - 1] + frac * (locs[i] - locs[i - 1]))


@njit(nogil=True, cache=True)
def _first_passage_kernel(rng, x0, drift, sd, rate, kind, params, locs, cum,
                          delta_record, dt, max_steps, horizon, max_big):
    cap = 8
    ev = np.empty((cap, 4))
    n_big = 0
    t = 0.0
    x = x0
    seg_min = x0
    max_jump = 0.0
    status = 0
    sigma = 0.0
    steps = 0
    next_jump = rng.standard_exponential() / rate if rate > 0.0 else np.inf
    while True:
        jump = next_jump - t <= dt
        h = next_jump - t if jump else dt
        prev = x
        x = prev + drift * h
        if sd > 0.0:
            x += sd * math.sqrt(h) * rng.standard_normal()
        if x <= 0.0:
            # linear interpolation of the crossing inside the last step
            sigma = t + h * prev / (prev - x)
            if x < seg_min:
                seg_min = x
            break
        t = next_jump if jump else t + h
        if x < seg_min:
            seg_min = x
        if jump:
            s = _draw_jump(rng, kind, params, locs, cum)
            if s > max_jump:
                max_jump = s
            if s > delta_record:
                if n_big > 0:
                    ev[n_big - 1, 3] = seg_min
                if n_big == cap:
                    cap *= 2
                    grown = np.empty((cap, 4))
                    grown[:n_big] = ev[:n_big]
                    ev = grown
                ev[n_big, 0] = t
                ev[n_big, 1] = s
                ev[n_big, 2] = x
                n_big += 1
                seg_min = x + s
            x += s
            next_jump = t + rng.standard_exponential() / rate
        steps += 1
        if n_big >= max_big:
            status = 4
            sigma = t
            break
        if steps >= max_steps:
            status = 1
            sigma = t
            break
        if t >= horizon and n_big > 0:
            status = 2
            sigma = t
            break
    if n_big > 0:
        ev[n_big - 1, 3] = seg_min
    return sigma, max_jump, status, ev[:n_big].copy()


@dataclass(frozen=True)
class _KernelInputs:
    drift: float
    sd: float
    rate: float
    kind: int
    params: np.ndarray
    locs: np.ndarray
    cum: np.ndarray


@lru_cache(maxsize=64)
def _kernel_inputs(m, eps):
    pi = m.pi
    jt = pi.jump_table(eps)
    drift = -(m.alpha + pi.partial_first_moment(eps))
    sd = math.sqrt(2.0 * m.beta + pi.second_moment_below(eps))
    if jt.kind == JUMP_DISCRETE and jt.locs.size == 0:
        return _KernelInputs(drift, sd, 0.0, JUMP_DISCRETE, jt.params, np.ones(1), np.ones(1))
    params = jt.params if jt.kind == JUMP_POWER else np.zeros(3)
    return _KernelInputs(drift, sd, jt.rate, jt.kind, params.astype(float),
                         np.asarray(jt.locs, float), np.asarray(jt.cum, float))


def _run_kernel(ki, rng, r, delta_record, cfg):
    max_big = cfg.max_big_jumps if cfg.max_big_jumps is not None else np.iinfo(np.int64).max
    return _first_passage_kernel(rng, float(r), ki.drift, ki.sd, ki.rate, ki.kind, ki.params,
                                 ki.locs, ki.cum, float(delta_record), float(cfg.dt),
                                 int(cfg.max_steps), float(cfg.horizon), int(max_big))


def simulate_first_passage(m, r, delta_record, cfg, rng=None):
    """One path from level r to its first passage at or below 0.

    The drift is -(alpha + int_(eps,inf) s pi(ds)), the Gaussian variance
    rate is 2 beta + int_(0,eps] s^2 pi(ds), and jumps above eps arrive at
    rate pibar(eps).  First passage is checked at the end of every time step
    and just before every jump.
    """
    if not r > 0.0:
        raise ValueError("starting level r must be > 0")
    if not cfg.eps < delta_record:
        raise ValueError("eps must be below delta_record")
    if rng is None:
        rng = rng_for(cfg.seed, cfg.replica_index)
    sigma, max_jump, status, ev = _run_kernel(_kernel_inputs(m, cfg.eps), rng, r, delta_record, cfg)
    return PathRecord(float(r), float(sigma), float(max_jump),
                      float(ev[0, 0]) if len(ev) else None, ev, float(delta_record),
                      PathFlag(int(status)))


def _threads(threads):
    if threads is not None:
        return max(1, int(threads))
    return max(1, int(os.environ.get("LEVYLAB_THREADS", "1")))


def simulate_paths(m, r, delta_record, cfg, n, threads=None):
    """n independent records; replica i uses stream (cfg.seed, cfg.replica_index + i)."""
    ki = _kernel_inputs(m, cfg.eps)
    if not cfg.eps < delta_record:
        raise ValueError("eps must be below delta_record")

    def one(i):
        rng = rng_for(cfg.seed, cfg.replica_index + i)
        sigma, max_jump, status, ev = _run_kernel(ki, rng, r, delta_record, cfg)
        return PathRecord(float(r), float(sigma), float(max_jump),
                          float(ev[0, 0]) if len(ev) else None, ev, float(delta_record),
                          PathFlag(int(status)))

    nt = _threads(threads)
    if nt == 1 or n < 2:
        return [one(i) for i in range(n)]
    with ThreadPoolExecutor(nt) as pool:
        return list(pool.map(one, range(n), chunksize=max(1, n // (8 * nt))))


@dataclass
class BigNodeForest:
    """Forest of nodes with mass > delta; parents precede children."""
    masses: np.ndarray
    parents: np.ndarray  # -1 marks a root
    flags: PathFlag = PathFlag.NONE
    generations: np.ndarray = field(init=False)

    def __post_init__(self):
        self.masses = np.asarray(self.masses, dtype=float)
        self.parents = np.asarray(self.parents, dtype=np.int64)
        gen = np.zeros(len(self.parents), dtype=np.int64)
        for i, p in enumerate(self.parents):
            if p >= 0:
                if p >= i:
                    raise ValueError("parents must precede their children")
                gen[i] = gen[p] + 1
        self.generations = gen

    @property
    def nodes(self):
        return [(float(mv), None if p < 0 else int(p)) for mv, p in zip(self.masses, self.parents)]

    @property
    def z0(self):
        return int(np.count_nonzero(self.parents < 0))

    @property
    def w_total(self):
        return int(len(self.parents))

    @property
    def offspring_counts(self):
        kids = self.parents[self.parents >= 0]
        return np.bincount(kids, minlength=self.w_total).astype(np.int64)

    @property
    def truncated(self):
        return bool(self.flags)

    def offspring_histogram(self):
        counts = self.offspring_counts
        return np.bincount(counts).tolist() if counts.size else []


def extract_big_node_forest(p, delta):
    """Genealogy of the jumps > delta of one path.

    Big jump s is an ancestor of a later big jump t iff the pre-jump level
    X_{s-} stays strictly below the path on [s, t].  Scanning jumps in time
    order with a stack of open ancestors gives each node its closest ancestor.
    """
    if p.r > delta:
        raise ValueError(f"forest extraction needs r <= delta (r={p.r}, delta={delta})")
    if delta < p.delta_record:
        raise ValueError("delta is below the recording threshold of this path")
    ev = p.big_jumps
    masses, parents = [], []
    stack = []  # (pre-jump level, node index)
    seg_min = math.inf
    for time, size, pre, after_min in ev:
        if size > delta:
            while stack and stack[-1][0] >= seg_min:
                stack.pop()
            parents.append(stack[-1][1] if stack else -1)
            masses.append(size)
            stack.append((pre, len(masses) - 1))
            seg_min = math.inf
        seg_min = min(seg_min, after_min)
    return BigNodeForest(np.array(masses), np.array(parents, dtype=np.int64), p.flags & INCOMPLETE)


def make_truncated_mechanism(m, delta):
    """Mechanism without jumps > delta: (alpha + int_(delta,inf) r pi(dr), beta, pi|(0,delta])."""
    alpha = m.alpha + m.pi.partial_first_moment(delta)
    pi = m.pi.restricted_below(delta)
    if pi.is_null():
        return BranchingMechanism._unchecked(alpha, m.beta, pi)
    return BranchingMechanism(alpha, m.beta, pi)


def sample_gw_forest(m, r, delta, cfg, rng=None, pop_cap=10**6):
    """Big-node forest from its Galton-Watson description.

    Under the pruned mechanism, big nodes arrive at rate pibar(delta) per unit
    of pruned mass.  The number of roots is Poisson(pibar * sigma_0) with
    sigma_0 the lifetime of a pruned path from r; each node draws its mass
    from pi restricted to (delta, inf) and has Poisson(pibar * sigma_node)
    children.  Nodes are generated breadth first; hitting ``pop_cap`` stops
    the forest and sets POPULATION_CAP.
    """
    if rng is None:
        rng = rng_for(cfg.seed, cfg.replica_index)
    rate = m.pi.tail(delta)
    if rate == 0.0:
        return BigNodeForest(np.empty(0), np.empty(0, dtype=np.int64))
    if not cfg.eps < delta:
        raise ValueError("eps must be below delta")
    ki = _kernel_inputs(make_truncated_mechanism(m, delta), cfg.eps)
    flags = PathFlag.NONE

    def lifetime(level):
        nonlocal flags
        sigma, _, status, _ = _run_kernel(ki, rng, level, math.inf, cfg)
        if status:
            flags |= PathFlag.TRUNCATED
        return sigma

    masses, parents = [], []
    pending = [(-1, int(rng.poisson(rate * lifetime(r))))]
    head = 0
    while head < len(pending):
        parent, k = pending[head]
        head += 1
        for _ in range(k):
            if len(masses) >= pop_cap:
                return BigNodeForest(np.array(masses), np.array(parents, dtype=np.int64),
                                     flags | PathFlag.POPULATION_CAP)
            mass = m.pi.sample_restricted(delta, rng)
            masses.append(mass)
            parents.append(parent)
            pending.append((len(masses) - 1, int(rng.poisson(rate * lifetime(mass)))))
    return BigNodeForest(np.array(masses), np.array(parents, dtype=np.int64), flags)


def sample_gw_forests(m, r, delta, cfg, n, pop_cap=10**6, threads=None):
    """n forests; forest i uses stream (cfg.seed, cfg.replica_index + i)."""
    def one(i):
        return sample_gw_forest(m, r, delta, cfg, rng_for(cfg.seed, cfg.replica_index + i), pop_cap)

    nt = _threads(threads)
    if nt == 1 or n < 2:
        return [one(i) for i in range(n)]
    with ThreadPoolExecutor(nt) as pool:
        return list(pool.map(one, range(n)))


def record_summary(p, delta=None):
    """JSON-ready summary of one path, with forest statistics when ``delta`` is given."""
    out = {"sigma": p.sigma_hat, "max_jump": p.max_jump, "t_first_big": p.t_first_big,
           "flags": int(p.flags)}
    if delta is not None:
        try:
            f = extract_big_node_forest(p, delta)
            out.update(z0=f.z0, w=f.w_total, offspring_hist=f.offspring_histogram())
        except ValueError as exc:
            out.update(z0=None, w=None, offspring_hist=None, error=str(exc))
    return out


__all__ = ["PathFlag", "PathSimConfig", "PathRecord", "BigNodeForest", "rng_for",
           "simulate_first_passage", "simulate_paths", "extract_big_node_forest",
           "make_truncated_mechanism", "sample_gw_forest", "sample_gw_forests",
           "record_summary", "ZeroTail"]
