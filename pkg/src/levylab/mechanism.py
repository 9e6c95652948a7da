"""Branching mechanisms psi(l) = alpha l + beta l^2 + int (e^{-lr} - 1 + lr) pi(dr).

A mechanism is the triple (alpha, beta, pi).  Truncated variants remove the
jumps above a threshold delta (``inclusive=False``, jumps in (delta, inf)) or
at and above it (``inclusive=True``, jumps in [delta, inf)).  Every variant is
evaluated as

    (alpha + int_removed r pi(dr)) l + beta l^2 + int_kept (e^{-lr} - 1 + lr) pi(dr)

which has no cancellation for any l >= 0.
"""
import functools
import hashlib
import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from . import special
from ._roots import newton_bisect
from .errors import InfiniteMass, MechanismError, NonConvergence, QuadratureError, ZeroTail

ABS_TOL = 1e-12
REL_TOL = 1e-10

# jump-size sampler codes understood by the simulation kernel
JUMP_POWER, JUMP_DISCRETE, JUMP_TABLE = 0, 1, 2


def compensated_exp(u):
    """e^{-u} - 1 + u, with a Taylor series for small u."""
    if u < 0.5:
        if u < 1e-4:
            return u * u * (0.5 - u * (1.0 / 6.0 - u / 24.0))
        term = 0.5 * u * u
        acc = term
        n = 2
        while abs(term) > 1e-17 * acc:
            n += 1
            term *= -u / n
            acc += term
        return acc
    return math.expm1(-u) + u


def _in_tail(r, delta, inclusive):
    return r >= delta if inclusive else r > delta


@dataclass(frozen=True)
class JumpTable:
    """Flat description of pi restricted to (eps, inf) for the path kernel."""
    rate: float
    kind: int
    params: np.ndarray
    locs: np.ndarray
    cum: np.ndarray


class LevyMeasure(ABC):
    """A sigma-finite measure on (0, inf) with int (r ^ r^2) pi(dr) < inf."""

    kind = "abstract"

    @abstractmethod
    def tail(self, delta, inclusive=False):
        """pi((delta, inf)), or pi([delta, inf)) when ``inclusive``."""

    def atom(self, delta):
        """pi({delta})."""
        return 0.0

    @property
    def is_diffuse(self):
        return True

    @abstractmethod
    def partial_first_moment(self, delta, inclusive=False):
        """int over the tail set of r pi(dr)."""

    @abstractmethod
    def compensated(self, lam, delta=math.inf, inclusive=False):
        """int (e^{-lam r} - 1 + lam r) pi(dr) over the complement of the tail set."""

    @abstractmethod
    def compensated_prime(self, lam, delta=math.inf, inclusive=False):
        """lam-derivative of ``compensated``: int r (1 - e^{-lam r}) pi(dr)."""

    @abstractmethod
    def tail_laplace(self, lam, delta, inclusive=False):
        """int over the tail set of e^{-lam r} pi(dr)."""

    @abstractmethod
    def second_moment_below(self, eps):
        """int_{(0, eps]} r^2 pi(dr)."""

    @abstractmethod
    def restricted_below(self, delta, inclusive=False):
        """pi with the tail set removed."""

    @abstractmethod
    def has_infinite_variation(self):
        """True iff int_{(0,1)} r pi(dr) = inf."""

    @abstractmethod
    def sample_restricted(self, delta, rng):
        """One draw of pi restricted to (delta, inf), normalised."""

    @abstractmethod
    def jump_table(self, eps):
        """JumpTable for jumps of size > eps."""

    @abstractmethod
    def to_json(self):
        """JSON-ready dict."""

    def total_mass(self):
        return self.tail(0.0)

    def is_null(self):
        return self.tail(0.0) == 0.0


@dataclass(frozen=True)
class StableMeasure(LevyMeasure):
    """a_gamma r^{-1-gamma} dr on (0, upper); upper=inf gives psi(l) = l^gamma."""

    gamma: float
    upper: float = math.inf
    kind = "stable"

    def __post_init__(self):
        if not (1.0 < self.gamma < 2.0):
            raise MechanismError(f"stable index must lie in (1, 2), got {self.gamma}")
        if not self.upper > 0.0:
            raise MechanismError("upper cutoff must be positive")

    @property
    def a(self):
        return special.a_gamma(self.gamma)

    def _upow(self, p):
        return 0.0 if math.isinf(self.upper) else self.upper ** p

    def tail(self, delta, inclusive=False):
        if delta >= self.upper:
            return 0.0
        if delta <= 0.0:
            return math.inf
        g = self.gamma
        return self.a / g * (delta ** -g - self._upow(-g))

    def partial_first_moment(self, delta, inclusive=False):
        if delta >= self.upper:
            return 0.0
        if delta <= 0.0:
            return math.inf
        g = self.gamma
        return self.a * (delta ** (1.0 - g) - self._upow(1.0 - g)) / (g - 1.0)

    def compensated(self, lam, delta=math.inf, inclusive=False):
        if lam == 0.0:
            return 0.0
        u = min(delta, self.upper)
        if math.isinf(u):
            return lam ** self.gamma
        return self.a * lam ** self.gamma * special.compensated_power_integral(lam * u, self.gamma)

    def compensated_prime(self, lam, delta=math.inf, inclusive=False):
        if lam == 0.0:
            return 0.0
        g = self.gamma
        u = min(delta, self.upper)
        if math.isinf(u):
            return g * lam ** (g - 1.0)
        return self.a * lam ** (g - 1.0) * special.compensated_power_integral_prime(lam * u, g)

    def tail_laplace(self, lam, delta, inclusive=False):
        if delta >= self.upper:
            return 0.0
        if lam == 0.0:
            return self.tail(delta)
        g = self.gamma
        out = self.a * delta ** -g * special.power_tail_laplace(lam * delta, g)
        if not math.isinf(self.upper):
            out -= self.a * self.upper ** -g * special.power_tail_laplace(lam * self.upper, g)
        return out

    def second_moment_below(self, eps):
        g = self.gamma
        return self.a * min(eps, self.upper) ** (2.0 - g) / (2.0 - g)

    def restricted_below(self, delta, inclusive=False):
        return StableMeasure(self.gamma, min(delta, self.upper))

    def has_infinite_variation(self):
        return True

    def sample_restricted(self, delta, rng):
        if self.tail(delta) == 0.0:
            raise ZeroTail(f"no mass above {delta}")
        g = self.gamma
        v = 1.0 - rng.random()
        lo = delta ** -g
        return (self._upow(-g) + v * (lo - self._upow(-g))) ** (-1.0 / g)

    def jump_table(self, eps):
        params = np.array([self.gamma, eps ** -self.gamma, self._upow(-self.gamma)])
        return JumpTable(self.tail(eps), JUMP_POWER, params, np.empty(0), np.empty(0))

    def to_json(self):
        out = {"kind": "stable", "gamma": self.gamma}
        if not math.isinf(self.upper):
            out["upper"] = self.upper
        return out


@dataclass(frozen=True)
class AtomicMeasure(LevyMeasure):
    """Finite mixture of point masses sum_i p_i delta_{r_i}."""

    atoms: tuple
    kind = "atoms"

    def __post_init__(self):
        clean = []
        for r, p in self.atoms:
            r, p = float(r), float(p)
            if not (r > 0.0 and math.isfinite(r)):
                raise MechanismError(f"atom location must be positive and finite, got {r}")
            if not (p > 0.0 and math.isfinite(p)):
                raise MechanismError(f"atom mass must be positive and finite, got {p}")
            clean.append((r, p))
        clean.sort()
        merged = []
        for r, p in clean:
            if merged and merged[-1][0] == r:
                merged[-1] = (r, merged[-1][1] + p)
            else:
                merged.append((r, p))
        object.__setattr__(self, "atoms", tuple(merged))

    @property
    def is_diffuse(self):
        return not self.atoms

    def _tail_atoms(self, delta, inclusive):
        return [(r, p) for r, p in self.atoms if _in_tail(r, delta, inclusive)]

    def _kept_atoms(self, delta, inclusive):
        return [(r, p) for r, p in self.atoms if not _in_tail(r, delta, inclusive)]

    def tail(self, delta, inclusive=False):
        return math.fsum(p for _, p in self._tail_atoms(delta, inclusive))

    def atom(self, delta):
        return math.fsum(p for r, p in self.atoms if r == delta)

    def partial_first_moment(self, delta, inclusive=False):
        return math.fsum(r * p for r, p in self._tail_atoms(delta, inclusive))

    def compensated(self, lam, delta=math.inf, inclusive=False):
        return math.fsum(p * compensated_exp(lam * r) for r, p in self._kept_atoms(delta, inclusive))

    def compensated_prime(self, lam, delta=math.inf, inclusive=False):
        return math.fsum(-p * r * math.expm1(-lam * r) for r, p in self._kept_atoms(delta, inclusive))

    def tail_laplace(self, lam, delta, inclusive=False):
        return math.fsum(p * math.exp(-lam * r) for r, p in self._tail_atoms(delta, inclusive))

    def second_moment_below(self, eps):
        return math.fsum(r * r * p for r, p in self.atoms if r <= eps)

    def restricted_below(self, delta, inclusive=False):
        return AtomicMeasure(tuple(self._kept_atoms(delta, inclusive)))

    def has_infinite_variation(self):
        return False

    def sample_restricted(self, delta, rng):
        above = self._tail_atoms(delta, False)
        if not above:
            raise ZeroTail(f"no mass above {delta}")
        locs = np.array([r for r, _ in above])
        cum = np.cumsum([p for _, p in above])
        return float(locs[min(np.searchsorted(cum, rng.random() * cum[-1], side="right"), len(locs) - 1)])

    def jump_table(self, eps):
        above = self._tail_atoms(eps, False)
        locs = np.array([r for r, _ in above], dtype=float)
        cum = np.cumsum([p for _, p in above]).astype(float)
        return JumpTable(self.tail(eps), JUMP_DISCRETE, np.empty(0), locs, cum)

    def to_json(self):
        return {"kind": "atoms", "atoms": [[r, p] for r, p in self.atoms]}


@dataclass(frozen=True)
class TabulatedMeasure(LevyMeasure):
    """Absolutely continuous pi with a user density on (lower, upper).

    Integrals go through adaptive Gauss-Kronrod quadrature (QUADPACK via
    scipy); any reported loss of accuracy raises QuadratureError.
    """

    density: Callable[[float], float]
    lower: float = 0.0
    upper: float = math.inf
    epsabs: float = 1e-13
    epsrel: float = 1e-11
    limit: int = 200
    points: Optional[tuple] = field(default=None, compare=False)
    kind = "tabulated"

    def __post_init__(self):
        if not (0.0 <= self.lower < self.upper):
            raise MechanismError("need 0 <= lower < upper for a tabulated density")

    def _quad(self, f, a, b):
        a, b = max(a, self.lower), min(b, self.upper)
        if not a < b:
            return 0.0
        val, err, info = integrate.quad(f, a, b, epsabs=self.epsabs, epsrel=self.epsrel,
                                        limit=self.limit, full_output=1)[:3]
        tol = max(self.epsabs, self.epsrel * abs(val))
        if err > 10.0 * tol or not math.isfinite(val):
            raise QuadratureError(f"quadrature on ({a:g}, {b:g}) did not converge", err)
        return val

    def _band_diverges(self, power):
        """Heuristic for int_0 r^power pi(dr) = inf: decade integrals stop shrinking."""
        if self.lower > 0.0:
            return False
        top = min(1.0, self.upper)
        bands = []
        for k in range(8, 14):
            a, b = top * 10.0 ** -(k + 1), top * 10.0 ** -k
            v, _ = integrate.quad(lambda r: r ** power * self.density(r), a, b, limit=self.limit)
            bands.append(v)
        if bands[-1] == 0.0:
            return False
        return all(bands[i + 1] >= 0.9 * bands[i] for i in range(len(bands) - 1))

    def tail(self, delta, inclusive=False):
        if delta <= self.lower and self.lower == 0.0 and self._band_diverges(0.0):
            return math.inf
        return self._quad(self.density, delta, self.upper)

    def partial_first_moment(self, delta, inclusive=False):
        if delta <= 0.0 and self._band_diverges(1.0):
            return math.inf
        return self._quad(lambda r: r * self.density(r), delta, self.upper)

    def compensated(self, lam, delta=math.inf, inclusive=False):
        if lam == 0.0:
            return 0.0
        return self._quad(lambda r: compensated_exp(lam * r) * self.density(r), 0.0, delta)

    def compensated_prime(self, lam, delta=math.inf, inclusive=False):
        if lam == 0.0:
            return 0.0
        return self._quad(lambda r: -r * math.expm1(-lam * r) * self.density(r), 0.0, delta)

    def tail_laplace(self, lam, delta, inclusive=False):
        return self._quad(lambda r: math.exp(-lam * r) * self.density(r), delta, self.upper)

    def second_moment_below(self, eps):
        return self._quad(lambda r: r * r * self.density(r), 0.0, eps)

    def restricted_below(self, delta, inclusive=False):
        return TabulatedMeasure(self.density, self.lower, min(delta, self.upper),
                                self.epsabs, self.epsrel, self.limit, None)

    def has_infinite_variation(self):
        return self._band_diverges(1.0)

    @functools.lru_cache(maxsize=16)
    def _zero_tail(self, delta):
        return self.tail(delta) == 0.0

    def _effective_upper(self, delta):
        if math.isfinite(self.upper):
            return self.upper
        total = self.tail(delta)
        hi = max(2.0 * delta, 1.0)
        while self.tail(hi) > 1e-13 * total:
            hi *= 2.0
        return hi

    @functools.lru_cache(maxsize=16)
    def _inverse_table(self, delta, n=2048):
        lo = max(delta, self.lower)
        grid = np.geomspace(lo, self._effective_upper(delta), n)
        pieces = [self._quad(self.density, a, b) for a, b in zip(grid[:-1], grid[1:])]
        cum = np.concatenate([[0.0], np.cumsum(pieces)])
        return grid, cum / cum[-1]

    def sample_restricted(self, delta, rng):
        if delta >= self.upper or self._zero_tail(delta):
            raise ZeroTail(f"no mass above {delta}")
        grid, cum = self._inverse_table(delta)
        return float(np.exp(np.interp(rng.random(), cum, np.log(grid))))

    def jump_table(self, eps):
        rate = self.tail(eps)
        if rate == 0.0:
            return JumpTable(0.0, JUMP_TABLE, np.empty(0), np.array([eps, eps]), np.array([0.0, 1.0]))
        grid, cum = self._inverse_table(eps)
        return JumpTable(rate, JUMP_TABLE, np.empty(0), np.log(grid), cum)

    def to_json(self):
        if self.points is None:
            raise MechanismError("only table-backed densities can be serialised")
        return {"kind": "tabulated", "points": [list(p) for p in self.points],
                "epsabs": self.epsabs, "epsrel": self.epsrel, "limit": self.limit}

    @classmethod
    def from_points(cls, points, epsabs=1e-13, epsrel=1e-11, limit=200):
        """Density interpolated linearly in log-log coordinates between table points."""
        pts = sorted((float(r), float(d)) for r, d in points)
        if len(pts) < 2 or pts[0][0] <= 0.0 or any(d <= 0.0 for _, d in pts):
            raise MechanismError("a density table needs >= 2 points with r > 0 and density > 0")
        lr = np.log([r for r, _ in pts])
        ld = np.log([d for _, d in pts])
        lo, hi = pts[0][0], pts[-1][0]

        def density(r):
            if r < lo or r > hi:
                return 0.0
            return math.exp(np.interp(math.log(r), lr, ld))

        return cls(density, lo, hi, epsabs, epsrel, limit, tuple(pts))


@dataclass(frozen=True)
class BranchingMechanism:
    """The triple (alpha, beta, pi); rejects finite-variation mechanisms."""

    alpha: float
    beta: float
    pi: LevyMeasure

    def __post_init__(self):
        if not (self.alpha >= 0.0 and math.isfinite(self.alpha)):
            raise MechanismError(f"alpha must be finite and >= 0, got {self.alpha}")
        if not (self.beta >= 0.0 and math.isfinite(self.beta)):
            raise MechanismError(f"beta must be finite and >= 0, got {self.beta}")
        if self.pi.is_null():
            raise MechanismError("Levy measure must be non-zero")
        if not (self.beta > 0.0 or self.pi.has_infinite_variation()):
            raise MechanismError("need beta > 0 or int_(0,1) r pi(dr) = inf (infinite variation)")

    @classmethod
    def _unchecked(cls, alpha, beta, pi):
        obj = object.__new__(cls)
        object.__setattr__(obj, "alpha", alpha)
        object.__setattr__(obj, "beta", beta)
        object.__setattr__(obj, "pi", pi)
        return obj

    @property
    def critical(self):
        return self.alpha == 0.0

    def variant(self, delta=None, inclusive=False):
        return MechanismVariant(self, delta, inclusive)

    def psi(self, lam):
        return MechanismVariant(self).psi(lam)

    def psi_prime(self, lam):
        return MechanismVariant(self).psi_prime(lam)

    def to_json(self):
        return {"alpha": self.alpha, "beta": self.beta, "pi": self.pi.to_json()}

    def content_hash(self):
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_json(cls, spec):
        try:
            alpha = float(spec.get("alpha", 0.0))
            beta = float(spec.get("beta", 0.0))
            pis = spec["pi"]
            kind = pis["kind"]
        except (KeyError, TypeError, AttributeError, ValueError) as exc:
            raise MechanismError(f"malformed mechanism spec: {exc}") from exc
        if kind == "stable":
            pi = StableMeasure(float(pis["gamma"]), float(pis.get("upper", math.inf)))
        elif kind == "atoms":
            pi = AtomicMeasure(tuple(tuple(a) for a in pis["atoms"]))
        elif kind == "tabulated":
            pi = TabulatedMeasure.from_points(pis["points"], pis.get("epsabs", 1e-13),
                                              pis.get("epsrel", 1e-11), pis.get("limit", 200))
        else:
            raise MechanismError(f"unknown Levy measure kind {kind!r}")
        return cls(alpha, beta, pi)


def load_mechanism(path):
    with open(path) as fh:
        return BranchingMechanism.from_json(json.load(fh))


def stable_mechanism(gamma, alpha=0.0, beta=0.0):
    return BranchingMechanism(alpha, beta, StableMeasure(gamma))


@dataclass(frozen=True)
class MechanismVariant:
    """psi (delta=None), psi_delta (inclusive=False) or psi_{delta-} (inclusive=True)."""

    base: BranchingMechanism
    delta: Optional[float] = None
    inclusive: bool = False

    def __post_init__(self):
        if self.delta is not None and not self.delta >= 0.0:
            raise ValueError(f"truncation level must be >= 0, got {self.delta}")

    def _drift(self):
        if self.delta is None:
            return self.base.alpha
        moment = self.base.pi.partial_first_moment(self.delta, self.inclusive)
        if math.isinf(moment):
            raise InfiniteMass("removing all small jumps needs int r pi(dr) < inf")
        return self.base.alpha + moment

    def _cut(self):
        return math.inf if self.delta is None else self.delta

    def psi(self, lam):
        if not lam >= 0.0:
            raise ValueError(f"lambda must be >= 0, got {lam}")
        if lam == 0.0:
            return 0.0
        m = self.base
        return (self._drift() * lam + m.beta * lam * lam
                + m.pi.compensated(lam, self._cut(), self.inclusive))

    def psi_prime(self, lam):
        if not lam >= 0.0:
            raise ValueError(f"lambda must be >= 0, got {lam}")
        m = self.base
        return (self._drift() + 2.0 * m.beta * lam
                + m.pi.compensated_prime(lam, self._cut(), self.inclusive))

    def invert(self, target, abs_tol=ABS_TOL, rel_tol=REL_TOL, maxiter=300):
        """Unique l >= 0 with psi_variant(l) = target.

        Brackets by doubling from 1, then runs Newton with bisection fallback.
        Guarantees |psi(l) - target| <= rel_tol * target unless the bracket
        collapses to a few ulp first, in which case no float does better.
        """
        if not target >= 0.0:
            raise ValueError(f"target must be >= 0, got {target}")
        if target == 0.0:
            return 0.0
        if math.isinf(target):
            return math.inf
        hi = 1.0
        while self.psi(hi) < target:
            hi *= 2.0
            if hi > 1e300:
                raise NonConvergence("no bracket for psi inverse", target, hi)
        lo = 0.0 if hi == 1.0 else 0.5 * hi
        # aim two digits below the contract; Newton makes this nearly free
        ftol = 0.01 * max(rel_tol * target, 0.0) or abs_tol
        return newton_bisect(lambda x: self.psi(x) - target, self.psi_prime, lo, hi, ftol, maxiter)


def _as_variant(v):
    return v if isinstance(v, MechanismVariant) else MechanismVariant(v)


def tail(pi, delta, inclusive=False):
    """pi((delta, inf)), or pi([delta, inf)) when ``inclusive``."""
    if not delta >= 0.0:
        raise ValueError("delta must be >= 0")
    return pi.tail(delta, inclusive)


def partial_first_moment(pi, delta, inclusive=False):
    if not delta > 0.0:
        raise ValueError("delta must be > 0")
    return pi.partial_first_moment(delta, inclusive)


def psi(v, lam):
    return _as_variant(v).psi(lam)


def psi_prime(v, lam):
    return _as_variant(v).psi_prime(lam)


def invert(v, target, abs_tol=ABS_TOL, rel_tol=REL_TOL):
    return _as_variant(v).invert(target, abs_tol, rel_tol)


def psi_zero(m, lam):
    """psi_0(l) = (alpha + int r pi(dr)) l + beta l^2, defined when <pi, 1> < inf."""
    if math.isinf(m.pi.total_mass()):
        raise InfiniteMass("psi_0 needs a Levy measure of finite total mass")
    return MechanismVariant(m, 0.0).psi(lam)


def phi(m, lam):
    """phi(l) = psi(l)/l - alpha, with phi(0) = 0."""
    if lam == 0.0:
        return 0.0
    if not lam > 0.0:
        raise ValueError("lambda must be >= 0")
    return m.beta * lam + m.pi.compensated(lam) / lam


def sample_restricted(pi, delta, rng):
    return pi.sample_restricted(delta, rng)
