"""Closed-form laws of the maximal degree and of the large-node forest.

Quantities under the excursion measure N are sigma-finite masses and are
returned raw; divide by ``degree_tail`` to condition on {Delta > delta}.
"""
import math
from dataclasses import dataclass, field, fields

from . import special
from .errors import AtomicPi, InfiniteMass, LevyLabError, ZeroTail


def _recip(x):
    return math.inf if x == 0.0 else 1.0 / x


def degree_tail(m, delta, inclusive=False):
    """N[Delta > delta] = psi_delta^{-1}(pibar(delta)); N[Delta >= delta] when ``inclusive``."""
    if not delta > 0.0:
        raise ValueError("delta must be > 0")
    t = m.pi.tail(delta, inclusive)
    if t == 0.0:
        return 0.0
    return m.variant(delta, inclusive).invert(t)


def joint_sigma_degree_laplace(m, delta, lam, strict=False):
    """N[1 - e^{-lam sigma} 1{Delta <= delta}] (or 1{Delta < delta} when ``strict``)."""
    if not delta > 0.0:
        raise ValueError("delta must be > 0")
    if not lam >= 0.0:
        raise ValueError("lambda must be >= 0")
    return m.variant(delta, strict).invert(m.pi.tail(delta, strict) + lam)


def degree_zero_sigma_laplace(m, lam):
    """N[1 - e^{-lam sigma} 1{Delta = 0}] = psi_0^{-1}(<pi,1> + lam)."""
    mass = m.pi.total_mass()
    if math.isinf(mass):
        raise InfiniteMass("Delta = 0 has full measure only for finite pi")
    return m.variant(0.0).invert(mass + lam)


def forest_degree_cdf(m, r, delta):
    """F_r(Delta <= delta): e^{-r N[Delta > delta]} if r <= delta, else 0.

    The initial mass r is itself a node, so the forest degree is at least r.
    """
    if not (r > 0.0 and delta > 0.0):
        raise ValueError("need r > 0 and delta > 0")
    if r > delta:
        return 0.0
    return math.exp(-r * degree_tail(m, delta))


def w(m, delta):
    """w(delta) = 1/psi_{delta-}'(N[Delta >= delta]); inf when the derivative vanishes."""
    return _recip(m.variant(delta, True).psi_prime(degree_tail(m, delta, True)))


def w_plus(m, delta):
    """w_+(delta) = 1/psi_delta'(N[Delta > delta])."""
    return _recip(mrca_height_rate(m, delta))


def mrca_height_rate(m, delta):
    """Rate psi_delta'(N[Delta > delta]) of the exponential MRCA height of large nodes."""
    return m.variant(delta).psi_prime(degree_tail(m, delta))


def g_atom(m, delta):
    """pi({delta}) e^{-delta N[Delta > delta]}; zero off the atoms."""
    p = m.pi.atom(delta)
    if p == 0.0:
        return 0.0
    return p * math.exp(-delta * degree_tail(m, delta))


def h_delta_mean(m, delta):
    """Mean of the exponential height of the maximal-degree node, equal to w(delta)."""
    if not m.pi.is_diffuse:
        raise AtomicPi("the height law of the maximal node is only available for diffuse pi")
    return w(m, delta)


def _need_tail(m, delta):
    t = m.pi.tail(delta)
    if t == 0.0:
        raise ZeroTail(f"pi puts no mass above {delta}")
    return t


def z0_laplace(m, delta, lam):
    """N[1 - e^{-lam Z0}] = psi_delta^{-1}((1 - e^{-lam}) pibar(delta))."""
    t = _need_tail(m, delta)
    return m.variant(delta).invert(-math.expm1(-lam) * t)


def xi_laplace(m, delta, lam):
    """E[e^{-lam xi}] for the offspring law of the large-node forest."""
    t = _need_tail(m, delta)
    u = z0_laplace(m, delta, lam)
    return m.pi.tail_laplace(u, delta) / t


def xi_mean(m, delta):
    """E[xi] = M/(alpha + M) with M = int_(delta,inf) r pi(dr); exactly 1 when critical."""
    _need_tail(m, delta)
    mom = m.pi.partial_first_moment(delta)
    if m.alpha == 0.0:
        return 1.0
    return mom / (m.alpha + mom)


def prob_z0_eq_1(m, delta):
    """N[Z0 = 1] = pibar(delta) / psi_delta'(N[Delta > delta])."""
    t = m.pi.tail(delta)
    if t == 0.0:
        return 0.0
    return t / mrca_height_rate(m, delta)


def prob_w_eq_1(m, delta):
    """N[W = 1] = int_(delta,inf) e^{-r N[Delta > delta]} pi(dr) / psi_delta'(N[Delta > delta])."""
    if m.pi.tail(delta) == 0.0:
        return 0.0
    n = degree_tail(m, delta)
    return m.pi.tail_laplace(n, delta) / m.variant(delta).psi_prime(n)


def local_time_mean(m, delta, h):
    """N[L^h_sigma 1{Delta < delta}] = e^{-h/w(delta)}."""
    if not h >= 0.0:
        raise ValueError("h must be >= 0")
    if h == 0.0:
        return 1.0
    return math.exp(-h / w(m, delta))


def small_atom_ratio(m, delta):
    """pi({delta}) / (w(delta) pibar(delta) int_[delta,inf) r pi(dr)); 0 for diffuse pi."""
    t = _need_tail(m, delta)
    p = m.pi.atom(delta)
    if p == 0.0:
        return 0.0
    return p / (w(m, delta) * t * m.pi.partial_first_moment(delta, True))


def stable_coefficients(gamma):
    """delta-free coefficients of the stable large-degree laws.

    Returns c with N[Delta > delta] = c/delta, and the coefficients of 1/delta
    in N[Z0 = 1] and N[W = 1].  The last one is c^{gamma+1} e^c / a_gamma,
    obtained from ``prob_w_eq_1`` with psi_delta'(c/delta) = (a/c) e^{-c} delta^{1-gamma}.
    """
    k = special.stable_constants(gamma)
    c, a = k.c_gamma, k.a_gamma
    return {"tail_coeff": c,
            "z0_coeff": c / gamma * math.exp(c),
            "w1_coeff": c ** (gamma + 1.0) * math.exp(c) / a}


def stable_xi_laplace(gamma, lam):
    """delta-free offspring transform e^{-lam} + (gamma/a) c_gamma(lam)^gamma."""
    k = special.stable_constants(gamma)
    return math.exp(-lam) + gamma / k.a_gamma * k.c_lambda(lam) ** gamma


@dataclass
class DegreeLawReport:
    delta: float
    tail_open: float = math.nan
    tail_closed: float = math.nan
    atom_mass: float = math.nan
    w: float = math.nan
    w_plus: float = math.nan
    g: float = math.nan
    mrca_rate: float = math.nan
    h_delta_mean: float = math.nan
    xi_mean: float = math.nan
    p_z0_eq_1: float = math.nan
    p_w_eq_1: float = math.nan
    small_atom_ratio: float = math.nan
    errors: dict = field(default_factory=dict)

    @classmethod
    def columns(cls):
        return [f.name for f in fields(cls) if f.name != "errors"]

    def row(self):
        return [getattr(self, c) for c in self.columns()]


def degree_law_report(m, delta):
    """Evaluate every column; a failing law leaves NaN and an entry in ``errors``."""
    rep = DegreeLawReport(delta)
    laws = {
        "tail_open": lambda: degree_tail(m, delta),
        "tail_closed": lambda: degree_tail(m, delta, True),
        "atom_mass": lambda: rep.tail_closed - rep.tail_open,
        "w": lambda: w(m, delta),
        "w_plus": lambda: w_plus(m, delta),
        "g": lambda: g_atom(m, delta),
        "mrca_rate": lambda: mrca_height_rate(m, delta),
        "h_delta_mean": lambda: h_delta_mean(m, delta),
        "xi_mean": lambda: xi_mean(m, delta),
        "p_z0_eq_1": lambda: prob_z0_eq_1(m, delta),
        "p_w_eq_1": lambda: prob_w_eq_1(m, delta),
        "small_atom_ratio": lambda: small_atom_ratio(m, delta),
    }
    for name, fn in laws.items():
        try:
            setattr(rep, name, float(fn()))
        except (LevyLabError, ValueError, ArithmeticError) as exc:
            rep.errors[name] = f"{type(exc).__name__}: {exc}"
    return rep
