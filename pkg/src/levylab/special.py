"""Incomplete gamma function at negative order and the stable-case constants.

Only real arguments are supported.  The helpers ``compensated_power_integral``
and friends are the building blocks for evaluating truncated stable branching
mechanisms without catastrophic cancellation.
"""
import math
from dataclasses import dataclass

from ._roots import newton_bisect
from .errors import NonConvergence

_EPS = 2.220446049250313e-16
_CF_SWITCH = 1.0      # continued fraction above this x, series + recurrence below
_SERIES_SWITCH = 2.0  # power series for the compensated integrals below this x


def _reject_bad_order(s):
    if not (-3.0 < s <= 1.0):
        raise ValueError(f"order s={s} outside (-3, 1]")
    k = round(s)
    if k <= 0 and abs(s - k) < 1e-8:
        raise ValueError(f"order s={s} too close to the non-positive integer {k}")


def _gamma_series(a, x):
    """Gamma(a, x) for a in (0, 1] and moderate x by the lower-gamma series.

    Written as [(Gamma(1+a) - 1) - (x^a - 1)]/a - x^a * sum_{k>=1} so that the
    a -> 0 end keeps full relative accuracy.
    """
    head = (math.expm1(math.lgamma(1.0 + a)) - math.expm1(a * math.log(x))) / a
    term = 1.0
    acc = 0.0
    k = 0
    while True:
        k += 1
        term *= -x / k
        add = term / (a + k)
        acc += add
        if abs(add) <= _EPS * abs(acc) or k > 200:
            break
    return head - x ** a * acc


def _gamma_cf(s, x):
    """Gamma(s, x) by the modified Lentz continued fraction (any real s)."""
    tiny = 1e-300
    b = x + 1.0 - s
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 1000):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        step = d * c
        h *= step
        if abs(step - 1.0) <= _EPS:
            break
    else:
        raise NonConvergence("incomplete gamma continued fraction", abs(step - 1.0))
    return math.exp(-x + s * math.log(x)) * h


def upper_gamma(s, x):
    """Upper incomplete gamma Gamma(s, x) = int_x^inf t^(s-1) e^(-t) dt.

    Valid for real ``s`` in (-3, 1] away from 0, -1, -2 and ``x > 0``.  For
    ``x <= 1`` the value at the shifted order s+n in (0, 1] comes from a
    power series and is carried down with
    Gamma(s, x) = (Gamma(s+1, x) - x^s e^-x) / s.  For larger x the
    continued fraction is applied at ``s`` directly.  Underflows to 0 for
    very large x.
    """
    _reject_bad_order(s)
    if not x > 0.0:
        raise ValueError(f"x must be positive, got {x}")
    if x > _CF_SWITCH:
        return _gamma_cf(s, x)
    n = 0 if s > 0.0 else int(math.floor(-s)) + 1
    b = s + n
    g = _gamma_series(b, x)
    ex = math.exp(-x)
    for _ in range(n):
        b -= 1.0
        g = (g - x ** b * ex) / b
    return g


def a_gamma(gamma):
    """Normalising constant gamma(gamma-1)/Gamma(2-gamma) of the stable measure."""
    if not (1.0 < gamma < 2.0):
        raise ValueError(f"gamma must lie in (1, 2), got {gamma}")
    return gamma * (gamma - 1.0) / math.gamma(2.0 - gamma)


def _check_gamma(gamma):
    if not (1.0 < gamma < 2.0):
        raise ValueError(f"gamma must lie in (1, 2), got {gamma}")


def compensated_power_integral(x, gamma):
    """G(x) = int_0^x (e^-t - 1 + t) t^(-1-gamma) dt."""
    if x <= 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0 / a_gamma(gamma)
    if x <= _SERIES_SWITCH:
        # x^2 is factored out so tiny x underflows instead of overflowing
        term = 0.5
        acc = 0.0
        n = 2
        while True:
            if n > 2:
                term *= -x / n
            add = term / (n - gamma)
            acc += add
            if abs(add) <= _EPS * abs(acc) or n > 200:
                break
            n += 1
        return acc * x ** (2.0 - gamma)
    return (1.0 / a_gamma(gamma) - upper_gamma(-gamma, x)
            + x ** (-gamma) / gamma - x ** (1.0 - gamma) / (gamma - 1.0))


def compensated_power_integral_prime(x, gamma):
    """G1(x) = int_0^x (1 - e^-t) t^(-gamma) dt, the lambda-derivative companion of G."""
    if x <= 0.0:
        return 0.0
    if math.isinf(x):
        return gamma / a_gamma(gamma)
    if x <= _SERIES_SWITCH:
        term = 1.0
        acc = 0.0
        n = 0
        while True:
            n += 1
            if n > 1:
                term *= -x / n
            add = term / (n + 1.0 - gamma)
            acc += add
            if abs(add) <= _EPS * abs(acc) or n > 200:
                break
        return acc * x ** (2.0 - gamma)
    return (gamma / a_gamma(gamma) - x ** (1.0 - gamma) / (gamma - 1.0)
            + upper_gamma(1.0 - gamma, x))


def power_tail_laplace(x, gamma):
    """E(x) = int_1^inf e^(-x u) u^(-1-gamma) du = x^gamma Gamma(-gamma, x)."""
    if x <= 0.0:
        return 1.0 / gamma
    if x > 1.0:
        return x ** gamma * upper_gamma(-gamma, x)
    return 1.0 / gamma + x ** gamma / a_gamma(gamma) - pruned_stable_exponent(x, gamma)


def pruned_stable_exponent(x, gamma):
    """S(x) = x/(gamma-1) + x^gamma G(x).

    For the unit stable measure truncated at delta this is
    delta^gamma psi_delta(x/delta) / a_gamma.  Equals sum_{n>=1} (-1)^n x^n/(n!(n-gamma)).
    """
    if x <= 0.0:
        return 0.0
    if x <= _SERIES_SWITCH:
        term = 1.0
        acc = 0.0
        n = 0
        while True:
            n += 1
            term *= -x / n
            add = term / (n - gamma)
            acc += add
            if abs(add) <= _EPS * abs(acc) or n > 200:
                break
        return acc
    return x / (gamma - 1.0) + x ** gamma * compensated_power_integral(x, gamma)


def pruned_stable_exponent_prime(x, gamma):
    """Derivative S'(x) = 1/(gamma-1) + x^(gamma-1) G1(x)."""
    if x <= 0.0:
        return 1.0 / (gamma - 1.0)
    return 1.0 / (gamma - 1.0) + x ** (gamma - 1.0) * compensated_power_integral_prime(x, gamma)


def solve_c_gamma(gamma):
    """Unique root c of Gamma(-gamma, c) = 1/a_gamma.

    Bracketed by factor-4 expansion around 1 and refined by Newton with
    bisection fallback.  The residual is below 1e-10 relative to 1/a_gamma.
    """
    _check_gamma(gamma)
    target = 1.0 / a_gamma(gamma)

    def f(x):
        return upper_gamma(-gamma, x) - target

    def df(x):
        return -math.exp(-x - (gamma + 1.0) * math.log(x))

    lo = hi = 1.0
    while f(lo) <= 0.0:
        lo /= 4.0
    while f(hi) >= 0.0:
        hi *= 4.0
    return newton_bisect(f, df, lo, hi, ftol=1e-13 * target, increasing=False)


def solve_c_gamma_lambda(gamma, lam, c_gamma=None):
    """c_gamma(lambda), the positive root of x^g (a Gamma(-g, x) - 1) = (a/g) e^-lambda.

    Solved in the equivalent cancellation-free form S(x) = (1 - e^-lambda)/gamma
    on (0, c_gamma]; see ``pruned_stable_exponent``.  Returns 0 at lambda=0 and
    c_gamma at lambda=inf.
    """
    _check_gamma(gamma)
    if lam < 0.0 or math.isnan(lam):
        raise ValueError(f"lambda must be >= 0, got {lam}")
    c = solve_c_gamma(gamma) if c_gamma is None else c_gamma
    if lam == 0.0:
        return 0.0
    if math.isinf(lam):
        return c
    target = -math.expm1(-lam) / gamma

    def f(x):
        return pruned_stable_exponent(x, gamma) - target

    def df(x):
        return pruned_stable_exponent_prime(x, gamma)

    return newton_bisect(f, df, 0.0, c, ftol=1e-14 * target)


@dataclass(frozen=True)
class StableConstants:
    gamma: float
    a_gamma: float
    c_gamma: float

    def c_lambda(self, lam):
        return solve_c_gamma_lambda(self.gamma, lam, self.c_gamma)


def stable_constants(gamma):
    """Bundle a_gamma and c_gamma for one index."""
    return StableConstants(gamma, a_gamma(gamma), solve_c_gamma(gamma))
