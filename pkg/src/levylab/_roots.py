"""Bracketed root finding for monotone scalar maps."""
import math

from .errors import NonConvergence


def newton_bisect(f, df, lo, hi, ftol, maxiter=300, increasing=True):
    """Root of a monotone ``f`` on ``[lo, hi]`` by safeguarded Newton.

    Newton steps that leave the current bracket, or that fail to halve the
    residual, are replaced by bisection.  Returns as soon as ``|f(x)| <= ftol``
    or the bracket has shrunk to a few ulp (the best iterate is returned in
    that case, since no float does better).
    """
    sgn = 1.0 if increasing else -1.0
    x = 0.5 * (lo + hi)
    best_x, best_r = x, math.inf
    last_r = math.inf
    for _ in range(maxiter):
        fx = sgn * f(x)
        r = abs(fx)
        if r < best_r:
            best_x, best_r = x, r
        if r <= ftol:
            return x
        if fx < 0.0:
            lo = x
        else:
            hi = x
        if hi - lo <= 4.0 * math.ulp(hi):
            return best_x
        d = sgn * df(x)
        xn = x - fx / d if d > 0.0 and math.isfinite(d) else math.nan
        if not (lo < xn < hi) or r > 0.5 * last_r:
            xn = 0.5 * (lo + hi)
        last_r = r
        x = xn
    raise NonConvergence("bracketed Newton hit its iteration cap", best_r, best_x)
