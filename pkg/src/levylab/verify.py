"""Monte Carlo checks of the closed-form laws.

Each check turns simulated records into an ``MCEstimate`` and compares it to
the analytic value: a check passes when |mean - analytic| <= k stderr +
bias_budget.  The bias budget absorbs the systematic error of the path
discretisation, which averaging cannot remove.
"""
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import degree_laws as dl
from .mechanism import BranchingMechanism, StableMeasure
from .samplers import (INCOMPLETE, PathFlag, PathSimConfig, extract_big_node_forest,
                       sample_gw_forests, simulate_paths)

K_SIGMA = 3.0


def _msum(values, partials=None):
    """Shewchuk's exact summation; returns non-overlapping partials."""
    partials = list(partials or [])
    for x in values:
        i = 0
        for y in partials:
            if abs(x) < abs(y):
                x, y = y, x
            hi = x + y
            lo = y - (hi - x)
            if lo:
                partials[i] = lo
                i += 1
            x = hi
        partials[i:] = [x]
    return partials


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    n: int
    bias_budget: float = 0.0


@dataclass
class MomentSummary:
    """Mergeable first and second moment sums kept exactly.

    Merging in any order gives bit-identical estimates because the sums are
    held as exact partials and rounded once.
    """
    n: int = 0
    s1: list = field(default_factory=list)
    s2: list = field(default_factory=list)

    def add(self, values):
        v = np.asarray(values, dtype=float).ravel()
        self.n += v.size
        self.s1 = _msum(v.tolist(), self.s1)
        self.s2 = _msum((v * v).tolist(), self.s2)
        return self

    def merge(self, other):
        return MomentSummary(self.n + other.n, _msum(other.s1, self.s1), _msum(other.s2, self.s2))

    def estimate(self, bias_budget=0.0):
        if self.n == 0:
            return MCEstimate(math.nan, math.nan, 0, bias_budget)
        s1, s2 = math.fsum(self.s1), math.fsum(self.s2)
        mean = s1 / self.n
        if self.n < 2:
            return MCEstimate(mean, math.inf, self.n, bias_budget)
        var = max(s2 - s1 * mean, 0.0) / (self.n - 1)
        return MCEstimate(mean, math.sqrt(var / self.n), self.n, bias_budget)


def estimate(values, bias_budget=0.0):
    return MomentSummary().add(values).estimate(bias_budget)


@dataclass
class CheckResult:
    name: str
    analytic_value: float
    estimate: MCEstimate
    z_score: float
    passed: bool
    tolerance_spec: str
    status: str = "pass"
    details: dict = field(default_factory=dict)

    def to_json(self):
        out = asdict(self)
        out["estimate"] = asdict(self.estimate)
        return out


def judge(name, analytic, est, k=K_SIGMA, details=None):
    """Apply |mean - analytic| <= k stderr + bias_budget."""
    details = details or {}
    if est.n == 0 or math.isnan(est.mean):
        return CheckResult(name, analytic, est, math.nan, False, "no usable samples", "skipped", details)
    gap = abs(est.mean - analytic)
    z = gap / est.stderr if est.stderr > 0 else (0.0 if gap == 0 else math.inf)
    ok = gap <= k * est.stderr + est.bias_budget
    tol = f"|mean-analytic| <= {k:g}*stderr + {est.bias_budget:g}"
    return CheckResult(name, analytic, est, z, bool(ok), tol, "pass" if ok else "fail", details)


def _records(m, r, delta_record, n, cfg, records):
    return records if records is not None else simulate_paths(m, r, delta_record, cfg, n)


def _flag_counts(records):
    return {f.name.lower(): sum(1 for p in records if p.flags & f)
            for f in (PathFlag.TRUNCATED, PathFlag.CENSORED, PathFlag.BIG_CAP)}


def check_forest_degree_cdf(m, r, delta, n, cfg, records=None, bias_budget=0.005):
    """Empirical F_r(Delta <= delta) against e^{-r N[Delta > delta]}."""
    if r > delta:
        raise ValueError("the forest degree check needs r <= delta")
    recs = _records(m, r, delta, n, cfg, records)
    vals = [p.forest_degree <= delta for p in recs if p.complete or p.max_jump > delta]
    return judge("forest_degree_cdf", dl.forest_degree_cdf(m, r, delta),
                 estimate(vals, bias_budget), details=_flag_counts(recs))


def check_sigma_laplace(m, r, lam, n, cfg, records=None, bias_budget=0.005, delta_record=math.inf):
    """Empirical F_r(e^{-lam sigma}) against e^{-r psi^{-1}(lam)}.

    Horizon-censored records enter with their stopping time, which biases
    the value by at most e^{-lam horizon}.
    """
    recs = _records(m, r, delta_record, n, cfg, records)
    vals = [math.exp(-lam * p.sigma_hat) for p in recs if not p.flags & (PathFlag.TRUNCATED | PathFlag.BIG_CAP)]
    target = math.exp(-r * m.variant().invert(lam))
    return judge("sigma_laplace", target, estimate(vals, bias_budget), details=_flag_counts(recs))


def check_joint_laplace(m, r, delta, lam, n, cfg, records=None, bias_budget=0.005):
    """Empirical F_r(e^{-lam sigma} 1{Delta <= delta}) against e^{-r psi_delta^{-1}(pibar + lam)}."""
    recs = _records(m, r, delta, n, cfg, records)
    vals = [math.exp(-lam * p.sigma_hat) * (p.forest_degree <= delta)
            for p in recs if p.complete or p.max_jump > delta]
    target = 0.0 if r > delta else math.exp(-r * dl.joint_sigma_degree_laplace(m, delta, lam))
    return judge("joint_laplace", target, estimate(vals, bias_budget), details=_flag_counts(recs))


def check_z0_law(m, r, delta, lam, n, cfg, records=None, bias_budget=0.005):
    """Empirical F_r(e^{-lam Z0}) against e^{-r N[1 - e^{-lam Z0}]}."""
    recs = _records(m, r, delta, n, cfg, records)
    vals = [math.exp(-lam * extract_big_node_forest(p, delta).z0) for p in recs if p.complete]
    target = math.exp(-r * dl.z0_laplace(m, delta, lam))
    return judge("z0_law", target, estimate(vals, bias_budget), details=_flag_counts(recs))


def offspring_ratio(forests, depth=1):
    """Pooled offspring mean over nodes of generation < depth, with ratio stderr.

    Offspring counts of the nodes in the first generations are i.i.d. and
    independent of how many such nodes there are, so the pooled ratio is
    consistent; pooling every node is not, because a critical forest has
    infinite expected size.
    """
    a, b = [], []
    for f in forests:
        sel = f.generations < depth
        k = int(np.count_nonzero(sel))
        if k:
            a.append(float(f.offspring_counts[sel].sum()))
            b.append(float(k))
    n = len(a)
    if n == 0:
        return MCEstimate(math.nan, math.nan, 0)
    a, b = np.array(a), np.array(b)
    ratio = math.fsum(a) / math.fsum(b)
    if n < 2:
        return MCEstimate(ratio, math.inf, n)
    resid = a - ratio * b
    se = math.sqrt(math.fsum(resid * resid) / (n * (n - 1))) / b.mean()
    return MCEstimate(ratio, se, n)


def check_offspring_mean(m, r, delta, n, cfg, records=None, depth=1, bias_budget=0.0):
    """Pooled offspring mean of path-extracted forests against M/(alpha + M).

    Incomplete records are dropped.  A finite ``cfg.horizon`` therefore biases
    the estimate down, since long paths carry the roots with most children.
    """
    recs = _records(m, r, delta, n, cfg, records)
    forests = [extract_big_node_forest(p, delta) for p in recs if p.complete]
    est = offspring_ratio(forests, depth)
    est = replace(est, bias_budget=bias_budget)
    details = _flag_counts(recs)
    details["nonempty_forests"] = est.n
    details["depth"] = depth
    return judge("offspring_mean", dl.xi_mean(m, delta), est, details=details)


def _z0w_bins(pairs, cap):
    """Histogram of (z0, w) on {0..cap}^2 plus one residual bin."""
    counts = np.zeros((cap + 1) * (cap + 1) + 1)
    for z0, w in pairs:
        if z0 is None or z0 > cap or w > cap:
            counts[-1] += 1
        else:
            counts[z0 * (cap + 1) + w] += 1
    return counts


def cross_validate_gw(m, r, delta, n, cfg, records=None, forests=None, tv_max=0.03, cap=10):
    """Total variation between path-extracted and Galton-Watson (Z0, W) laws."""
    if records is None:
        pcfg = replace(cfg, max_big_jumps=cap + 1, horizon=math.inf)
        records = simulate_paths(m, r, delta, pcfg, n)
    if forests is None:
        gcfg = replace(cfg, replica_index=cfg.replica_index + 10**9)
        forests = sample_gw_forests(m, r, delta, gcfg, n, pop_cap=cap + 1)
    path_pairs = []
    for p in records:
        if p.flags & PathFlag.BIG_CAP:
            path_pairs.append((None, None))
        elif p.complete:
            f = extract_big_node_forest(p, delta)
            path_pairs.append((f.z0, f.w_total))
    gw_pairs = []
    for f in forests:
        if f.flags & PathFlag.POPULATION_CAP:
            gw_pairs.append((None, None))
        elif not f.flags & PathFlag.TRUNCATED:
            gw_pairs.append((f.z0, f.w_total))
    hp, hg = _z0w_bins(path_pairs, cap), _z0w_bins(gw_pairs, cap)
    tv = 0.5 * float(np.abs(hp / max(hp.sum(), 1) - hg / max(hg.sum(), 1)).sum())
    est = MCEstimate(tv, 0.0, min(len(path_pairs), len(gw_pairs)), tv_max)
    res = judge("cross_validate_gw", 0.0, est,
                details={"tv": tv, "path_used": len(path_pairs), "gw_used": len(gw_pairs),
                         "path_residual": int(hp[-1]), "gw_residual": int(hg[-1])})
    res.tolerance_spec = f"TV over (Z0, W) in {{0..{cap}}}^2 <= {tv_max:g}"
    return res


def check_stable_invariance(gamma, deltas=(1.0, 5.0, 20.0), lambdas=None, tol=1e-6):
    """Offspring transform of the stable forest at several delta against its delta-free form."""
    from .mechanism import stable_mechanism
    lambdas = list(lambdas) if lambdas is not None else [0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0]
    m = stable_mechanism(gamma)
    worst = 0.0
    for lam in lambdas:
        ref = dl.stable_xi_laplace(gamma, lam)
        for d in deltas:
            worst = max(worst, abs(dl.xi_laplace(m, d, lam) - ref))
    est = MCEstimate(worst, 0.0, len(lambdas) * len(deltas), tol)
    res = judge("stable_invariance", 0.0, est, details={"gamma": gamma, "deltas": list(deltas)})
    res.tolerance_spec = f"max |xi_laplace - (e^-l + (g/a) c(l)^g)| <= {tol:g}"
    return res


CHECKS = ("forest_degree_cdf", "sigma_laplace", "joint_laplace", "z0_law",
          "offspring_mean", "cross_validate_gw", "stable_invariance")


def builtin_suite(name, quick=False):
    """Named suite specs; ``quick`` halves sample sizes and doubles budgets."""
    fine = {"eps": 1e-3, "dt": 1e-3, "horizon": 12.0}
    coarse = {"eps": 0.05, "dt": 0.01}
    if name == "default":
        checks = [
            dict(check="forest_degree_cdf", r=1.0, delta=2.0, n=20000, **fine),
            dict(check="sigma_laplace", r=1.0, delta=2.0, lam=1.0, n=20000, **fine),
            dict(check="joint_laplace", r=1.0, delta=2.0, lam=1.0, n=20000, **fine),
            dict(check="z0_law", r=1.0, delta=2.0, lam=1.0, n=20000, **coarse),
            dict(check="offspring_mean", r=1.0, delta=2.0, n=20000, **coarse),
            dict(check="cross_validate_gw", r=1.0, delta=2.0, n=10000, **coarse),
            dict(check="stable_invariance"),
        ]
    elif name == "analytic":
        checks = [dict(check="stable_invariance")]
    else:
        raise KeyError(f"unknown suite {name!r}")
    spec = {"suite": name, "mechanism": {"alpha": 0.0, "beta": 0.0, "pi": {"kind": "stable", "gamma": 1.5}},
            "seed": 0, "checks": checks}
    return quicken(spec) if quick else spec


def quicken(spec):
    out = dict(spec)
    out["checks"] = []
    for c in spec["checks"]:
        c = dict(c)
        if "n" in c:
            c["n"] = max(1, c["n"] // 2)
        c["budget_scale"] = 2.0 * c.get("budget_scale", 1.0)
        out["checks"].append(c)
    return out


class SuiteConfigError(ValueError):
    pass


def run_suite(spec):
    """Run every check of ``spec``; records are shared between checks with equal settings.

    Returns a JSON-ready report.  Unknown check names raise SuiteConfigError
    before any simulation starts.
    """
    t0 = time.perf_counter()
    for c in spec["checks"]:
        if c.get("check") not in CHECKS:
            raise SuiteConfigError(f"unknown check {c.get('check')!r}")
    m = BranchingMechanism.from_json(spec["mechanism"])
    seed = int(spec.get("seed", 0))
    cache = {}
    results = []
    for i, c in enumerate(spec["checks"]):
        name = c["check"]
        scale = c.get("budget_scale", 1.0)
        if name == "stable_invariance":
            if isinstance(m.pi, StableMeasure) and math.isinf(m.pi.upper) and m.alpha == 0 and m.beta == 0:
                res = check_stable_invariance(m.pi.gamma, tol=1e-6 * scale)
            else:
                res = CheckResult(name, math.nan, MCEstimate(math.nan, math.nan, 0), math.nan, False,
                                  "stable mechanisms only", "skipped")
            results.append(res)
            continue
        r, delta, n = float(c["r"]), float(c["delta"]), int(c["n"])
        lam = float(c.get("lam", 1.0))
        cfg = PathSimConfig(eps=float(c.get("eps", 1e-3)), dt=float(c.get("dt", 1e-3)),
                            max_steps=int(c.get("max_steps", 10**7)), seed=seed,
                            horizon=float(c.get("horizon", math.inf)))
        budget = float(c.get("bias_budget", 0.005)) * scale
        if name == "cross_validate_gw":
            res = cross_validate_gw(m, r, delta, n, replace(cfg, replica_index=i * 10**7),
                                    tv_max=float(c.get("tv_max", 0.03)) * scale)
            results.append(res)
            continue
        key = (r, delta, n, cfg)
        if key not in cache:
            cache[key] = simulate_paths(m, r, delta, cfg, n)
        recs = cache[key]
        if name == "forest_degree_cdf":
            res = check_forest_degree_cdf(m, r, delta, n, cfg, recs, budget)
        elif name == "sigma_laplace":
            res = check_sigma_laplace(m, r, lam, n, cfg, recs, budget)
        elif name == "joint_laplace":
            res = check_joint_laplace(m, r, delta, lam, n, cfg, recs, budget)
        elif name == "z0_law":
            res = check_z0_law(m, r, delta, lam, n, cfg, recs, budget)
        else:
            res = check_offspring_mean(m, r, delta, n, cfg, recs, int(c.get("depth", 1)),
                                       float(c.get("bias_budget", 0.0)) * scale)
            if res.estimate.n == 0:
                res.status = "skipped"
        results.append(res)
    failed = any(x.status == "fail" for x in results)
    return {"suite": spec.get("suite", "custom"), "mechanism_spec": spec["mechanism"],
            "mechanism_hash": m.content_hash(), "seed": seed,
            "checks": [x.to_json() for x in results], "all_passed": not failed,
            "wall_time": time.perf_counter() - t0}
