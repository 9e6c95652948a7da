import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from levylab import degree_laws as dl
from levylab.mechanism import AtomicMeasure, BranchingMechanism, StableMeasure, stable_mechanism
from levylab.samplers import BigNodeForest, PathSimConfig
from levylab.verify import (
    CHECKS, MCEstimate, MomentSummary, SuiteConfigError, builtin_suite, check_offspring_mean,
    check_stable_invariance, check_z0_law, cross_validate_gw, estimate, judge, offspring_ratio,
    quicken, run_suite,
)

COARSE = PathSimConfig(eps=0.05, dt=0.01, horizon=12.0)
floats = st.floats(-1e6, 1e6, allow_nan=False)


@given(st.lists(floats, max_size=30), st.lists(floats, max_size=30), st.lists(floats, max_size=30))
def test_merge_is_associative_and_order_free(a, b, c):
    A, B, C = (MomentSummary().add(x) for x in (a, b, c))
    left = A.merge(B).merge(C).estimate()
    right = A.merge(B.merge(C)).estimate()
    swapped = C.merge(A).merge(B).estimate()
    whole = MomentSummary().add(a + b + c).estimate()
    for e in (right, swapped, whole):
        assert e.n == left.n
        if left.n:
            assert e.mean == left.mean
        if left.n >= 2:
            assert e.stderr == left.stderr


def test_estimate_matches_numpy():
    x = np.random.default_rng(1).normal(3.0, 2.0, 1000)
    e = estimate(x)
    assert e.mean == pytest.approx(x.mean(), rel=1e-14)
    assert e.stderr == pytest.approx(x.std(ddof=1) / math.sqrt(len(x)), rel=1e-12)


def test_estimate_small_samples():
    assert math.isnan(estimate([]).mean)
    e = estimate([2.0])
    assert e.mean == 2.0 and e.stderr == math.inf


def test_self_consistency_of_judge():
    # an exact sample mean must pass; a far-off analytic value must fail
    x = np.random.default_rng(2).exponential(1.0, 5000)
    e = estimate(x)
    assert judge("t", e.mean, e).passed
    assert not judge("t", e.mean + 10 * e.stderr, e).passed
    assert judge("t", e.mean + 10 * e.stderr, MCEstimate(e.mean, e.stderr, e.n, 10 * e.stderr)).passed
    r = judge("t", 1.0, MCEstimate(math.nan, math.nan, 0))
    assert r.status == "skipped" and not r.passed


def test_check_result_json():
    r = judge("t", 1.0, estimate([1.0, 1.1, 0.9]))
    d = r.to_json()
    assert d["estimate"]["n"] == 3 and d["name"] == "t"
    json.dumps(d)


@pytest.mark.parametrize("gamma", [1.5, 1.8, 1.2])
def test_stable_invariance(gamma):
    r = check_stable_invariance(gamma)
    assert r.passed and r.estimate.mean < 1e-9


def test_offspring_ratio_on_handmade_forests():
    f1 = BigNodeForest(np.array([3.0, 2.5, 2.2]), np.array([-1, 0, 0]))
    f2 = BigNodeForest(np.array([3.0, 4.0]), np.array([-1, -1]))
    empty = BigNodeForest(np.empty(0), np.empty(0, dtype=np.int64))
    e = offspring_ratio([f1, f2, empty])
    assert e.n == 2 and e.mean == pytest.approx(2 / 3)
    assert offspring_ratio([f1, f2], depth=2).mean == pytest.approx(2 / 5)
    assert math.isnan(offspring_ratio([empty]).mean)


def test_offspring_check_skipped_without_big_nodes():
    m = BranchingMechanism(1.0, 0.5, AtomicMeasure(((0.5, 1.0), (2.5, 0.01))))
    r = check_offspring_mean(m, 0.5, 2.0, 50, COARSE)
    assert r.estimate.n <= 50
    # a forest with no roots contributes nothing
    m0 = BranchingMechanism(1.0, 0.5, AtomicMeasure(((0.5, 1.0), (2.5, 1e-9))))
    r0 = check_offspring_mean(m0, 0.5, 2.0, 50, COARSE)
    assert r0.status == "skipped"


def test_offspring_mean_subcritical():
    m = BranchingMechanism(1.0, 0.0, StableMeasure(1.5))
    # no horizon: dropping censored paths would drop the most prolific roots
    r = check_offspring_mean(m, 1.0, 1.0, 20000, PathSimConfig(eps=0.05, dt=0.01))
    assert r.analytic_value == pytest.approx(dl.xi_mean(m, 1.0))
    assert r.passed, r


def test_z0_law_atomic():
    m = BranchingMechanism(1.0, 0.5, AtomicMeasure(((0.5, 1.0), (2.5, 0.5))))
    r = check_z0_law(m, 1.0, 2.0, 1.0, 4000, COARSE)
    assert r.passed, r


def test_cross_validate_degenerate_without_tail():
    m = BranchingMechanism(1.0, 0.5, AtomicMeasure(((0.5, 1.0),)))
    r = cross_validate_gw(m, 1.0, 2.0, 200, COARSE)
    assert r.passed and r.estimate.mean == 0.0


def test_cross_validate_huge_delta():
    r = cross_validate_gw(stable_mechanism(1.5), 1.0, 1e6, 300, COARSE)
    assert r.passed and r.details["tv"] < 0.03


def test_unknown_check_raises_before_simulation():
    spec = builtin_suite("default")
    spec["checks"].append({"check": "nope"})
    with pytest.raises(SuiteConfigError):
        run_suite(spec)
    with pytest.raises(KeyError):
        builtin_suite("nope")


def test_quicken():
    spec = builtin_suite("default")
    q = quicken(spec)
    assert [c.get("n") for c in q["checks"]] == [c["n"] // 2 if "n" in c else None for c in spec["checks"]]
    assert all(c["budget_scale"] == 2.0 for c in q["checks"])
    assert builtin_suite("default", quick=True) == q


def test_suite_names_all_checks():
    assert {c["check"] for c in builtin_suite("default")["checks"]} == set(CHECKS)


def _small_suite(seed=3):
    return {"suite": "small", "seed": seed,
            "mechanism": {"alpha": 1.0, "beta": 0.5, "pi": {"kind": "atoms", "atoms": [[0.5, 1.0], [2.5, 0.5]]}},
            "checks": [dict(check="sigma_laplace", r=1.0, delta=2.0, lam=1.0, n=500, eps=0.05, dt=0.01),
                       dict(check="z0_law", r=1.0, delta=2.0, lam=1.0, n=500, eps=0.05, dt=0.01),
                       dict(check="stable_invariance")]}


def test_run_suite_reproducible_and_skips_non_stable():
    a, b = run_suite(_small_suite()), run_suite(_small_suite())
    a.pop("wall_time"), b.pop("wall_time")
    assert json.dumps(a, sort_keys=True, default=str) == json.dumps(b, sort_keys=True, default=str)
    assert a["checks"][-1]["status"] == "skipped"
    c = run_suite(_small_suite(seed=4))
    assert c["checks"][0]["estimate"]["mean"] != a["checks"][0]["estimate"]["mean"]


def test_analytic_suite():
    rep = run_suite(builtin_suite("analytic"))
    assert rep["all_passed"] and len(rep["checks"]) == 1
