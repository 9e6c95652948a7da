import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from levylab import degree_laws as dl
from levylab.mechanism import AtomicMeasure, BranchingMechanism, StableMeasure, TabulatedMeasure, stable_mechanism
from levylab.samplers import (
    INCOMPLETE, BigNodeForest, PathFlag, PathRecord, PathSimConfig, extract_big_node_forest,
    make_truncated_mechanism, record_summary, rng_for, sample_gw_forest, sample_gw_forests,
    simulate_first_passage, simulate_paths,
)

STABLE = stable_mechanism(1.5)
SUB = BranchingMechanism(1.0, 0.0, StableMeasure(1.5))
ATOMIC = BranchingMechanism(1.0, 0.5, AtomicMeasure(((0.5, 1.0), (2.0, 0.2))))
COARSE = PathSimConfig(eps=0.05, dt=0.01, horizon=12.0)


def _record(rows, r=1.0, delta_record=1.0):
    rows = np.array(rows, dtype=float).reshape(-1, 4)
    mj = float(rows[:, 1].max()) if len(rows) else 0.0
    return PathRecord(r, 1.0, mj, float(rows[0, 0]) if len(rows) else None, rows, delta_record)


def test_rng_streams_are_independent_of_order():
    a = rng_for(7, 3).random(4)
    rng_for(7, 2).random(100)
    assert np.array_equal(a, rng_for(7, 3).random(4))
    assert not np.array_equal(a, rng_for(7, 4).random(4))


def test_config_validation():
    with pytest.raises(ValueError):
        PathSimConfig(eps=0.0)
    with pytest.raises(ValueError):
        PathSimConfig(dt=-1.0)


def test_simulate_paths_reproducible():
    a = simulate_paths(STABLE, 1.0, 2.0, COARSE, 50)
    b = simulate_paths(STABLE, 1.0, 2.0, COARSE, 50, threads=1)
    for p, q in zip(a, b):
        assert p.sigma_hat == q.sigma_hat and p.flags == q.flags
        assert np.array_equal(p.big_jumps, q.big_jumps)
    c = simulate_first_passage(STABLE, 1.0, 2.0, COARSE, rng_for(COARSE.seed, 3))
    assert c.sigma_hat == a[3].sigma_hat


def test_record_fields_consistent():
    for p in simulate_paths(STABLE, 1.0, 2.0, COARSE, 200):
        assert p.sigma_hat > 0
        assert p.forest_degree == max(1.0, p.max_jump)
        bj = p.big_jumps
        assert bj.shape[1] == 4
        assert np.all(bj[:, 1] > p.delta_record)
        assert np.all(np.diff(bj[:, 0]) >= 0)
        if len(bj):
            assert p.t_first_big == bj[0, 0]
            assert p.max_jump >= bj[:, 1].max()
            # running minimum after a jump cannot exceed the post-jump level
            assert np.all(bj[:, 3] <= bj[:, 2] + bj[:, 1] + 1e-12)
        if p.complete:
            assert p.sigma_hat < COARSE.horizon or not len(bj)


def test_single_big_jump_is_a_root():
    f = extract_big_node_forest(_record([[0.1, 3.0, 0.8, 0.0]]), 2.0)
    assert f.z0 == 1 and f.w_total == 1 and f.nodes == [(3.0, None)]


def test_child_of_a_big_node():
    # second jump occurs while the path stays above the first pre-jump level
    f = extract_big_node_forest(_record([[0.1, 3.0, 0.8, 1.5], [0.4, 2.5, 1.7, 0.0]]), 2.0)
    assert f.nodes == [(3.0, None), (2.5, 0)]
    assert f.offspring_counts.tolist() == [1, 0]


def test_two_roots_when_path_dips_below_first_pre_level():
    f = extract_big_node_forest(_record([[0.1, 3.0, 0.8, 0.5], [0.4, 2.5, 0.5, 0.0]]), 2.0)
    assert f.nodes == [(3.0, None), (2.5, None)]
    assert f.z0 == 2


def test_grandchild_and_sibling():
    rows = [[0.1, 3.0, 0.8, 2.0],   # root 0
            [0.2, 2.5, 2.2, 2.25],  # child of 0
            [0.3, 4.0, 2.3, 1.0],   # grandchild via 1
            [0.5, 2.2, 1.0, 0.0]]   # dipped below 2.2 and 2.3, above 0.8: child of 0
    f = extract_big_node_forest(_record(rows), 2.0)
    assert f.parents.tolist() == [-1, 0, 1, 0]
    assert f.generations.tolist() == [0, 1, 2, 1]


def test_small_recorded_jumps_are_skipped_but_lower_the_minimum():
    rows = [[0.1, 3.0, 0.8, 1.2], [0.2, 1.5, 1.0, 0.5], [0.3, 2.5, 0.6, 0.0]]
    f = extract_big_node_forest(_record(rows, delta_record=1.0), 2.0)
    assert f.parents.tolist() == [-1, -1]


def test_extraction_errors():
    with pytest.raises(ValueError):
        extract_big_node_forest(_record([[0.1, 3.0, 0.8, 0.0]], r=2.5), 2.0)
    with pytest.raises(ValueError):
        extract_big_node_forest(_record([[0.1, 3.0, 0.8, 0.0]], delta_record=2.5), 2.0)
    s = record_summary(_record([[0.1, 3.0, 0.8, 0.0]], r=2.5), 2.0)
    assert s["z0"] is None and "error" in s


def test_forest_requires_parent_order():
    with pytest.raises(ValueError):
        BigNodeForest(np.array([1.0, 2.0]), np.array([1, -1]))


def test_structural_fuzz():
    delta = 1.0
    recs = simulate_paths(STABLE, 0.5, 0.5, COARSE, 10_000)
    for p in recs:
        f = extract_big_node_forest(p, delta)
        n_big = int(np.count_nonzero(p.big_jumps[:, 1] > delta))
        assert f.w_total == n_big
        assert np.all(f.parents < np.arange(f.w_total))
        assert f.offspring_counts.sum() == f.w_total - f.z0
        assert (f.z0 == 0) == (f.w_total == 0)
        assert f.truncated == bool(p.flags & INCOMPLETE)
        # coarser threshold keeps a sub-forest
        g = extract_big_node_forest(p, 2.0)
        assert g.w_total <= f.w_total


@given(st.floats(0.3, 5.0), st.floats(0.0, 4.0))
def test_truncated_mechanism_matches_pruned_exponent(delta, lam):
    for m in (STABLE, SUB):
        t = make_truncated_mechanism(m, delta)
        ref = m.variant(delta).psi(lam)
        assert abs(t.psi(lam) - ref) <= 1e-10 * max(1.0, abs(ref))


def test_truncated_mechanism_without_small_jumps():
    m = BranchingMechanism(0.5, 1.0, AtomicMeasure(((3.0, 0.4),)))
    t = make_truncated_mechanism(m, 2.0)
    assert t.alpha == pytest.approx(0.5 + 1.2)
    assert t.pi.is_null()


def test_gw_empty_without_tail():
    f = sample_gw_forest(ATOMIC, 1.0, 3.0, COARSE)
    assert f.w_total == 0 and not f.truncated


def test_gw_eps_must_be_below_delta():
    with pytest.raises(ValueError):
        sample_gw_forest(STABLE, 0.05, 0.05, COARSE)


def test_gw_population_cap():
    fs = sample_gw_forests(STABLE, 1.0, 1.0, COARSE, 200, pop_cap=2)
    assert all(f.w_total <= 2 for f in fs)
    assert any(f.flags & PathFlag.POPULATION_CAP for f in fs)


def test_gw_subcritical_offspring_mean():
    delta = 1.0
    fs = sample_gw_forests(SUB, 1.0, delta, COARSE, 4000)
    kids = sum(int(f.offspring_counts.sum()) for f in fs)
    nodes = sum(f.w_total for f in fs)
    target = dl.xi_mean(SUB, delta)
    assert nodes > 500
    assert kids / nodes == pytest.approx(target, abs=4 * math.sqrt(target / nodes) + 0.03)


def test_atomic_mean_lifetime():
    # E sigma = r / psi'(0) = r / alpha
    recs = simulate_paths(ATOMIC, 1.0, math.inf, PathSimConfig(eps=0.05, dt=1e-3), 4000)
    s = np.array([p.sigma_hat for p in recs])
    assert all(p.complete for p in recs)
    assert s.mean() == pytest.approx(1.0 / ATOMIC.alpha, abs=4 * s.std() / math.sqrt(len(s)) + 0.01)


def test_sigma_laplace_stable():
    lam = 1.0
    cfg = PathSimConfig(eps=0.01, dt=2e-3, horizon=20.0)
    recs = simulate_paths(STABLE, 1.0, math.inf, cfg, 3000)
    e = np.array([math.exp(-lam * p.sigma_hat) for p in recs])
    target = math.exp(-STABLE.variant().invert(lam))
    assert e.mean() == pytest.approx(target, abs=4 * e.std() / math.sqrt(len(e)) + 0.01)


def test_discretisation_converges_when_halved():
    lam = 1.0
    target = math.exp(-ATOMIC.variant().invert(lam))
    errs = []
    for dt in (0.04, 0.02, 0.01):
        recs = simulate_paths(ATOMIC, 1.0, math.inf, PathSimConfig(eps=0.05, dt=dt, seed=11), 4000)
        errs.append(abs(np.mean([math.exp(-lam * p.sigma_hat) for p in recs]) - target))
    assert errs[-1] < 0.02
    assert errs[-1] <= errs[0] + 0.005


def test_tabulated_kernel_smoke():
    pi = TabulatedMeasure(lambda x: 0.5 * x ** -2.5, 0.01, 50.0)
    m = BranchingMechanism(0.5, 0.5, pi)
    recs = simulate_paths(m, 1.0, 2.0, COARSE, 200)
    assert all(p.sigma_hat > 0 for p in recs)
    assert all(np.all(p.big_jumps[:, 1] <= 50.0) for p in recs)
    assert any(len(p.big_jumps) for p in recs)


def test_max_big_jumps_sets_flag():
    cfg = PathSimConfig(eps=0.05, dt=0.01, max_big_jumps=1)
    recs = simulate_paths(STABLE, 1.0, 0.5, cfg, 300)
    for p in recs:
        assert len(p.big_jumps) <= 1
    assert any(p.flags & PathFlag.BIG_CAP for p in recs)


def test_max_steps_sets_truncated():
    cfg = PathSimConfig(eps=0.05, dt=0.01, max_steps=3)
    recs = simulate_paths(STABLE, 5.0, math.inf, cfg, 20)
    assert all(p.flags & PathFlag.TRUNCATED for p in recs)
