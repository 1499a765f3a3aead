import math

import numpy as np
import pytest

from selfdiff.estimator import (
    StratifiedPlan,
    log_weighted_sum,
    naive_mc,
    sample_fixed_weight,
    stratified_mc,
)
from selfdiff.lattice import Grid, JumpModel
from selfdiff.lowrank import LowRankFunction, Rank1Function
from selfdiff.objective import ObjectiveContext, class_mean_exact
from selfdiff.rng import stream


@pytest.fixture(scope="module")
def ctx10():
    return ObjectiveContext(Grid(1, 2), JumpModel.nearest_neighbor(dim=2), (1.0, 0.0))


@pytest.fixture(scope="module")
def func8():
    rng = stream(21, "est-func")
    return LowRankFunction(
        [Rank1Function(rng.random((8, 2)) + 0.25) for _ in range(2)]
    )


def test_sample_fixed_weight():
    rng = stream(22, "fixed")
    for n, w in ((8, 0), (8, 3), (8, 8)):
        row = sample_fixed_weight(n, w, rng)
        assert row.shape == (n,)
        assert int(row.sum()) == w
    with pytest.raises(ValueError):
        sample_fixed_weight(8, 9, rng)


def test_log_weighted_sum_by_hand():
    # weights 1, 2, 5 and values 3, 4, 6: mean (3 + 8 + 30) / 8 = 5.125
    lw = np.log([1.0, 2.0, 5.0])
    got = log_weighted_sum(lw, [3.0, 4.0, 6.0])
    assert got == pytest.approx(5.125, rel=1e-14)
    # explicit normalizer: divide by 4 instead of the weight total
    got = log_weighted_sum(lw, [3.0, 4.0, 6.0], log_normalizer=math.log(4.0))
    assert got == pytest.approx(41.0 / 4.0, rel=1e-14)


def test_log_weighted_sum_handles_huge_and_zero():
    lw = np.array([5000.0, 5000.0 + math.log(3.0), -np.inf])
    got = log_weighted_sum(lw, [1.0, 2.0, 99.0])
    assert got == pytest.approx(7.0 / 4.0, rel=1e-13)
    with pytest.raises(ValueError):
        log_weighted_sum([-np.inf, -np.inf], [1.0, 2.0])
    with pytest.raises(ValueError):
        log_weighted_sum([0.0, np.inf], [1.0, 2.0])
    with pytest.raises(ValueError):
        log_weighted_sum([0.0], [np.nan])


def test_plan_weights_tile_the_class(ctx10):
    for ell in range(9):
        plan = StratifiedPlan.build(ctx10, ell, budget=4)
        counts = np.round(np.exp(plan.log_weights)).astype(int)
        assert int(counts.sum()) == math.comb(8, ell)
        assert plan.n_strata <= 16


def test_stratum_rows_enumeration(ctx10):
    plan = StratifiedPlan.build(ctx10, 3, budget=10**6)
    rng = stream(23, "rows")
    seen = set()
    total = 0
    for s in range(plan.n_strata):
        rows = plan.stratum_rows(s, rng)
        assert np.all(rows.sum(axis=1) == 3)
        pat = plan.patterns[s]
        assert np.all(rows[:, list(plan.target_idx)] == pat[None, :])
        total += rows.shape[0]
        seen.update(tuple(r) for r in rows)
    assert total == math.comb(8, 3)
    assert len(seen) == total


def test_stratum_rows_sampling_budget(ctx10):
    plan = StratifiedPlan.build(ctx10, 4, budget=3)
    rng = stream(24, "budget")
    for s in range(plan.n_strata):
        rows = plan.stratum_rows(s, rng)
        n2 = int(plan.remainders[s])
        full = math.comb(len(plan.rest_idx), n2)
        assert rows.shape[0] == (full if full <= 3 else 3)


def test_stratified_exact_with_generous_budget(ctx10, func8):
    for ell in (0, 2, 5, 8):
        exact = class_mean_exact(ctx10, func8, ell)
        got, trace = stratified_mc(ctx10, func8, ell, 10**6, stream(25, "exact", ell))
        assert got == pytest.approx(exact, rel=1e-12)
        assert trace[-1][1] == got


def test_naive_mc_unbiased(ctx10, func8):
    ell = 4
    exact = class_mean_exact(ctx10, func8, ell)
    reps = 80
    means = [
        naive_mc(ctx10, func8, ell, 200, stream(26, "naive", r))[0]
        for r in range(reps)
    ]
    overall = float(np.mean(means))
    spread = float(np.std(means, ddof=1)) / math.sqrt(reps)
    assert abs(overall - exact) <= 4.0 * spread


def test_stratified_unbiased_small_budget(ctx10, func8):
    # budget 3 forces real sampling in the big strata
    ell = 4
    exact = class_mean_exact(ctx10, func8, ell)
    reps = 80
    means = [
        stratified_mc(ctx10, func8, ell, 3, stream(27, "strat", r))[0]
        for r in range(reps)
    ]
    overall = float(np.mean(means))
    spread = float(np.std(means, ddof=1)) / math.sqrt(reps)
    assert abs(overall - exact) <= 4.0 * spread


def test_traces_report_evaluations(ctx10, func8):
    _, trace = naive_mc(ctx10, func8, 4, 100, stream(28, "trace"))
    counts = [c for c, _ in trace]
    assert counts == sorted(counts)
    assert counts[-1] == 100
    _, strace = stratified_mc(ctx10, func8, 4, 5, stream(29, "strace"))
    scounts = [c for c, _ in strace]
    assert scounts == sorted(scounts)
    assert len(scounts) == len(set(scounts))


def test_estimators_deterministic(ctx10, func8):
    a = stratified_mc(ctx10, func8, 4, 3, stream(30, "det"))
    b = stratified_mc(ctx10, func8, 4, 3, stream(30, "det"))
    assert a[0] == b[0]
    assert a[1] == b[1]
    c = naive_mc(ctx10, func8, 4, 64, stream(31, "det2"))
    d = naive_mc(ctx10, func8, 4, 64, stream(31, "det2"))
    assert c[0] == d[0]


def test_estimator_argument_errors(ctx10, func8):
    rng = stream(32, "err")
    with pytest.raises(ValueError):
        naive_mc(ctx10, func8, 9, 10, rng)
    with pytest.raises(ValueError):
        naive_mc(ctx10, func8, 4, 0, rng)
    with pytest.raises(ValueError):
        StratifiedPlan.build(ctx10, 4, budget=0)
    with pytest.raises(ValueError):
        StratifiedPlan.build(ctx10, -1, budget=3)
