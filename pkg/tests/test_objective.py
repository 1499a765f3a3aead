import math

import numpy as np
import pytest

from selfdiff.lattice import Configuration, Grid, JumpModel, enumerate_weight_class
from selfdiff.lowrank import LowRankFunction, Rank1Function
from selfdiff.objective import (
    ObjectiveContext,
    QuadCoeffs,
    TableFunction,
    class_mean_exact,
    functional_value,
    functional_value_many,
    functional_value_table,
    integrand,
    integrand_batch,
    quad_from_values,
    site_quadratic,
)
from selfdiff.rng import stream

from reference import psi_from_callable, ref_functional, ref_summand


@pytest.fixture(scope="module")
def ctx10():
    return ObjectiveContext(Grid(1, 2), JumpModel.nearest_neighbor(dim=2), (1.0, 0.0))


def dict_view(func, grid):
    sites = [tuple(s) for s in grid.sites]

    def fn(occ):
        vec = np.array([1 if s in occ else 0 for s in sites], dtype=np.uint8)
        return func.value(Configuration.from_occupancy(vec))

    return psi_from_callable(grid.radius, fn)


def random_low_rank(rank, n, rng):
    return LowRankFunction([Rank1Function(rng.random((n, 2)) + 0.25) for _ in range(rank)])


def test_zero_function_value_is_64(ctx10):
    zero = LowRankFunction((), n_sites=8)
    assert functional_value(ctx10, zero) == pytest.approx(64.0, rel=1e-12)
    assert functional_value(ctx10, zero, normalized=True) == pytest.approx(0.25, rel=1e-12)


def test_empty_summand_is_half(ctx10):
    zero = LowRankFunction((), n_sites=8)
    assert integrand(ctx10, zero, Configuration.from_bits(0, 8)) == 0.5


def test_functional_matches_reference(ctx10):
    rng = stream(41, "obj-ref")
    for rank in (1, 3):
        f = random_low_rank(rank, 8, rng)
        want = ref_functional(dict_view(f, ctx10.grid), (1.0, 0.0), 1)
        got = functional_value(ctx10, f)
        assert got == pytest.approx(want, rel=1e-11)


def test_functional_other_drift():
    grid = Grid(1, 2)
    model = JumpModel.nearest_neighbor(dim=2)
    ctx = ObjectiveContext(grid, model, (1.0, 1.0))
    rng = stream(43, "obj-u11")
    f = random_low_rank(2, 8, rng)
    want = ref_functional(dict_view(f, grid), (1.0, 1.0), 1)
    assert functional_value(ctx, f) == pytest.approx(want, rel=1e-11)


def test_integrand_matches_reference(ctx10):
    rng = stream(47, "integrand")
    f = random_low_rank(2, 8, rng)
    psi = dict_view(f, ctx10.grid)
    sites = [tuple(s) for s in ctx10.grid.sites]
    for bits in rng.integers(0, 256, size=25):
        cfg = Configuration.from_bits(int(bits), 8)
        occ = frozenset(sites[j] for j in cfg.occupied_indices())
        assert integrand(ctx10, f, cfg) == pytest.approx(
            ref_summand(psi, occ, (1.0, 0.0), 1), rel=1e-11
        )


def test_integrand_batch_matches_loop(ctx10):
    rng = stream(53, "batch")
    f = random_low_rank(3, 8, rng)
    occs = rng.integers(0, 2, size=(64, 8)).astype(np.uint8)
    got = integrand_batch(ctx10, f.pairs_stack(), occs)
    want = [integrand(ctx10, f, Configuration.from_occupancy(row)) for row in occs]
    assert np.allclose(got, want, rtol=1e-11)


def test_table_route_matches_chain_route(ctx10):
    rng = stream(59, "table-route")
    f = random_low_rank(2, 8, rng)
    values = np.array(
        [f.value(Configuration.from_bits(b, 8)) for b in range(256)]
    )
    table = TableFunction(values, 8)
    a = functional_value(ctx10, f)
    b = functional_value_table(ctx10, table)
    assert a == pytest.approx(b, rel=1e-11)


def test_partition_identity(ctx10):
    rng = stream(61, "partition")
    f = random_low_rank(2, 8, rng)
    total = sum(
        math.comb(8, ell) * class_mean_exact(ctx10, f, ell) for ell in range(9)
    )
    assert total == pytest.approx(functional_value(ctx10, f), rel=1e-11)


def test_gauge_invariance(ctx10):
    rng = stream(67, "gauge")
    values = rng.normal(size=256)
    a = functional_value_table(ctx10, TableFunction(values, 8))
    b = functional_value_table(ctx10, TableFunction(values + 3.7, 8))
    assert a == pytest.approx(b, rel=1e-11)


def test_functional_value_many_matches_single(ctx10):
    rng = stream(71, "many")
    stacks = rng.random((5, 2, 8, 2)) + 0.25
    got = functional_value_many(ctx10, stacks)
    for i in range(5):
        f = LowRankFunction([Rank1Function(p) for p in stacks[i]])
        assert got[i] == pytest.approx(functional_value(ctx10, f), rel=1e-11)


def test_quad_recovery_by_hand():
    # g(a, b) = a^2 + 2 b^2 + 3 a b + 4 a + 5 b + 6 on the probe nodes
    def g(a, b):
        return a * a + 2 * b * b + 3 * a * b + 4 * a + 5 * b + 6

    quad = quad_from_values(
        g(0, 0), g(1, 0), g(0, 1), g(2, 0), g(0, 2), g(1, 1)
    )
    assert (quad.quad_occ, quad.quad_emp, quad.cross) == (1.0, 2.0, 3.0)
    assert (quad.lin_occ, quad.lin_emp, quad.const) == (4.0, 5.0, 6.0)
    assert quad.predict(1.5, -2.0) == pytest.approx(g(1.5, -2.0), rel=1e-12)


def test_site_quadratic_predicts_functional(ctx10):
    rng = stream(73, "sitequad")
    base = LowRankFunction((), n_sites=8)
    cand = rng.random((8, 2)) + 0.25
    for site in (0, 3, 7):
        quad = site_quadratic(ctx10, base, cand, site)
        for occ_v, emp_v in ((0.3, 1.2), (-0.7, 0.4)):
            probe = cand.copy()
            probe[site] = (emp_v, occ_v)
            f = base.plus(Rank1Function(probe))
            assert quad.predict(occ_v, emp_v) == pytest.approx(
                functional_value(ctx10, f), rel=1e-9
            )


def test_class_mean_against_reference(ctx10):
    rng = stream(79, "classmean")
    f = random_low_rank(2, 8, rng)
    psi = dict_view(f, ctx10.grid)
    for ell in (0, 3, 8):
        want = ref_functional(psi, (1.0, 0.0), 1, n_occupied=ell, mean=True)
        assert class_mean_exact(ctx10, f, ell) == pytest.approx(want, rel=1e-11)


def test_context_validation():
    grid = Grid(1, 2)
    model = JumpModel.nearest_neighbor(dim=2)
    with pytest.raises(ValueError):
        ObjectiveContext(grid, model, (1.0, 0.0, 0.0))
    small = JumpModel(
        directions=((2, 0), (-2, 0)), probabilities=(0.5, 0.5)
    )
    with pytest.raises(ValueError):
        ObjectiveContext(grid, small, (1.0, 0.0))
