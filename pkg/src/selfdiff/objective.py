"""The quadratic functional whose minimum gives the self-diffusion form.

For a drift direction u the functional sums, over all occupancies and
all jump directions, the squared increment a tagged-particle jump gives
a trial function plus the squared increments of environment exchanges.
Three evaluation routes live here:

  * an exact hypercube sum via the train norm kernel (fast path, used
    by the optimizer),
  * a literal double sum over an explicit value table (oracle path,
    small site counts only),
  * the per-configuration summand, scalar and vectorized, which the
    class-restricted estimators average.

The per-class functional is the class mean of the summand; summing
class means weighted by class sizes recovers the hypercube total.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import (
    Configuration,
    Grid,
    JumpModel,
    enumerate_weight_class,
    swap_exchange,
    tagged_shift,
)
from .lowrank import LowRankFunction, batch_values
from .ttnorm import norm_sq_stack

__all__ = [
    "ObjectiveContext",
    "TableFunction",
    "QuadCoeffs",
    "functional_value",
    "functional_value_many",
    "functional_value_table",
    "integrand",
    "integrand_batch",
    "class_mean_exact",
    "quad_from_values",
    "site_quadratic",
    "PROBE_NODES",
]

_CLASS_ENUM_CAP = 200_000


@dataclass(frozen=True)
class TableFunction:
    """Trial function stored as one value per occupancy code."""

    values: np.ndarray
    n_sites: int

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.shape != (1 << self.n_sites,):
            raise ValueError("table length must be 2**n_sites")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def value(self, config: Configuration) -> float:
        if config.n_sites != self.n_sites:
            raise ValueError("configuration does not match the table")
        return float(self.values[config.bits])


class ObjectiveContext:
    """Grid, jump model, and drift direction with precomputed index maps.

    The maps cover every transformed read the functional needs: for each
    jump direction the shift composition on value pairs, the shift
    permutation on occupancies, and the exchange pair list; they are
    what make the batched evaluation routes pure gathers.
    """

    def __init__(self, grid: Grid, model: JumpModel, drift):
        if model.dim != grid.dim:
            raise ValueError("model and grid dimensions differ")
        if model.reach > grid.radius:
            raise ValueError(
                f"jump reach {model.reach} exceeds grid radius {grid.radius}"
            )
        u = np.asarray(drift, dtype=np.float64)
        if u.shape != (grid.dim,) or not np.all(np.isfinite(u)):
            raise ValueError("drift must be a finite length-d vector")
        u = u.copy()
        u.setflags(write=False)
        self.grid = grid
        self.model = model
        self.drift = u

        n = grid.n_sites
        k_count = model.n_directions
        self.n_sites = n
        self.n_directions = k_count
        self.probs = np.array(model.probabilities, dtype=np.float64)
        self.drift_dot = np.array(
            [float(np.dot(u, v)) for v in model.directions], dtype=np.float64
        )
        # target_idx[k]: site the tagged particle jumps onto; const_idx[k]:
        # site read as a constant after the relabeling
        self.target_idx = np.array(
            [grid.site_index(v) for v in model.directions], dtype=np.int64
        )
        self.const_idx = np.array(
            [grid.site_index(tuple(-c for c in v)) for v in model.directions],
            dtype=np.int64,
        )

        # pair-gather maps for the shift composition: row j reads the site
        # one jump back; the target row is patched to a constant afterwards
        proj_src = np.zeros((k_count, n), dtype=np.int64)
        for k, v in enumerate(model.directions):
            for j, site in enumerate(grid.sites):
                if j == self.target_idx[k]:
                    proj_src[k, j] = self.const_idx[k]
                else:
                    proj_src[k, j] = grid.site_index(
                        grid.wrap(tuple(a - b for a, b in zip(site, v)))
                    )
        self.proj_src = proj_src

        # occupancy-gather maps for the same shift, used by the integrand
        shift_perm = np.zeros((k_count, n), dtype=np.int64)
        shift_zero = np.zeros(k_count, dtype=np.int64)
        for k, v in enumerate(model.directions):
            perm, zero_pos = grid.shift_maps(v)
            shift_perm[k] = perm
            shift_zero[k] = zero_pos
        self.shift_perm = shift_perm
        self.shift_zero = shift_zero

        # exchange pairs (iy, iz) per direction, skipping the pair that
        # would cross the tagged origin; enumeration order of y
        swap_iy = np.zeros((k_count, n - 1), dtype=np.int64)
        swap_iz = np.zeros((k_count, n - 1), dtype=np.int64)
        for k, v in enumerate(model.directions):
            col = 0
            for iy, y in enumerate(grid.sites):
                tgt = tuple(a + b for a, b in zip(y, v))
                if all(c == 0 for c in tgt):
                    continue
                swap_iy[k, col] = iy
                swap_iz[k, col] = grid.site_index(grid.wrap(tgt))
                col += 1
            assert col == n - 1
        self.swap_iy = swap_iy
        self.swap_iz = swap_iz

        # one gather matrix turning an occupancy row into every transformed
        # row the summand reads: identity, K shifts, K*(n-1) exchanges
        n_cols = 1 + k_count + k_count * (n - 1)
        gather = np.tile(np.arange(n, dtype=np.int64), (n_cols, 1))
        zero_mask = np.zeros((n_cols, n), dtype=bool)
        for k in range(k_count):
            gather[1 + k] = shift_perm[k]
            zero_mask[1 + k, shift_zero[k]] = True
        col = 1 + k_count
        swap_col = np.zeros((k_count, n - 1), dtype=np.int64)
        for k in range(k_count):
            for i in range(n - 1):
                row = gather[col]
                row[swap_iy[k, i]] = swap_iz[k, i]
                row[swap_iz[k, i]] = swap_iy[k, i]
                swap_col[k, i] = col
                col += 1
        self.gather = gather
        self.gather_zero_mask = zero_mask
        self.swap_col = swap_col

    def __repr__(self) -> str:
        return (
            f"ObjectiveContext(n_sites={self.n_sites}, "
            f"n_directions={self.n_directions}, drift={self.drift.tolist()})"
        )


def _chain_layout(stacks: np.ndarray) -> np.ndarray:
    # (batch, rank, n, 2) term-major to (batch, n, rank, 2) site-major
    return np.ascontiguousarray(stacks.transpose(0, 2, 1, 3))


def functional_value_many(ctx: ObjectiveContext, stacks: np.ndarray) -> np.ndarray:
    """Exact functional for a batch of trial functions, one QR sweep group.

    stacks: (batch, rank, n_sites, 2) value pairs per term.  Returns the
    (batch,) functional values.  All chains of one kind share a shape,
    so the whole batch reduces to two norm-kernel calls.
    """
    arr = np.asarray(stacks, dtype=np.float64)
    if arr.ndim != 4 or arr.shape[3] != 2 or arr.shape[2] != ctx.n_sites:
        raise ValueError("need a (batch, rank, n_sites, 2) stack")
    batch, rank, n = arr.shape[0], arr.shape[1], arr.shape[2]
    if batch == 0:
        return np.zeros(0)
    k_count = ctx.n_directions

    site_major = _chain_layout(arr)
    neg = site_major.copy()
    neg[:, 0, :, :] *= -1.0

    # jump chains: constant drift term + shifted terms - original terms,
    # all squashed onto configurations with the target site empty
    proj = np.zeros((batch, k_count, n, 2 * rank + 1, 2))
    for k in range(k_count):
        chain = proj[:, k]
        # term column 0 is the constant drift summand, folded into site 0
        chain[:, :, 0, :] = 1.0
        chain[:, 0, 0, :] = ctx.drift_dot[k]
        if rank:
            shifted = arr[:, :, ctx.proj_src[k], :]
            shifted[:, :, ctx.target_idx[k], 1] = shifted[:, :, ctx.target_idx[k], 0]
            chain[:, :, 1 : rank + 1, :] = shifted.transpose(0, 2, 1, 3)
            chain[:, :, rank + 1 :, :] = neg
        chain[:, ctx.target_idx[k], :, 1] = 0.0
    proj_norms = norm_sq_stack(proj.reshape(batch * k_count, n, 2 * rank + 1, 2))
    proj_norms = proj_norms.reshape(batch, k_count)

    # exchange chains: swapped terms - original terms, full hypercube
    if rank:
        n_pairs = n - 1
        swaps = np.empty((batch, k_count, n_pairs, n, 2 * rank, 2))
        swaps[:, :, :, :, rank:, :] = neg[:, None, None, :, :, :]
        rows = np.arange(n, dtype=np.int64)
        for k in range(k_count):
            for i in range(n_pairs):
                perm = rows.copy()
                iy, iz = ctx.swap_iy[k, i], ctx.swap_iz[k, i]
                perm[iy], perm[iz] = perm[iz], perm[iy]
                swaps[:, k, i, :, :rank, :] = site_major[:, perm, :, :]
        swap_norms = norm_sq_stack(
            swaps.reshape(batch * k_count * n_pairs, n, 2 * rank, 2)
        )
        swap_totals = swap_norms.reshape(batch, k_count, n_pairs).sum(axis=2)
    else:
        swap_totals = np.zeros((batch, k_count))

    return (ctx.probs[None, :] * (proj_norms + 0.5 * swap_totals)).sum(axis=1)


def functional_value(
    ctx: ObjectiveContext, func: LowRankFunction, normalized: bool = False
) -> float:
    """Exact hypercube value of the functional for a low-rank function.

    normalized divides by 2**n_sites; same minimizers, tamer magnitudes.
    """
    if func.n_sites != ctx.n_sites:
        raise ValueError("function does not match the context's grid")
    out = float(functional_value_many(ctx, func.pairs_stack()[None])[0])
    if normalized:
        out /= float(2**ctx.n_sites)
    return out


def integrand(ctx: ObjectiveContext, func, config: Configuration) -> float:
    """Per-configuration summand, evaluated through lattice transforms.

    func is anything exposing value(Configuration); the class mean of
    this summand over a weight class is the per-class functional.
    """
    grid = ctx.grid
    base = func.value(config)
    total = 0.0
    for k, v in enumerate(ctx.model.directions):
        if config.bit(ctx.target_idx[k]) == 0:
            moved = tagged_shift(config, v, grid)
            # grouping keeps the difference exactly zero on fixed points
            diff = ctx.drift_dot[k] + (func.value(moved) - base)
            total += ctx.probs[k] * diff * diff
        acc = 0.0
        for i in range(ctx.n_sites - 1):
            y = grid.sites[ctx.swap_iy[k, i]]
            swapped = swap_exchange(config, y, v, grid)
            diff = func.value(swapped) - base
            acc += diff * diff
        total += 0.5 * ctx.probs[k] * acc
    return total


def integrand_batch(
    ctx: ObjectiveContext, pairs_stack: np.ndarray, occupancy: np.ndarray
) -> np.ndarray:
    """Vectorized summand for a low-rank function on occupancy rows.

    pairs_stack: (rank, n, 2); occupancy: (rows, n) with 0/1 entries.
    Equals integrand row by row; chunked so the intermediate stays small.
    """
    stack = np.asarray(pairs_stack, dtype=np.float64)
    occ = np.ascontiguousarray(occupancy, dtype=np.uint8)
    if occ.ndim != 2 or occ.shape[1] != ctx.n_sites:
        raise ValueError("need (rows, n_sites) occupancies")
    rows = occ.shape[0]
    if rows == 0:
        return np.zeros(0)
    rank = stack.shape[0]
    n_cols = ctx.gather.shape[0]
    k_count = ctx.n_directions

    out = np.empty(rows)
    chunk = max(1, 4_000_000 // (n_cols * ctx.n_sites * max(rank, 1)))
    for start in range(0, rows, chunk):
        block = occ[start : start + chunk]
        b = block.shape[0]
        trans = block[:, ctx.gather]
        trans[:, ctx.gather_zero_mask] = 0
        vals = batch_values(stack, trans.reshape(b * n_cols, -1)).reshape(b, n_cols)
        base = vals[:, 0]
        acc = np.zeros(b)
        for k in range(k_count):
            empty = 1.0 - block[:, ctx.target_idx[k]].astype(np.float64)
            diff = ctx.drift_dot[k] + (vals[:, 1 + k] - base)
            acc += ctx.probs[k] * empty * diff * diff
            sdiff = vals[:, ctx.swap_col[k]] - base[:, None]
            acc += 0.5 * ctx.probs[k] * (sdiff * sdiff).sum(axis=1)
        out[start : start + b] = acc
    return out


def functional_value_table(
    ctx: ObjectiveContext, table, normalized: bool = False
) -> float:
    """Oracle: literal double sum of the functional over every occupancy.

    table is a TableFunction or a flat array of 2**n_sites values.  Kept
    deliberately loop-based and train-free; capped at 20 sites.
    """
    if ctx.n_sites > 20:
        raise ValueError("direct summation capped at 20 sites")
    if not isinstance(table, TableFunction):
        table = TableFunction(np.asarray(table, dtype=np.float64), ctx.n_sites)
    total = 0.0
    for bits in range(1 << ctx.n_sites):
        total += integrand(ctx, table, Configuration.from_bits(bits, ctx.n_sites))
    if normalized:
        total /= float(2**ctx.n_sites)
    return total


def class_mean_exact(ctx: ObjectiveContext, func, n_occupied: int) -> float:
    """Per-class functional by full enumeration of the weight class."""
    size = math.comb(ctx.n_sites, n_occupied)
    if size > _CLASS_ENUM_CAP:
        raise ValueError(
            f"class has {size} configurations; use the sampling estimators"
        )
    total = 0.0
    for config in enumerate_weight_class(ctx.grid, n_occupied):
        total += integrand(ctx, func, config)
    return total / size


# six probe nodes (occupied_value, empty_value) for the one-site quadratic
PROBE_NODES = ((0, 0), (1, 0), (0, 1), (2, 0), (0, 2), (1, 1))


@dataclass(frozen=True)
class QuadCoeffs:
    """Coefficients of the functional restricted to one site's pair.

    With a the occupied value and b the empty value the restriction is
    quad_occ a^2 + quad_emp b^2 + cross ab + lin_occ a + lin_emp b + const.
    Definiteness of the 2x2 system is checked by callers, not assumed.
    """

    quad_occ: float
    quad_emp: float
    cross: float
    lin_occ: float
    lin_emp: float
    const: float

    def matrix(self) -> np.ndarray:
        return np.array(
            [[2.0 * self.quad_occ, self.cross], [self.cross, 2.0 * self.quad_emp]]
        )

    def rhs(self) -> np.ndarray:
        return np.array([-self.lin_occ, -self.lin_emp])

    def predict(self, occupied_value: float, empty_value: float) -> float:
        a, b = float(occupied_value), float(empty_value)
        return (
            self.quad_occ * a * a
            + self.quad_emp * b * b
            + self.cross * a * b
            + self.lin_occ * a
            + self.lin_emp * b
            + self.const
        )


def quad_from_values(g00, g10, g01, g20, g02, g11) -> QuadCoeffs:
    """Exact quadratic through the six probe nodes.

    g_ab is the value with the occupied entry set to a and the empty
    entry to b; axis-aligned nodes give closed-form recovery.
    """
    const = float(g00)
    quad_occ = (g20 - 2.0 * g10 + g00) / 2.0
    quad_emp = (g02 - 2.0 * g01 + g00) / 2.0
    lin_occ = g10 - quad_occ - const
    lin_emp = g01 - quad_emp - const
    cross = g11 - quad_occ - quad_emp - lin_occ - lin_emp - const
    return QuadCoeffs(
        float(quad_occ), float(quad_emp), float(cross),
        float(lin_occ), float(lin_emp), const,
    )


def site_quadratic(
    ctx: ObjectiveContext,
    base: LowRankFunction,
    candidate_pairs: np.ndarray,
    site_index: int,
) -> QuadCoeffs:
    """Functional as a quadratic in one site's pair of the candidate term.

    base holds the frozen terms; candidate_pairs (n, 2) is the rank-1
    term being optimized.  All six probes run as one batched evaluation.
    """
    if not 0 <= site_index < ctx.n_sites:
        raise ValueError("site index out of range")
    cand = np.asarray(candidate_pairs, dtype=np.float64)
    if cand.shape != (ctx.n_sites, 2):
        raise ValueError("candidate must be an (n_sites, 2) pair array")
    base_stack = base.pairs_stack()
    rank = base_stack.shape[0] + 1
    stacks = np.empty((len(PROBE_NODES), rank, ctx.n_sites, 2))
    stacks[:, : rank - 1] = base_stack[None]
    stacks[:, rank - 1] = cand[None]
    for p, (a, b) in enumerate(PROBE_NODES):
        stacks[p, rank - 1, site_index] = (b, a)
    g = functional_value_many(ctx, stacks)
    if not np.all(np.isfinite(g)):
        raise RuntimeError("non-finite probe evaluations")
    return quad_from_values(*g)
