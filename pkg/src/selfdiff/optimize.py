"""Minimization of the functional over low-rank trial functions.

Two layers: alternating least squares over one rank-1 term's site pairs
(each step an exact one-site quadratic solved as a 2x2 linear system),
and a greedy outer loop adding one optimized rank-1 term at a time.  A
dense oracle minimizer over the full value table is included for small
grids; it is the accuracy yardstick for the low-rank route.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import spsolve

from .lowrank import LowRankFunction, Rank1Function
from .objective import (
    ObjectiveContext,
    QuadCoeffs,
    TableFunction,
    functional_value,
    site_quadratic,
)

__all__ = [
    "ALSConfig",
    "SolveReport",
    "IndefiniteSystemError",
    "solve_2x2",
    "als_rank1",
    "successive_minimize",
    "dense_minimize",
    "zero_term",
]

_EIG_TOL = 1e-13


class IndefiniteSystemError(ValueError):
    """One-site system is not safely positive definite.

    Carries both eigenvalues so callers can log or decide; the standard
    response is to skip the site update and keep the previous pair.
    """

    def __init__(self, eig_min: float, eig_max: float):
        super().__init__(
            f"one-site system not positive definite "
            f"(eigenvalues {eig_min:.3e}, {eig_max:.3e})"
        )
        self.eig_min = float(eig_min)
        self.eig_max = float(eig_max)


@dataclass(frozen=True)
class ALSConfig:
    """Knobs for one alternating-least-squares pass.

    initializer 'uniform' draws the candidate's pairs iid uniform on
    [0,1]; 'given' starts from initial_pairs, which doubles as the
    warm-start hook (feed pairs lifted from a coarser solve).
    """

    tolerance: float = 1e-12
    max_site_updates: int = 420
    initializer: str = "uniform"
    initial_pairs: np.ndarray | None = None

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_site_updates < 1:
            raise ValueError("need at least one site update")
        if self.initializer not in ("uniform", "given"):
            raise ValueError("initializer must be 'uniform' or 'given'")
        if self.initializer == "given":
            if self.initial_pairs is None:
                raise ValueError("'given' initializer needs initial_pairs")
        elif self.initial_pairs is not None:
            raise ValueError("initial_pairs only belongs with 'given'")


@dataclass(frozen=True)
class SolveReport:
    """What one rank-1 pass did: value trace, skip count, wall time."""

    final_value: float
    sweep_values: tuple = field(default_factory=tuple)
    indefinite_count: int = 0
    site_updates: int = 0
    wall_time: float = 0.0


def solve_2x2(quad: QuadCoeffs, eig_tolerance: float = _EIG_TOL):
    """Minimizer (occupied_value, empty_value) of the one-site quadratic.

    Raises IndefiniteSystemError unless the 2x2 matrix is safely
    positive definite; rounding can push an eigenvalue negative, and a
    saddle point is not a minimum.
    """
    mat = quad.matrix()
    eigs = np.linalg.eigvalsh(mat)
    eig_min, eig_max = float(eigs[0]), float(eigs[1])
    if eig_min <= eig_tolerance * max(1.0, abs(eig_max)):
        raise IndefiniteSystemError(eig_min, eig_max)
    sol = np.linalg.solve(mat, quad.rhs())
    return float(sol[0]), float(sol[1])


def zero_term(n_sites: int) -> Rank1Function:
    """Rank-1 term that is identically zero."""
    arr = np.ones((n_sites, 2))
    arr[0] = (0.0, 0.0)
    return Rank1Function(arr)


def als_rank1(
    ctx: ObjectiveContext,
    base: LowRankFunction,
    cfg: ALSConfig,
    rng: np.random.Generator,
):
    """Optimize one added rank-1 term by alternating site updates.

    Sites are visited in enumeration order; each visit rebuilds the
    exact one-site quadratic and jumps to its minimum when the system is
    positive definite, otherwise the pair is left alone and the skip
    counted.  Sweeps stop when the value's relative change falls under
    the tolerance or the update budget runs out.  If the optimized term
    fails to improve on the base value, the zero term is returned, so
    adding the result never hurts.
    """
    n = ctx.n_sites
    if cfg.max_site_updates < n:
        raise ValueError("update budget smaller than one sweep")
    start = time.perf_counter()
    if cfg.initializer == "given":
        cand = np.array(cfg.initial_pairs, dtype=np.float64)
        if cand.shape != (n, 2) or not np.all(np.isfinite(cand)):
            raise ValueError("initial_pairs must be a finite (n_sites, 2) array")
    else:
        cand = rng.random((n, 2))

    base_value = functional_value(ctx, base)
    value = functional_value(ctx, base.plus(Rank1Function(cand.copy())))
    sweep_values = []
    indefinite = 0
    updates = 0
    while updates < cfg.max_site_updates:
        for s in range(n):
            if updates >= cfg.max_site_updates:
                break
            updates += 1
            quad = site_quadratic(ctx, base, cand, s)
            try:
                occ_val, emp_val = solve_2x2(quad)
            except IndefiniteSystemError:
                indefinite += 1
                continue
            cand[s] = (emp_val, occ_val)
        new_value = functional_value(ctx, base.plus(Rank1Function(cand.copy())))
        sweep_values.append(new_value)
        done = abs(value - new_value) <= cfg.tolerance * abs(new_value)
        value = new_value
        if done:
            break

    if value > base_value:
        # candidate never caught up with the zero increment
        term = zero_term(n)
        value = base_value
    else:
        term = Rank1Function(cand)
    report = SolveReport(
        final_value=value,
        sweep_values=tuple(sweep_values),
        indefinite_count=indefinite,
        site_updates=updates,
        wall_time=time.perf_counter() - start,
    )
    return term, report


def successive_minimize(
    ctx: ObjectiveContext,
    rank: int,
    cfg: ALSConfig,
    rng: np.random.Generator,
):
    """Greedy rank build: optimize and append one term at a time.

    Each candidate starts fresh from the shared generator, so the whole
    build is reproducible from one seed.  The zero-increment fallback in
    the inner pass makes the per-rank value sequence nonincreasing.
    """
    if rank < 1:
        raise ValueError("rank must be at least 1")
    func = LowRankFunction((), n_sites=ctx.n_sites)
    reports = []
    for _ in range(rank):
        term, report = als_rank1(ctx, func, cfg, rng)
        func = func.plus(term)
        reports.append(report)
    return func, reports


def _transform_terms(ctx: ObjectiveContext):
    """All (weight, constant, from_code, to_code) squared-difference terms.

    Enumerates the functional literally over every occupancy code:
    tagged jumps contribute on codes with the target empty, exchanges on
    every code.  Codes are bit patterns in site order.
    """
    n = ctx.n_sites
    codes = np.arange(1 << n, dtype=np.int64)
    occ = (codes[:, None] >> np.arange(n)[None, :]) & 1
    pow2 = (np.int64(1) << np.arange(n)).astype(np.int64)

    weights, consts, src, dst = [], [], [], []
    for k in range(ctx.n_directions):
        legal = occ[:, ctx.target_idx[k]] == 0
        shifted = occ[:, ctx.shift_perm[k]].copy()
        shifted[:, ctx.shift_zero[k]] = 0
        to_code = shifted @ pow2
        weights.append(np.full(int(legal.sum()), ctx.probs[k]))
        consts.append(np.full(int(legal.sum()), ctx.drift_dot[k]))
        src.append(codes[legal])
        dst.append(to_code[legal])
        for i in range(n - 1):
            iy, iz = int(ctx.swap_iy[k, i]), int(ctx.swap_iz[k, i])
            differ = occ[:, iy] != occ[:, iz]
            flip = np.int64((1 << iy) | (1 << iz))
            to_code = np.where(differ, codes ^ flip, codes)
            weights.append(np.full(codes.shape[0], 0.5 * ctx.probs[k]))
            consts.append(np.zeros(codes.shape[0]))
            src.append(codes)
            dst.append(to_code)
    return (
        np.concatenate(weights),
        np.concatenate(consts),
        np.concatenate(src),
        np.concatenate(dst),
    )


def dense_minimize(ctx: ObjectiveContext):
    """Exact minimizer of the functional over all value tables.

    Returns (table, minimal value).  The quadratic is invariant under
    adding a constant per particle-number class, so the normal equations
    are singular; one table entry per class is pinned to zero to make
    the solution unique.  Falls back to a minimum-norm least-squares
    solve if the pinned sparse system still fails.  Capped at 12 sites.
    """
    n = ctx.n_sites
    if n > 12:
        raise ValueError("dense minimization capped at 12 sites")
    size = 1 << n
    w, c, i_idx, j_idx = _transform_terms(ctx)

    # fixed-point terms (to == from) carry no table dependence
    moving = i_idx != j_idx
    w_m, c_m, i_m, j_m = w[moving], c[moving], i_idx[moving], j_idx[moving]

    rows = np.concatenate([i_m, j_m, i_m, j_m])
    cols = np.concatenate([i_m, j_m, j_m, i_m])
    vals = np.concatenate([w_m, w_m, -w_m, -w_m])
    normal = coo_matrix((vals, (rows, cols)), shape=(size, size)).tocsr()
    rhs = np.zeros(size)
    np.add.at(rhs, i_m, w_m * c_m)
    np.add.at(rhs, j_m, -w_m * c_m)

    # pin the lowest code of each particle-number class
    pinned = np.array([(1 << ell) - 1 for ell in range(n + 1)], dtype=np.int64)
    free = np.ones(size, dtype=bool)
    free[pinned] = False
    table = np.zeros(size)
    reduced = normal[free][:, free].tocsc()
    try:
        sol = spsolve(reduced, rhs[free])
        if not np.all(np.isfinite(sol)):
            raise ValueError("non-finite sparse solution")
        table[free] = sol
    except Exception:
        sol, *_ = np.linalg.lstsq(normal.toarray(), rhs, rcond=None)
        table = sol

    # every term, fixed points included, enters the value
    diffs = c + table[j_idx] - table[i_idx]
    value = float(np.sum(w * diffs * diffs))
    assert np.isfinite(value) and value >= 0.0
    return TableFunction(table, n), value
