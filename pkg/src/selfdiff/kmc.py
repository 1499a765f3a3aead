"""Kinetic Monte Carlo baseline for the tagged particle's spread.

Simulates the exclusion dynamics on the periodic grid directly: one
exponential clock with mean 1/(count+1), a uniformly chosen agent (the
tagged particle or one environment particle), a jump direction from the
model, and rejection when the target is taken.  The tagged particle's
displacement accumulates unwrapped; the squared drift projection per
unit time estimates half the quadratic form the minimization route
computes variationally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import random_weight_matrix
from .objective import ObjectiveContext

__all__ = [
    "KMCParams",
    "TaggedTrajectoryStats",
    "simulate_one",
    "estimate",
]


@dataclass(frozen=True)
class KMCParams:
    """Run sizing: horizon, total budget, and the drift directions.

    The per-class trajectory count is ceil(total_budget / (count+1)),
    which keeps expected event work flat across particle counts.  All
    drifts are evaluated on the same trajectories.
    """

    final_time: float = 300.0
    total_budget: int = 30000
    drifts: tuple = ((1, 0),)

    def __post_init__(self):
        if not self.final_time > 0:
            raise ValueError("final time must be positive")
        if self.total_budget < 1:
            raise ValueError("total budget must be >= 1")
        drifts = tuple(tuple(float(c) for c in u) for u in self.drifts)
        if not drifts:
            raise ValueError("need at least one drift direction")
        if any(not all(math.isfinite(c) for c in u) for u in drifts):
            raise ValueError("non-finite drift")
        if len({len(u) for u in drifts}) != 1:
            raise ValueError("drifts must share one dimension")
        object.__setattr__(self, "drifts", drifts)

    def samples_for(self, n_occupied: int) -> int:
        return -(-self.total_budget // (n_occupied + 1))


@dataclass(frozen=True)
class TaggedTrajectoryStats:
    """Per-drift accumulators from one batch of trajectories."""

    alphas: tuple
    stderrs: tuple
    n_trajectories: int
    final_time: float
    attempted: int
    blocked: int
    drifts: tuple

    def __post_init__(self):
        assert all(a >= 0.0 for a in self.alphas)


class _DynTables:
    """Flat lookup tables driving the event loop, all plain lists."""

    def __init__(self, ctx: ObjectiveContext):
        self.n_sites = ctx.n_sites
        self.dim = ctx.grid.dim
        self.directions = [tuple(int(c) for c in v) for v in ctx.model.directions]
        cum = np.cumsum(ctx.probs)
        cum[-1] = 1.0
        self.cum_probs = cum
        self.target = [int(t) for t in ctx.target_idx]
        # environment move: site j jumps toward direction k onto entry
        # [k][j]; -1 marks the tagged particle's own site (always blocked)
        env = []
        for k in range(ctx.n_directions):
            col = ctx.shift_perm[k].tolist()
            col[int(ctx.const_idx[k])] = -1
            env.append(col)
        self.env_target = env
        # tagged relabel: a particle at site j lands on entry [k][j]; the
        # jump-target row is never read because the move requires it empty
        self.back = [ctx.proj_src[k].tolist() for k in range(ctx.n_directions)]


def _run_trajectory(
    tables: _DynTables, n_occupied: int, final_time: float, rng: np.random.Generator
):
    """One trajectory; returns (displacement, attempted, blocked, occupancy)."""
    n = tables.n_sites
    row = random_weight_matrix(n, n_occupied, 1, rng)[0]
    occ = row.astype(np.int64).tolist()
    particles = [j for j in range(n) if occ[j]]
    dim = tables.dim
    w = [0] * dim
    attempted = 0
    blocked = 0
    rate = n_occupied + 1
    draw = max(64, int(rate * final_time * 1.15) + 32)

    t = 0.0
    done = False
    while not done:
        waits = rng.exponential(1.0 / rate, draw).tolist()
        agents = rng.integers(0, rate, draw).tolist()
        dirs = np.searchsorted(tables.cum_probs, rng.random(draw), side="right").tolist()
        for ptr in range(draw):
            t += waits[ptr]
            if t > final_time:
                done = True
                break
            attempted += 1
            k = dirs[ptr]
            agent = agents[ptr]
            if agent == 0:
                if occ[tables.target[k]]:
                    blocked += 1
                    continue
                back = tables.back[k]
                moved = [back[p] for p in particles]
                for p in particles:
                    occ[p] = 0
                for p in moved:
                    occ[p] = 1
                particles = moved
                step = tables.directions[k]
                for i in range(dim):
                    w[i] += step[i]
            else:
                y = particles[agent - 1]
                z = tables.env_target[k][y]
                if z < 0 or occ[z]:
                    blocked += 1
                    continue
                occ[y] = 0
                occ[z] = 1
                particles[agent - 1] = z
    return w, attempted, blocked, occ


def simulate_one(
    ctx: ObjectiveContext, n_occupied: int, final_time: float, rng: np.random.Generator
):
    """Unwrapped tagged-particle displacement after one trajectory."""
    if not 0 <= n_occupied <= ctx.n_sites:
        raise ValueError("particle count out of range")
    if not final_time > 0:
        raise ValueError("final time must be positive")
    w, _, _, _ = _run_trajectory(_DynTables(ctx), n_occupied, final_time, rng)
    return tuple(w)


def estimate(
    ctx: ObjectiveContext,
    n_occupied: int,
    params: KMCParams,
    rng: np.random.Generator,
) -> TaggedTrajectoryStats:
    """Half-quadratic-form estimates for every drift at one count.

    Runs the per-count trajectory budget once and projects each
    trajectory's displacement on all drifts, so the drifts share noise.
    alpha approximates half of drift' D drift; stderr is the standard
    error of that mean over trajectories.
    """
    if not 0 <= n_occupied <= ctx.n_sites:
        raise ValueError("particle count out of range")
    drifts = [u for u in params.drifts]
    if any(len(u) != ctx.grid.dim for u in drifts):
        raise ValueError("drift dimension does not match the grid")
    tables = _DynTables(ctx)
    n_traj = params.samples_for(n_occupied)
    t_final = params.final_time

    sums = [0.0] * len(drifts)
    sumsq = [0.0] * len(drifts)
    attempted = 0
    blocked = 0
    for _ in range(n_traj):
        w, att, blk, _ = _run_trajectory(tables, n_occupied, t_final, rng)
        attempted += att
        blocked += blk
        for i, u in enumerate(drifts):
            x = sum(uc * wc for uc, wc in zip(u, w)) ** 2 / t_final
            sums[i] += x
            sumsq[i] += x * x
    alphas = []
    stderrs = []
    for i in range(len(drifts)):
        mean = sums[i] / n_traj
        if n_traj > 1:
            var = max(0.0, (sumsq[i] - n_traj * mean * mean) / (n_traj - 1))
            stderr = math.sqrt(var / n_traj)
        else:
            stderr = 0.0
        alphas.append(mean)
        stderrs.append(stderr)
    return TaggedTrajectoryStats(
        alphas=tuple(alphas),
        stderrs=tuple(stderrs),
        n_trajectories=n_traj,
        final_time=t_final,
        attempted=attempted,
        blocked=blocked,
        drifts=tuple(tuple(u) for u in drifts),
    )
