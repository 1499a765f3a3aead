"""Sampling estimators for the per-class functional of a fixed function.

The class mean of the summand can be estimated naively, by uniform
draws from the weight class, or with strata defined by the occupancy
pattern of the jump-target sites.  Stratifying removes the variance the
indicator terms contribute: within a stratum every configuration agrees
on which tagged jumps are open.  Stratum weights are binomial counts
combined in log space so huge classes cannot overflow.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .lattice import random_weight_matrix
from .objective import ObjectiveContext, integrand_batch

__all__ = [
    "StratifiedPlan",
    "naive_mc",
    "stratified_mc",
    "sample_fixed_weight",
    "log_weighted_sum",
]


def sample_fixed_weight(n: int, weight: int, rng: np.random.Generator) -> np.ndarray:
    """One uniform 0/1 pattern of length n with exactly `weight` ones."""
    if not 0 <= weight <= n:
        raise ValueError("weight out of range")
    if n == 0:
        return np.zeros(0, dtype=np.uint8)
    return random_weight_matrix(n, weight, 1, rng)[0]


def log_weighted_sum(log_weights, values, log_normalizer=None) -> float:
    """Sum of exp(log_weights) * values divided by exp(log_normalizer).

    With no normalizer the weights are normalized to total one, making
    the result a weighted mean.  Weights may be huge in log scale; the
    computation shifts by the maximum so nothing overflows.  A -inf
    log weight means a zero weight.
    """
    lw = np.asarray(log_weights, dtype=np.float64)
    vals = np.asarray(values, dtype=np.float64)
    if lw.shape != vals.shape or lw.ndim != 1 or lw.size == 0:
        raise ValueError("need matching nonempty 1-d arrays")
    if np.any(np.isnan(lw)) or np.any(lw == np.inf) or not np.all(np.isfinite(vals)):
        raise ValueError("weights must be finite or -inf, values finite")
    shift = float(lw.max())
    if shift == -np.inf:
        raise ValueError("all weights are zero")
    scaled = np.exp(lw - shift)
    if log_normalizer is None:
        log_normalizer = shift + math.log(float(scaled.sum()))
    return float((scaled * vals).sum() * math.exp(shift - float(log_normalizer)))


def _pairs_stack(func) -> np.ndarray:
    stack = getattr(func, "pairs_stack", None)
    if stack is None:
        raise TypeError("estimators need a low-rank function (pairs_stack)")
    return func.pairs_stack()


def naive_mc(
    ctx: ObjectiveContext,
    func,
    n_occupied: int,
    n_samples: int,
    rng: np.random.Generator,
):
    """Plain class mean over uniform draws from the weight class.

    Returns (estimate, trace); trace rows are (samples so far, running
    mean) at doubling checkpoints plus the final count.
    """
    n = ctx.n_sites
    if not 0 <= n_occupied <= n:
        raise ValueError("particle count out of range")
    if n_samples < 1:
        raise ValueError("need at least one sample")
    stack = _pairs_stack(func)
    occ = random_weight_matrix(n, n_occupied, n_samples, rng)
    vals = integrand_batch(ctx, stack, occ)
    sums = np.cumsum(vals)
    trace = []
    count = 1
    while count < n_samples:
        trace.append((count, float(sums[count - 1] / count)))
        count *= 2
    estimate = float(sums[-1] / n_samples)
    trace.append((n_samples, estimate))
    return estimate, trace


@dataclass(frozen=True)
class StratifiedPlan:
    """Strata over the jump-target sites for one particle count.

    One stratum per occupancy pattern of the target sites, kept in
    binary pattern order.  A stratum is admissible when the remaining
    sites can absorb the leftover particles; admissible strata carry
    log binomial weights and either a full-enumeration flag or the
    per-stratum sample budget.  The integer stratum weights partition
    the class size exactly, which is asserted at build time.
    """

    n_sites: int
    n_occupied: int
    target_idx: tuple
    rest_idx: tuple
    patterns: np.ndarray
    remainders: np.ndarray
    log_weights: np.ndarray
    enumerate_all: np.ndarray
    budget: int

    @classmethod
    def build(cls, ctx: ObjectiveContext, n_occupied: int, budget: int):
        n = ctx.n_sites
        if not 0 <= n_occupied <= n:
            raise ValueError("particle count out of range")
        if budget < 1:
            raise ValueError("per-stratum budget must be >= 1")
        targets = [int(t) for t in ctx.target_idx]
        if len(set(targets)) != len(targets):
            raise ValueError("jump-target sites must be distinct")
        k = len(targets)
        rest = tuple(j for j in range(n) if j not in set(targets))
        n_rest = n - k

        patterns, remainders, log_w, enum_all = [], [], [], []
        total = 0
        for code in range(1 << k):
            pat = [(code >> j) & 1 for j in range(k)]
            n2 = n_occupied - sum(pat)
            if not 0 <= n2 <= n_rest:
                continue
            count = math.comb(n_rest, n2)
            total += count
            patterns.append(pat)
            remainders.append(n2)
            log_w.append(float(gammaln(n_rest + 1) - gammaln(n2 + 1) - gammaln(n_rest - n2 + 1)))
            enum_all.append(count <= budget)
        # the integer weights must tile the class exactly
        assert total == math.comb(n, n_occupied)
        if not patterns:
            raise AssertionError("no admissible stratum")
        return cls(
            n_sites=n,
            n_occupied=n_occupied,
            target_idx=tuple(targets),
            rest_idx=rest,
            patterns=np.array(patterns, dtype=np.uint8),
            remainders=np.array(remainders, dtype=np.int64),
            log_weights=np.array(log_w),
            enumerate_all=np.array(enum_all, dtype=bool),
            budget=int(budget),
        )

    @property
    def n_strata(self) -> int:
        return self.patterns.shape[0]

    def stratum_rows(self, index: int, rng: np.random.Generator) -> np.ndarray:
        """Occupancy rows for one stratum: all of them, or budget draws."""
        n2 = int(self.remainders[index])
        n_rest = len(self.rest_idx)
        if self.enumerate_all[index]:
            count = math.comb(n_rest, n2)
            rest_rows = np.zeros((count, n_rest), dtype=np.uint8)
            for r, combo in enumerate(itertools.combinations(range(n_rest), n2)):
                rest_rows[r, list(combo)] = 1
        else:
            rest_rows = random_weight_matrix(n_rest, n2, self.budget, rng)
        rows = np.zeros((rest_rows.shape[0], self.n_sites), dtype=np.uint8)
        rows[:, list(self.target_idx)] = self.patterns[index][None, :]
        rows[:, list(self.rest_idx)] = rest_rows
        return rows


def stratified_mc(
    ctx: ObjectiveContext,
    func,
    n_occupied: int,
    budget: int,
    rng: np.random.Generator,
):
    """Stratified class mean: exact weights, per-stratum sampling.

    budget is the per-stratum sample count; strata no bigger than the
    budget are enumerated outright, so a generous budget turns the
    estimate into the exact class mean.  Returns (estimate, trace) with
    trace rows (evaluations so far, running estimate); the running
    estimate divides by the full class size throughout, so it only
    becomes unbiased once every stratum is in.
    """
    stack = _pairs_stack(func)
    plan = StratifiedPlan.build(ctx, n_occupied, budget)
    streams = rng.spawn(plan.n_strata)
    log_class = float(
        gammaln(plan.n_sites + 1)
        - gammaln(n_occupied + 1)
        - gammaln(plan.n_sites - n_occupied + 1)
    )
    means = np.zeros(plan.n_strata)
    trace = []
    evaluations = 0
    for s in range(plan.n_strata):
        rows = plan.stratum_rows(s, streams[s])
        vals = integrand_batch(ctx, stack, rows)
        means[s] = float(vals.mean())
        evaluations += rows.shape[0]
        partial = log_weighted_sum(
            plan.log_weights[: s + 1], means[: s + 1], log_normalizer=log_class
        )
        trace.append((evaluations, partial))
    estimate = log_weighted_sum(plan.log_weights, means, log_normalizer=log_class)
    return estimate, trace
