"""Low-rank separable functions of occupancy configurations.

A rank-1 function assigns each site a pair (value on empty, value on
occupied) and evaluates to the product of the selected entries; sums of
such products form the low-rank format the solver optimizes over.  The
transforms below (tagged-shift composition, neighbour-swap composition,
empty-site projection) all keep a rank-1 function rank-1, which is the
point of the format.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .lattice import Configuration, Grid, _l1

__all__ = [
    "Rank1Function",
    "Rank1Term",
    "LowRankFunction",
    "evaluate",
    "batch_values",
    "compose_tagged_shift",
    "compose_swap",
    "constant",
    "project_empty",
    "write_table",
    "read_table",
]


def _as_pairs(pairs) -> np.ndarray:
    arr = np.array(pairs, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 1:
        raise ValueError("need an (n_sites, 2) array of value pairs")
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite value pair")
    return arr


class Rank1Function:
    """Product over sites of per-site (empty value, occupied value) pairs.

    A scalar weight passed at construction is folded into the first
    site's pair, so every stored instance is a plain product.
    """

    __slots__ = ("pairs",)

    def __init__(self, pairs, weight: float = 1.0):
        arr = _as_pairs(pairs)
        weight = float(weight)
        if not np.isfinite(weight):
            raise ValueError("non-finite weight")
        if weight != 1.0:
            arr[0] *= weight
        arr.setflags(write=False)
        self.pairs = arr

    @property
    def n_sites(self) -> int:
        return self.pairs.shape[0]

    def value(self, config: Configuration) -> float:
        if config.n_sites != self.n_sites:
            raise ValueError("configuration does not match the function's sites")
        occ = config.occupancy().astype(np.int64)
        return float(np.prod(self.pairs[np.arange(self.n_sites), occ]))

    def with_pair(self, site_index: int, empty_value: float, occupied_value: float) -> "Rank1Function":
        arr = self.pairs.copy()
        arr[site_index] = (empty_value, occupied_value)
        return Rank1Function(arr)

    def __repr__(self) -> str:
        return f"Rank1Function(n_sites={self.n_sites})"


@dataclass(frozen=True)
class Rank1Term:
    """A rank-1 function together with its sign in a signed sum."""

    function: Rank1Function
    sign: int = 1

    def __post_init__(self):
        if self.sign not in (-1, 1):
            raise ValueError("sign must be +1 or -1")


class LowRankFunction:
    """Sum of rank-1 functions over one common site set."""

    __slots__ = ("terms", "n_sites")

    def __init__(self, terms: Sequence[Rank1Function] = (), n_sites: int | None = None):
        terms = tuple(terms)
        if terms:
            n = terms[0].n_sites
            if any(t.n_sites != n for t in terms):
                raise ValueError("terms must share one site set")
            if n_sites is not None and int(n_sites) != n:
                raise ValueError("n_sites disagrees with the terms")
            n_sites = n
        elif n_sites is None:
            raise ValueError("an empty function needs an explicit n_sites")
        self.terms = terms
        self.n_sites = int(n_sites)

    @property
    def rank(self) -> int:
        return len(self.terms)

    def value(self, config: Configuration) -> float:
        total = 0.0
        for t in self.terms:
            total += t.value(config)
        return total

    def plus(self, term: Rank1Function) -> "LowRankFunction":
        return LowRankFunction(self.terms + (term,), self.n_sites)

    def pairs_stack(self) -> np.ndarray:
        """All terms' pairs as one (rank, n_sites, 2) array."""
        if not self.terms:
            return np.zeros((0, self.n_sites, 2))
        return np.stack([t.pairs for t in self.terms])

    def __repr__(self) -> str:
        return f"LowRankFunction(rank={self.rank}, n_sites={self.n_sites})"


def evaluate(func, config: Configuration) -> float:
    """Value of a low-rank (or rank-1) function on one configuration."""
    return float(func.value(config))


def batch_values(pairs_stack: np.ndarray, occupancy: np.ndarray) -> np.ndarray:
    """Summed values of stacked rank-1 functions on occupancy rows.

    pairs_stack: (rank, n, 2); occupancy: (..., n) with 0/1 entries.
    Returns values with shape occupancy.shape[:-1].  Memory grows with
    rank * rows * n; callers chunk large batches.
    """
    occ = np.asarray(occupancy)
    lead = occ.shape[:-1]
    n = occ.shape[-1]
    rank = pairs_stack.shape[0]
    if pairs_stack.shape[1] != n:
        raise ValueError("site counts differ")
    if rank == 0:
        return np.zeros(lead)
    flat = occ.reshape(-1, n)
    base = pairs_stack[:, :, 0]
    step = pairs_stack[:, :, 1] - base
    vals = base[:, None, :] + step[:, None, :] * flat[None, :, :]
    return vals.prod(axis=2).sum(axis=0).reshape(lead)


def compose_tagged_shift(term: Rank1Function, step, grid: Grid) -> Rank1Function:
    """Rank-1 form of config -> term(tagged_shift(config, step)).

    After the shift no site of the new configuration reads the step's
    target site, and the site opposite the step is always read empty; so
    the target site's pair collapses to that constant and every other
    pair is gathered from the site one step back.
    """
    if term.n_sites != grid.n_sites:
        raise ValueError("term does not match grid")
    step = tuple(int(c) for c in step)
    if all(c == 0 for c in step):
        raise ValueError("zero step")
    if _l1(step) > grid.radius:
        raise ValueError(f"step {step} exceeds grid radius {grid.radius}")
    target = grid.site_index(grid.wrap(step))
    const = float(term.pairs[grid.site_index(grid.wrap(tuple(-c for c in step))), 0])
    src = np.zeros(grid.n_sites, dtype=np.int64)
    for j, site in enumerate(grid.sites):
        if j == target:
            continue
        src[j] = grid.site_index(grid.wrap(tuple(a - b for a, b in zip(site, step))))
    arr = term.pairs[src].copy()
    arr[target] = (const, const)
    return Rank1Function(arr)


def compose_swap(term: Rank1Function, site, direction, grid: Grid) -> Rank1Function:
    """Rank-1 form of config -> term(swap_exchange(config, site, direction))."""
    if term.n_sites != grid.n_sites:
        raise ValueError("term does not match grid")
    y = tuple(int(c) for c in site)
    v = tuple(int(c) for c in direction)
    if _l1(v) > grid.radius:
        raise ValueError(f"direction {v} exceeds grid radius {grid.radius}")
    iy = grid.site_index(y)
    target = tuple(a + b for a, b in zip(y, v))
    if all(c == 0 for c in target):
        raise ValueError("pair crosses the tagged origin")
    iz = grid.site_index(grid.wrap(target))
    arr = term.pairs.copy()
    arr[[iy, iz]] = arr[[iz, iy]]
    return Rank1Function(arr)


def constant(value: float, n_sites: int) -> Rank1Function:
    """Rank-1 function equal to `value` on every configuration."""
    arr = np.ones((int(n_sites), 2))
    arr[0] = (value, value)
    return Rank1Function(arr)


def project_empty(term: Rank1Function, site_index: int) -> Rank1Function:
    """Zero the function on configurations where the given site is occupied."""
    if not 0 <= site_index < term.n_sites:
        raise ValueError("site index out of range")
    arr = term.pairs.copy()
    arr[site_index, 1] = 0.0
    return Rank1Function(arr)


_TABLE_HEADER = "term,site,value_empty,value_occupied"


def write_table(func: LowRankFunction, path, preamble=()) -> None:
    """Write the flat (term, site, pair) table; floats keep full precision.

    Extra comment lines from `preamble` let callers embed their resolved
    settings; the reader skips them.
    """
    lines = [f"# {line}" for line in preamble]
    lines.append(f"# sites={func.n_sites} terms={func.rank}")
    lines.append(_TABLE_HEADER)
    for t_index, term in enumerate(func.terms):
        for s_index in range(func.n_sites):
            e, o = term.pairs[s_index]
            lines.append(f"{t_index},{s_index},{float(e)!r},{float(o)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_table(path) -> LowRankFunction:
    """Read a flat table written by `write_table`; exact round trip."""
    lines = Path(path).read_text(encoding="ascii").splitlines()
    n_sites = None
    n_terms = None
    rows = []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line[1:].lstrip().startswith("sites="):
                for tok in line[1:].split():
                    key, _, val = tok.partition("=")
                    if key == "sites":
                        n_sites = int(val)
                    elif key == "terms":
                        n_terms = int(val)
            continue
        if line == _TABLE_HEADER:
            continue
        t, s, e, o = line.split(",")
        rows.append((int(t), int(s), float(e), float(o)))
    if n_sites is None or n_terms is None:
        raise ValueError("table is missing its size header")
    data = np.zeros((n_terms, n_sites, 2))
    seen = np.zeros((n_terms, n_sites), dtype=bool)
    for t, s, e, o in rows:
        if not (0 <= t < n_terms and 0 <= s < n_sites):
            raise ValueError("table row out of range")
        if seen[t, s]:
            raise ValueError("duplicate table row")
        seen[t, s] = True
        data[t, s] = (e, o)
    if not seen.all():
        raise ValueError("table is missing rows")
    return LowRankFunction([Rank1Function(data[t]) for t in range(n_terms)], n_sites=n_sites)
