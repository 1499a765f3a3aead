"""Exact norms of low-rank functions via a train of site cores.

A sum of R rank-1 products over n binary sites is a tensor whose train
cores are diagonal R x R blocks.  Sweeping a QR factorization through
the train left to right keeps an orthogonal basis of at most min(2^j, R)
vectors after j sites, so the squared l2 norm over all 2^n occupancies
comes out exactly in O(n R^2) memory and O(n R^3) time; the diagonal
block structure makes the push of the triangular factor an elementwise
product rather than a matrix multiply.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TTChain",
    "assemble_chain",
    "from_function",
    "norm_sq_stack",
    "frobenius_norm_sq",
    "sweep_update_multiplies",
    "brute_force_norm_sq",
]


@dataclass(frozen=True)
class TTChain:
    """Per-site value pairs of a signed rank-R sum, train layout.

    pairs has shape (n_sites, R, 2): pairs[j, a, i] is term a's factor
    at site j when that site holds occupancy i.  Term signs are folded
    into the site-0 slice.  block_sparse records that every interior
    core is diagonal, which the norm sweep exploits.
    """

    pairs: np.ndarray
    block_sparse: bool = field(default=True)

    def __post_init__(self):
        arr = np.asarray(self.pairs, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 2 or arr.shape[0] < 1:
            raise ValueError("need a (n_sites, rank, 2) array")
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite chain entry")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "pairs", arr)

    @property
    def n_sites(self) -> int:
        return self.pairs.shape[0]

    @property
    def rank(self) -> int:
        return self.pairs.shape[1]

    def core(self, j: int) -> np.ndarray:
        """Dense train core at site j, shape (left, 2, right).

        Boundary cores have outer dimension 1; interior cores are the
        diagonal blocks diag(pairs[j, :, i]).  With a single site the
        lone core is (1, 2, 1) and already holds the summed value.
        """
        n, r = self.n_sites, self.rank
        if not 0 <= j < n:
            raise IndexError("core index out of range")
        if n == 1:
            return self.pairs[0].sum(axis=0).reshape(1, 2, 1)
        if j == 0:
            return self.pairs[0].T.reshape(1, 2, r)
        if j == n - 1:
            return self.pairs[j][:, :, None].copy()
        core = np.zeros((r, 2, r))
        for i in (0, 1):
            core[:, i, :] = np.diag(self.pairs[j, :, i])
        return core

    def value(self, occupancy) -> float:
        """Contract the chain against one 0/1 occupancy row."""
        occ = np.asarray(occupancy, dtype=np.int64)
        if occ.shape != (self.n_sites,):
            raise ValueError("occupancy does not match the chain")
        if self.rank == 0:
            return 0.0
        vals = self.pairs[np.arange(self.n_sites), :, occ]
        return float(vals.prod(axis=0).sum())


def assemble_chain(pairs_stack: np.ndarray, signs=None) -> TTChain:
    """Build a chain from stacked term pairs (rank, n_sites, 2).

    signs, when given, is a rank-length vector of +1/-1 folded into the
    site-0 slice so the chain represents the signed sum.
    """
    stack = np.asarray(pairs_stack, dtype=np.float64)
    if stack.ndim != 3 or stack.shape[2] != 2:
        raise ValueError("need a (rank, n_sites, 2) stack")
    chain = stack.transpose(1, 0, 2).copy()
    if signs is not None:
        s = np.asarray(signs, dtype=np.float64)
        if s.shape != (stack.shape[0],) or not np.all(np.abs(s) == 1.0):
            raise ValueError("signs must be a rank-length vector of +1/-1")
        chain[0] *= s[:, None]
    return TTChain(chain)


def from_function(func) -> TTChain:
    """Chain holding a LowRankFunction's sum of terms."""
    return assemble_chain(func.pairs_stack())


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise RuntimeError(f"norm sweep produced non-finite values ({where})")


def norm_sq_stack(stack: np.ndarray) -> np.ndarray:
    """Squared l2 norms over all occupancies for a batch of chains.

    stack: (batch, n_sites, rank, 2).  Returns (batch,) sums of the
    squared chain value over all 2^n_sites occupancy rows, computed by
    one shared left-to-right QR sweep.  All chains in the batch must
    share n_sites and rank; batching exists because the objective
    evaluates thousands of same-shape difference chains at once.
    """
    arr = np.asarray(stack, dtype=np.float64)
    if arr.ndim != 4 or arr.shape[3] != 2 or arr.shape[1] < 1:
        raise ValueError("need a (batch, n_sites, rank, 2) stack")
    batch, n, rho = arr.shape[0], arr.shape[1], arr.shape[2]
    if batch == 0:
        return np.zeros(0)
    if rho == 0:
        return np.zeros(batch)
    _check_finite(arr, "input")
    if n == 1:
        # single site: value at occupancy i is the rank sum
        vals = arr[:, 0].sum(axis=1)
        return (vals * vals).sum(axis=1)
    try:
        # site 0: rows are the two occupancy values per term
        r_fac = np.linalg.qr(arr[:, 0].transpose(0, 2, 1), mode="r")
        for j in range(1, n - 1):
            m = r_fac.shape[1]
            # diagonal core: pushing R through is elementwise on columns
            pushed = r_fac[:, :, None, :] * arr[:, j].transpose(0, 2, 1)[:, None, :, :]
            r_fac = np.linalg.qr(pushed.reshape(batch, 2 * m, rho), mode="r")
        tail = r_fac @ arr[:, n - 1]
    except np.linalg.LinAlgError as exc:  # pragma: no cover - qr rarely fails
        raise RuntimeError("QR factorization failed in the norm sweep") from exc
    out = (tail * tail).sum(axis=(1, 2))
    _check_finite(out, "output")
    return out


def frobenius_norm_sq(chain: TTChain) -> float:
    """Squared l2 norm of one chain over all occupancies."""
    return float(norm_sq_stack(chain.pairs[None])[0])


def sweep_update_multiplies(n_sites: int, rank: int) -> int:
    """Scalar multiplies spent pushing the triangular factor.

    Documents the elementwise push: each interior site costs 2 m rank
    products with m capped at rank, the final contraction 2 m rank.
    QR costs are excluded.
    """
    n, rho = int(n_sites), int(rank)
    if n < 2 or rho == 0:
        return 0
    total = 0
    m = min(2, rho)
    for _ in range(1, n - 1):
        total += 2 * m * rho
        m = min(2 * m, rho)
    total += 2 * m * rho
    return total


def brute_force_norm_sq(chain: TTChain, max_sites: int = 20) -> float:
    """Direct sum of squared values over all occupancies; small n only."""
    n = chain.n_sites
    if n > max_sites:
        raise ValueError(f"refusing brute force beyond {max_sites} sites")
    if chain.rank == 0:
        return 0.0
    base = chain.pairs[:, :, 0]
    step = chain.pairs[:, :, 1] - base
    total = 0.0
    chunk = 1 << min(n, 12)
    codes = np.arange(1 << n, dtype=np.uint64)
    shifts = np.arange(n, dtype=np.uint64)
    for start in range(0, 1 << n, chunk):
        block = codes[start:start + chunk]
        occ = ((block[:, None] >> shifts[None, :]) & np.uint64(1)).astype(np.float64)
        vals = base[None, :, :] + step[None, :, :] * occ[:, :, None]
        # vals: (rows, n, rank) factors; product over sites, sum over terms
        v = vals.prod(axis=1).sum(axis=1)
        total += float((v * v).sum())
    return total
