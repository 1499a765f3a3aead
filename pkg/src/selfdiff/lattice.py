"""Periodic lattice geometry and hard-core occupancy configurations.

The tagged particle sits at the origin, which is removed from the site
set; environment particles occupy the remaining torus sites, at most one
per site.  Everything downstream relies on one fixed site enumeration,
so configurations are exposed both as immutable values and as plain
occupancy arrays.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "JumpModel",
    "Grid",
    "Configuration",
    "tagged_shift",
    "swap_exchange",
    "enumerate_weight_class",
    "sample_weight_class",
    "random_weight_matrix",
]


def _l1(v) -> int:
    return int(sum(abs(int(c)) for c in v))


@dataclass(frozen=True)
class JumpModel:
    """Symmetric finite-range jump kernel: directions and their probabilities."""

    directions: tuple[tuple[int, ...], ...]
    probabilities: tuple[float, ...]

    def __post_init__(self):
        dirs = tuple(tuple(int(c) for c in v) for v in self.directions)
        probs = tuple(float(p) for p in self.probabilities)
        object.__setattr__(self, "directions", dirs)
        object.__setattr__(self, "probabilities", probs)
        if not dirs:
            raise ValueError("jump model needs at least one direction")
        if len(probs) != len(dirs):
            raise ValueError("need exactly one probability per direction")
        dim = len(dirs[0])
        if any(len(v) != dim for v in dirs):
            raise ValueError("directions must share one dimension")
        if any(all(c == 0 for c in v) for v in dirs):
            raise ValueError("zero direction not allowed")
        if len(set(dirs)) != len(dirs):
            raise ValueError("duplicate direction")
        if any(not math.isfinite(p) or p <= 0 for p in probs):
            raise ValueError("probabilities must be positive")
        if abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to 1")
        table = dict(zip(dirs, probs))
        for v, p in table.items():
            q = table.get(tuple(-c for c in v))
            if q is None or abs(q - p) > 1e-12:
                raise ValueError("kernel must be symmetric: p(v) == p(-v)")

    @property
    def dim(self) -> int:
        return len(self.directions[0])

    @property
    def n_directions(self) -> int:
        return len(self.directions)

    @property
    def reach(self) -> int:
        """Largest taxicab length among the directions."""
        return max(_l1(v) for v in self.directions)

    @classmethod
    def nearest_neighbor(cls, dim: int = 2) -> "JumpModel":
        dirs = []
        for axis in range(dim):
            for sign in (1, -1):
                v = [0] * dim
                v[axis] = sign
                dirs.append(tuple(v))
        p = 1.0 / len(dirs)
        return cls(tuple(dirs), tuple([p] * len(dirs)))


class Grid:
    """Finite torus with the origin removed.

    Sites are enumerated once, lexicographically with the last coordinate
    varying fastest and the origin skipped; all array-facing code relies
    on that order.  The standard construction is the odd box of side
    2*radius + 1 centred at the origin.  `Grid.torus` additionally allows
    even or unequal side lengths; that variant is experimental in the
    sense that only the odd centred box is backed by reference results,
    but every operation is defined the same way.
    """

    def __init__(self, radius: int, dim: int):
        radius = int(radius)
        dim = int(dim)
        if radius < 1:
            raise ValueError("radius must be >= 1")
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self._init_from_sides(tuple([2 * radius + 1] * dim))

    @classmethod
    def torus(cls, sides) -> "Grid":
        obj = cls.__new__(cls)
        obj._init_from_sides(tuple(int(s) for s in sides))
        return obj

    def _init_from_sides(self, sides: tuple[int, ...]) -> None:
        if not sides:
            raise ValueError("need at least one side length")
        if any(s < 3 for s in sides):
            raise ValueError("side lengths must be >= 3")
        self.sides = sides
        self.dim = len(sides)
        self._lo = tuple(-(s // 2) for s in sides)
        ranges = [range(-(s // 2), (s - 1) // 2 + 1) for s in sides]
        origin = (0,) * self.dim
        sites = [p for p in itertools.product(*ranges) if p != origin]
        self.sites = tuple(sites)
        self.n_sites = len(sites)
        self.site_array = np.array(sites, dtype=np.int64)
        self.site_array.setflags(write=False)
        self._index = {p: j for j, p in enumerate(sites)}
        # largest taxicab step for which wrapping can never land on the origin
        # away from the excluded site (checked again inside shift_maps)
        self.radius = min((s - 1) // 2 for s in sides)
        self._shift_cache: dict = {}

    @property
    def is_standard(self) -> bool:
        """True for the odd centred box (all sides equal and odd)."""
        s = self.sides[0]
        return s % 2 == 1 and all(t == s for t in self.sides)

    def wrap(self, point) -> tuple[int, ...]:
        """Canonical torus representative of an integer point."""
        return tuple(
            (int(c) - lo) % s + lo for c, lo, s in zip(point, self._lo, self.sides)
        )

    def site_index(self, site) -> int:
        j = self._index.get(tuple(int(c) for c in site))
        if j is None:
            raise ValueError(f"not a site: {tuple(site)}")
        return j

    def shift_maps(self, step) -> tuple[np.ndarray, int]:
        """Occupancy gather for a tagged move by `step`.

        Returns (perm, zero_pos): the relabelled configuration reads its
        bit j from old position perm[j], except position zero_pos (the
        site opposite the step), which is forced empty.
        """
        step = tuple(int(c) for c in step)
        cached = self._shift_cache.get(step)
        if cached is not None:
            return cached
        if all(c == 0 for c in step):
            raise ValueError("zero step")
        if _l1(step) > self.radius:
            raise ValueError(f"step {step} exceeds grid radius {self.radius}")
        origin = (0,) * self.dim
        zero_pos = self.site_index(self.wrap(tuple(-c for c in step)))
        perm = np.zeros(self.n_sites, dtype=np.int64)
        for j, site in enumerate(self.sites):
            if j == zero_pos:
                continue  # forced empty, gather source unused
            tgt = self.wrap(tuple(a + b for a, b in zip(site, step)))
            if tgt == origin:
                raise AssertionError("wrap hit the origin away from the excluded site")
            perm[j] = self._index[tgt]
        perm.setflags(write=False)
        cached = (perm, zero_pos)
        self._shift_cache[step] = cached
        return cached

    def __eq__(self, other) -> bool:
        return isinstance(other, Grid) and self.sides == other.sides

    def __hash__(self) -> int:
        return hash(self.sides)

    def __repr__(self) -> str:
        return f"Grid(sides={self.sides})"


@dataclass(frozen=True)
class Configuration:
    """Occupancy bit vector over a grid's sites, with its particle count."""

    bits: int
    n_sites: int
    n_occupied: int

    def __post_init__(self):
        if self.n_sites < 1:
            raise ValueError("configuration needs at least one site")
        if not 0 <= self.bits < (1 << self.n_sites):
            raise ValueError("bit pattern out of range for the site count")
        if int(self.bits).bit_count() != self.n_occupied:
            raise ValueError("cached particle count disagrees with the bits")

    @classmethod
    def from_bits(cls, bits: int, n_sites: int) -> "Configuration":
        return cls(int(bits), int(n_sites), int(bits).bit_count())

    @classmethod
    def from_occupied(cls, grid: Grid, occupied) -> "Configuration":
        bits = 0
        for site in occupied:
            j = grid.site_index(site)
            if bits >> j & 1:
                raise ValueError(f"site occupied twice: {tuple(site)}")
            bits |= 1 << j
        return cls.from_bits(bits, grid.n_sites)

    @classmethod
    def from_occupancy(cls, occupancy) -> "Configuration":
        occ = np.asarray(occupancy)
        if occ.ndim != 1:
            raise ValueError("occupancy must be one row")
        vals = set(np.unique(occ).tolist())
        if not vals <= {0, 1}:
            raise ValueError("occupancy entries must be 0 or 1")
        bits = 0
        for j, b in enumerate(occ.tolist()):
            if b:
                bits |= 1 << j
        return cls.from_bits(bits, occ.shape[0])

    @classmethod
    def from_string(cls, text: str) -> "Configuration":
        if not text or set(text) - {"0", "1"}:
            raise ValueError("configuration string must be nonempty 0/1 characters")
        bits = 0
        for j, ch in enumerate(text):
            if ch == "1":
                bits |= 1 << j
        return cls.from_bits(bits, len(text))

    @classmethod
    def empty(cls, grid: Grid) -> "Configuration":
        return cls(0, grid.n_sites, 0)

    @classmethod
    def full(cls, grid: Grid) -> "Configuration":
        return cls((1 << grid.n_sites) - 1, grid.n_sites, grid.n_sites)

    def bit(self, index: int) -> int:
        if not 0 <= index < self.n_sites:
            raise ValueError("site index out of range")
        return self.bits >> index & 1

    def occupancy(self) -> np.ndarray:
        out = np.zeros(self.n_sites, dtype=np.uint8)
        bits = self.bits
        j = 0
        while bits:
            if bits & 1:
                out[j] = 1
            bits >>= 1
            j += 1
        return out

    def occupied_indices(self) -> tuple[int, ...]:
        return tuple(j for j in range(self.n_sites) if self.bits >> j & 1)

    def to_string(self) -> str:
        return "".join("1" if self.bits >> j & 1 else "0" for j in range(self.n_sites))


def tagged_shift(config: Configuration, step, grid: Grid) -> Configuration:
    """Relabel the environment after a tagged move by `step`.

    The new configuration reads site s from old site s + step (wrapped);
    the site opposite the step is forced empty, because that is where the
    tagged particle came from.  The relabelling is applied literally even
    when the move's target site was occupied (an illegal jump); in that
    case the particle at the target disappears and the count drops, which
    callers guard against by checking legality first.
    """
    if config.n_sites != grid.n_sites:
        raise ValueError("configuration does not match grid")
    perm, zero_pos = grid.shift_maps(step)
    src = perm.tolist()
    old = config.bits
    bits = 0
    for j in range(grid.n_sites):
        if j != zero_pos and old >> src[j] & 1:
            bits |= 1 << j
    return Configuration.from_bits(bits, grid.n_sites)


def swap_exchange(config: Configuration, site, direction, grid: Grid) -> Configuration:
    """Exchange the occupancies of `site` and its wrapped neighbour along `direction`."""
    if config.n_sites != grid.n_sites:
        raise ValueError("configuration does not match grid")
    y = tuple(int(c) for c in site)
    v = tuple(int(c) for c in direction)
    if _l1(v) > grid.radius:
        raise ValueError(f"direction {v} exceeds grid radius {grid.radius}")
    iy = grid.site_index(y)
    target = tuple(a + b for a, b in zip(y, v))
    if all(c == 0 for c in target):
        raise ValueError("pair crosses the tagged origin")
    iz = grid.site_index(grid.wrap(target))
    bits = config.bits
    if (bits >> iy & 1) != (bits >> iz & 1):
        bits ^= (1 << iy) | (1 << iz)
    return Configuration(bits, config.n_sites, config.n_occupied)


def enumerate_weight_class(grid: Grid, n_occupied: int):
    """Yield every configuration with the given particle count, in a fixed order."""
    n = grid.n_sites
    if not 0 <= n_occupied <= n:
        raise ValueError("particle count out of range")
    for combo in itertools.combinations(range(n), n_occupied):
        bits = 0
        for j in combo:
            bits |= 1 << j
        yield Configuration(bits, n, n_occupied)


def random_weight_matrix(
    n_sites: int, n_occupied: int, count: int, rng: np.random.Generator
) -> np.ndarray:
    """Uniform occupancy rows with a fixed number of ones, shape (count, n_sites).

    The ones are the positions of the `n_occupied` smallest of n_sites iid
    uniforms, which is a uniform subset.
    """
    if not 0 <= n_occupied <= n_sites:
        raise ValueError("particle count out of range")
    if count < 1:
        raise ValueError("count must be >= 1")
    out = np.zeros((count, n_sites), dtype=np.uint8)
    if n_occupied == 0:
        return out
    if n_occupied == n_sites:
        out[:] = 1
        return out
    keys = rng.random((count, n_sites))
    chosen = np.argpartition(keys, n_occupied - 1, axis=1)[:, :n_occupied]
    np.put_along_axis(out, chosen, 1, axis=1)
    return out


def sample_weight_class(grid: Grid, n_occupied: int, rng: np.random.Generator) -> Configuration:
    """One uniform configuration with the given particle count."""
    row = random_weight_matrix(grid.n_sites, n_occupied, 1, rng)[0]
    return Configuration.from_occupancy(row)
