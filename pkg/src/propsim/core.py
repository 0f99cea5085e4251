"""Domain types, decomposition grids, and canonical index arithmetic.

Vector sets are dense nonnegative matrices with fields (rows) down the
column-major axis and vectors (columns) across.  Result tuples are
addressed by their canonical index: the position of the sorted index
tuple in lexicographic order over all unique pairs or triples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator, NamedTuple

import numpy as np

PRECISIONS = {"single": np.float32, "double": np.float64}
METRICS = ("czekanowski", "sorenson")


class ConfigError(ValueError):
    """Invalid run configuration (shapes, divisibility, ranges)."""


class DataError(ValueError):
    """Invalid input data (wrong file size, NaN, negative entries)."""


class EngineError(RuntimeError):
    """Runtime failure inside a distributed run."""


def dtype_of(precision: str) -> np.dtype:
    if precision not in PRECISIONS:
        raise ConfigError(f"precision must be one of {sorted(PRECISIONS)}, got {precision!r}")
    return np.dtype(PRECISIONS[precision])


class RankCoords(NamedTuple):
    p_f: int
    p_v: int
    p_r: int


@dataclass(frozen=True)
class DecompGrid:
    """Process decomposition: field axis x vector axis x replication axis.

    ``n_st`` counts result stages for 3-way runs and must stay 1 for 2-way.
    """

    n_pf: int = 1
    n_pv: int = 1
    n_pr: int = 1
    n_st: int = 1

    @property
    def n_p(self) -> int:
        return self.n_pf * self.n_pv * self.n_pr

    def validate(self, n_f: int, n_v: int, arity: int) -> None:
        if arity not in (2, 3):
            raise ConfigError(f"arity must be 2 or 3, got {arity}")
        for name in ("n_pf", "n_pv", "n_pr", "n_st"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if n_f < 1 or n_v < arity:
            raise ConfigError(f"need n_f >= 1 and n_v >= {arity}, got n_f={n_f} n_v={n_v}")
        if n_f % self.n_pf:
            raise ConfigError(f"n_pf={self.n_pf} does not divide n_f={n_f}")
        if n_v % self.n_pv:
            raise ConfigError(f"n_pv={self.n_pv} does not divide n_v={n_v}")
        if arity == 2 and self.n_st != 1:
            raise ConfigError("stages apply to 3-way runs only (n_st must be 1 for 2-way)")
        if arity == 3:
            n_vp = n_v // self.n_pv
            if n_vp % (6 * self.n_st):
                raise ConfigError(
                    f"3-way needs the block edge divisible by 6*n_st: "
                    f"n_vp={n_vp}, n_st={self.n_st}"
                )


def coords_of_rank(rank: int, grid: DecompGrid) -> RankCoords:
    """Invert the field-fastest rank layout rank = p_f + n_pf*(p_v + n_pv*p_r)."""
    if not 0 <= rank < grid.n_p:
        raise ConfigError(f"rank {rank} outside grid of {grid.n_p}")
    p_f = rank % grid.n_pf
    p_v = (rank // grid.n_pf) % grid.n_pv
    p_r = rank // (grid.n_pf * grid.n_pv)
    return RankCoords(p_f, p_v, p_r)


def rank_of_coords(coords: RankCoords, grid: DecompGrid) -> int:
    p_f, p_v, p_r = coords
    if not (0 <= p_f < grid.n_pf and 0 <= p_v < grid.n_pv and 0 <= p_r < grid.n_pr):
        raise ConfigError(f"coords {coords} outside grid {grid}")
    return p_f + grid.n_pf * (p_v + grid.n_pv * p_r)


def field_range(grid: DecompGrid, p_f: int, n_f: int) -> tuple[int, int]:
    n_fp = n_f // grid.n_pf
    return p_f * n_fp, (p_f + 1) * n_fp


def vector_range(grid: DecompGrid, p_v: int, n_v: int) -> tuple[int, int]:
    n_vp = n_v // grid.n_pv
    return p_v * n_vp, (p_v + 1) * n_vp


# ---------------------------------------------------------------------------
# canonical tuple indexing


def unique_tuple_count(n_v: int, arity: int) -> int:
    if arity == 2:
        return n_v * (n_v - 1) // 2
    if arity == 3:
        return n_v * (n_v - 1) * (n_v - 2) // 6
    raise ConfigError(f"arity must be 2 or 3, got {arity}")


def pair_index(i: int, j: int, n_v: int) -> int:
    """Canonical index of the pair (i, j) with i < j.

    Pairs are ordered lexicographically, so (0,1) -> 0 and
    (n_v-2, n_v-1) -> n_v*(n_v-1)/2 - 1.
    """
    if not 0 <= i < j < n_v:
        raise ValueError(f"need 0 <= i < j < n_v, got ({i}, {j}) with n_v={n_v}")
    return i * n_v - i * (i + 1) // 2 + (j - i - 1)


def pair_unindex(index: int, n_v: int) -> tuple[int, int]:
    """Inverse of :func:`pair_index`.

    Solves for the row start offset i*n_v - i*(i+1)/2 <= index by the
    quadratic formula, then corrects for integer truncation.
    """
    if not 0 <= index < unique_tuple_count(n_v, 2):
        raise ValueError(f"pair index {index} outside range for n_v={n_v}")
    b = 2 * n_v - 1
    i = (b - math.isqrt(b * b - 8 * index)) // 2
    while i * n_v - i * (i + 1) // 2 > index:
        i -= 1
    while (i + 1) * n_v - (i + 1) * (i + 2) // 2 <= index:
        i += 1
    j = index - (i * n_v - i * (i + 1) // 2) + i + 1
    return i, j


def triple_index(i: int, j: int, k: int, n_v: int) -> int:
    """Canonical index of the triple (i, j, k) with i < j < k, lexicographic."""
    if not 0 <= i < j < k < n_v:
        raise ValueError(f"need 0 <= i < j < k < n_v, got ({i}, {j}, {k}) with n_v={n_v}")
    before_i = unique_tuple_count(n_v, 3) - unique_tuple_count(n_v - i, 3)
    return before_i + pair_index(j - i - 1, k - i - 1, n_v - i - 1)


def triple_unindex(index: int, n_v: int) -> tuple[int, int, int]:
    """Inverse of :func:`triple_index`."""
    if not 0 <= index < unique_tuple_count(n_v, 3):
        raise ValueError(f"triple index {index} outside range for n_v={n_v}")
    i = 0
    rest = index
    while rest >= unique_tuple_count(n_v - 1 - i, 2):
        rest -= unique_tuple_count(n_v - 1 - i, 2)
        i += 1
    j, k = pair_unindex(rest, n_v - i - 1)
    return i, j + i + 1, k + i + 1


def iter_pairs(n_v: int) -> Iterator[tuple[int, int]]:
    for i in range(n_v - 1):
        for j in range(i + 1, n_v):
            yield i, j


def iter_triples(n_v: int) -> Iterator[tuple[int, int, int]]:
    for i in range(n_v - 2):
        for j in range(i + 1, n_v - 1):
            for k in range(j + 1, n_v):
                yield i, j, k


@dataclass(frozen=True, slots=True)
class TupleId:
    """Sorted index tuple naming one result (pair or triple)."""

    indices: tuple[int, ...]

    def __post_init__(self) -> None:
        n = len(self.indices)
        if n not in (2, 3):
            raise ValueError(f"tuple arity must be 2 or 3, got {n}")
        if any(a < 0 for a in self.indices) or any(
            a >= b for a, b in zip(self.indices, self.indices[1:])
        ):
            raise ValueError(f"indices must be strictly ascending and nonnegative: {self.indices}")

    @property
    def arity(self) -> int:
        return len(self.indices)

    def canonical_index(self, n_v: int) -> int:
        if self.arity == 2:
            return pair_index(*self.indices, n_v)
        return triple_index(*self.indices, n_v)


@dataclass(slots=True)
class MetricRecord:
    """One metric value; ``degenerate`` marks an all-zero denominator."""

    id: TupleId
    value: np.floating
    degenerate: bool = False


# ---------------------------------------------------------------------------
# vector blocks and problems


@dataclass(frozen=True)
class VectorBlock:
    """Local slice of the vector set: fields x vectors, column-major storage."""

    elements: np.ndarray
    field_offset: int
    vector_offset: int

    def __post_init__(self) -> None:
        e = self.elements
        if e.ndim != 2:
            raise DataError(f"block must be 2-d, got shape {e.shape}")
        if not e.flags.f_contiguous:
            raise DataError("block storage must be column-major")
        if e.dtype not in (np.float32, np.float64):
            raise DataError(f"unsupported element dtype {e.dtype}")
        if not np.isfinite(e).all():
            raise DataError("non-finite element in vector block")
        if (e < 0).any():
            raise DataError("negative element in vector block")

    @property
    def n_f_local(self) -> int:
        return self.elements.shape[0]

    @property
    def n_v_local(self) -> int:
        return self.elements.shape[1]

    @property
    def precision(self) -> str:
        return "single" if self.elements.dtype == np.float32 else "double"


BlockLoader = Callable[["Problem", DecompGrid, RankCoords], np.ndarray]


@dataclass(frozen=True)
class Problem:
    """What to compute: dimensions, precision, metric kind, and a data source.

    ``source`` is any object with a
    ``local_block(problem, grid, coords) -> ndarray`` method returning the
    (n_fp, n_vp) slice for a rank; synthetic generators and binary files
    both satisfy it.
    """

    arity: int
    n_f: int
    n_v: int
    source: object
    precision: str = "double"
    metric: str = "czekanowski"

    def __post_init__(self) -> None:
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}, got {self.metric!r}")
        dtype_of(self.precision)

    def block(self, grid: DecompGrid, coords: RankCoords) -> VectorBlock:
        arr = self.source.local_block(self, grid, coords)
        arr = np.asfortranarray(arr, dtype=dtype_of(self.precision))
        f0, _ = field_range(grid, coords.p_f, self.n_f)
        v0, _ = vector_range(grid, coords.p_v, self.n_v)
        blk = VectorBlock(arr, field_offset=f0, vector_offset=v0)
        if blk.n_f_local != self.n_f // grid.n_pf or blk.n_v_local != self.n_v // grid.n_pv:
            raise DataError(
                f"source produced block shape {arr.shape}, expected "
                f"({self.n_f // grid.n_pf}, {self.n_v // grid.n_pv})"
            )
        return blk
