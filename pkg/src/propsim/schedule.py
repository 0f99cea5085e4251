"""Distributed work schedules that cover every unique tuple exactly once.

2-way work is a circulant of block pairs per vector slab: offsets
0..floor(n_pv/2), round-robined over the replication axis, with the
half-offset block kept only by the lower slab when n_pv is even.

3-way work runs three phases per slab (diagonal block, two-block faces,
three-block volumes).  A running slice counter round-robins slice units
over the replication axis.  The six-way slicing axis depends on the block
class: the k axis for diagonal-edge tetrahedra, the i axis for folded
face prisms, and for volume blocks the axis holding the smallest block id,
whose sixth is the lexicographic rank of the block permutation.  Result
stages subdivide the sliced axis further, so a stage subset of every task
tiles the full run.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from functools import lru_cache

from .core import ConfigError, DecompGrid, RankCoords, coords_of_rank, rank_of_coords


class BlockClass(enum.Enum):
    DIAGONAL_EDGE = "diagonal-edge"
    FACE = "face"
    VOLUME = "volume"


@dataclass(frozen=True)
class BlockTask2:
    """One 2-way block comparison: row slab against column slab."""

    step: int
    row_block: int
    col_block: int
    owner: RankCoords

    @property
    def diagonal(self) -> bool:
        return self.row_block == self.col_block


@dataclass(frozen=True)
class SliceTask3:
    """One 3-way slice unit: a sixth of a block triple.

    ``slice_index`` is the explicit slice s for diagonal-edge and face
    tasks and the permutation rank sigma for volume tasks.  ``stage`` is
    None in schedule output; runs bind it per executed stage.
    """

    blocks: tuple[int, int, int]
    block_class: BlockClass
    slice_index: int
    counter: int
    owner: RankCoords
    stage: int | None = None


@dataclass(frozen=True)
class Exchange:
    """Send the local vector block to one slab peer, receive from another."""

    kind: str  # "pair" | "face_j" | "vol_k" | "vol_j"
    step: int
    send_to_slab: int
    recv_from_slab: int


def classify_block3(I: int, J: int, K: int) -> BlockClass:
    distinct = len({I, J, K})
    if distinct == 1:
        return BlockClass.DIAGONAL_EDGE
    if distinct == 2:
        return BlockClass.FACE
    return BlockClass.VOLUME


def _perm_rank(I: int, J: int, K: int) -> int:
    # lexicographic rank of (I, J, K) among the six orderings of its
    # distinct block ids
    _, mid, top = sorted((I, J, K))
    pos = (1 if I == mid else 0) + (2 if I == top else 0)
    return 2 * pos + (1 if J > K else 0)


def _perm_of_rank(sigma: int, blocks_sorted: tuple[int, int, int]) -> tuple[int, int, int]:
    a, b, c = blocks_sorted
    first = (a, a, b, b, c, c)[sigma]
    lo, hi = sorted({a, b, c} - {first})
    return (first, lo, hi) if sigma % 2 == 0 else (first, hi, lo)


def sixth_bounds(s: int, n: int) -> tuple[int, int]:
    """Half-open bounds of sixth s of [0, n); the six ranges tile [0, n)."""
    if not 0 <= s < 6:
        raise ValueError(f"slice index must be in [0, 6), got {s}")
    return (s * n) // 6, ((s + 1) * n) // 6


def stage_range(s_t: int, s: int, n_vp: int, n_st: int) -> tuple[int, int]:
    """Pipeline bounds for stage s_t of slice s; all (s_t, s) tile [0, n_vp)."""
    if not 0 <= s_t < n_st:
        raise ValueError(f"stage must be in [0, {n_st}), got {s_t}")
    lo = ((s_t + n_st * s) * n_vp) // (6 * n_st)
    hi = ((s_t + 1 + n_st * s) * n_vp) // (6 * n_st)
    return lo, hi


# ---------------------------------------------------------------------------
# 2-way circulant


@lru_cache(maxsize=None)
def _slab_plan_2way(grid: DecompGrid, p_v: int, p_r: int) -> tuple:
    n_pv, n_pr = grid.n_pv, grid.n_pr
    half = n_pv // 2
    events: list = []
    for delta in range(half + 1):
        if delta % n_pr != p_r:
            continue
        if delta == 0:
            events.append(BlockTask2(0, p_v, p_v, RankCoords(0, p_v, p_r)))
            continue
        events.append(
            Exchange("pair", delta, (p_v - delta) % n_pv, (p_v + delta) % n_pv)
        )
        # even n_pv: the half-offset pair appears from both ends; the lower
        # slab keeps it, the upper still exchanges so its peer can compute
        dropped = n_pv % 2 == 0 and delta == half and p_v >= half
        if not dropped:
            events.append(
                BlockTask2(delta, p_v, (p_v + delta) % n_pv, RankCoords(0, p_v, p_r))
            )
    return tuple(events)


def plan_2way(grid: DecompGrid, coords: RankCoords) -> tuple:
    """Ordered exchange/compute events for one rank's slab position."""
    return _slab_plan_2way(grid, coords.p_v, coords.p_r)


def schedule_2way(grid: DecompGrid) -> dict[int, tuple[BlockTask2, ...]]:
    """Per-rank ordered task lists (field-axis peers share a slab's tasks)."""
    out = {}
    for rank in range(grid.n_p):
        coords = coords_of_rank(rank, grid)
        out[rank] = tuple(e for e in plan_2way(grid, coords) if isinstance(e, BlockTask2))
    return out


def owns_pair(i: int, j: int, n_v: int, grid: DecompGrid) -> tuple[int, int]:
    """Owning (rank, task position) of canonical pair (i, j)."""
    if not 0 <= i < j < n_v:
        raise ValueError(f"need 0 <= i < j < n_v, got ({i}, {j})")
    if n_v % grid.n_pv:
        raise ConfigError(f"n_pv={grid.n_pv} does not divide n_v={n_v}")
    n_vp = n_v // grid.n_pv
    bi, bj = i // n_vp, j // n_vp
    half = grid.n_pv // 2
    if bi == bj:
        row, delta = bi, 0
    else:
        d = (bj - bi) % grid.n_pv
        if grid.n_pv % 2 == 0 and d == half:
            row, delta = (bi, half) if bi < half else (bj, half)
        elif d <= half:
            row, delta = bi, d
        else:
            row, delta = bj, grid.n_pv - d
    p_r = delta % grid.n_pr
    rank = rank_of_coords(RankCoords(0, row, p_r), grid)
    tasks = [e for e in _slab_plan_2way(grid, row, p_r) if isinstance(e, BlockTask2)]
    position = next(pos for pos, t in enumerate(tasks) if t.step == delta)
    return rank, position


# ---------------------------------------------------------------------------
# 3-way three-phase schedule


@lru_cache(maxsize=None)
def _slab_plan_3way(grid: DecompGrid, p_v: int, p_r: int) -> tuple:
    n_pv, n_pr = grid.n_pv, grid.n_pr
    owner = RankCoords(0, p_v, p_r)
    events: list = []
    s_b = 0
    for s in range(6):
        if s_b % n_pr == p_r:
            events.append(
                SliceTask3((p_v, p_v, p_v), BlockClass.DIAGONAL_EDGE, s, s_b, owner)
            )
        s_b += 1
    for s in range(6):
        for dj in range(1, n_pv):
            if s_b % n_pr == p_r:
                events.append(Exchange("face_j", s_b, (p_v - dj) % n_pv, (p_v + dj) % n_pv))
                J = (p_v + dj) % n_pv
                events.append(SliceTask3((p_v, J, J), BlockClass.FACE, s, s_b, owner))
            s_b += 1
    for dk in range(1, n_pv):
        # the k block circulates whether or not any inner unit lands here
        events.append(Exchange("vol_k", dk, (p_v - dk) % n_pv, (p_v + dk) % n_pv))
        K = (p_v + dk) % n_pv
        for dj in range(1, n_pv):
            if s_b % n_pr == p_r and dj != dk:
                events.append(Exchange("vol_j", s_b, (p_v - dj) % n_pv, (p_v + dj) % n_pv))
                J = (p_v + dj) % n_pv
                sigma = _perm_rank(p_v, J, K)
                events.append(SliceTask3((p_v, J, K), BlockClass.VOLUME, sigma, s_b, owner))
            s_b += 1
    return tuple(events)


def plan_3way(grid: DecompGrid, coords: RankCoords) -> tuple:
    """Ordered exchange/compute events for one rank's slab position."""
    return _slab_plan_3way(grid, coords.p_v, coords.p_r)


def schedule_3way(grid: DecompGrid) -> dict[int, tuple[SliceTask3, ...]]:
    """Per-rank ordered slice-unit lists; stages stay unbound here."""
    out = {}
    for rank in range(grid.n_p):
        coords = coords_of_rank(rank, grid)
        out[rank] = tuple(e for e in plan_3way(grid, coords) if isinstance(e, SliceTask3))
    return out


def region_3way(task: SliceTask3, n_b: int) -> set[tuple[int, int, int]]:
    """Local (li, lj, lk) triples owned by one slice unit of a block task."""
    cls = task.block_class
    if cls is BlockClass.DIAGONAL_EDGE:
        lo, hi = sixth_bounds(task.slice_index, n_b)
        return {
            (li, lj, lk)
            for lk in range(lo, hi)
            for lj in range(lk)
            for li in range(lj)
        }
    if cls is BlockClass.FACE:
        lo, hi = sixth_bounds(task.slice_index, n_b)
        return {
            (li, lj, lk)
            for li in range(lo, hi)
            for lj in range(n_b)
            for lk in range(lj + 1, n_b)
        }
    slot = task.blocks.index(min(task.blocks))
    lo, hi = sixth_bounds(task.slice_index, n_b)
    ranges = [range(n_b), range(n_b), range(n_b)]
    ranges[slot] = range(lo, hi)
    return {(li, lj, lk) for li in ranges[0] for lj in ranges[1] for lk in ranges[2]}


def sliced_axis(task: SliceTask3) -> int:
    """Axis (0=i, 1=j, 2=k) cut into sixths and pipelined for this task."""
    if task.block_class is BlockClass.DIAGONAL_EDGE:
        return 2
    if task.block_class is BlockClass.FACE:
        return 0
    return task.blocks.index(min(task.blocks))


def owns_triple(
    i: int, j: int, k: int, n_v: int, grid: DecompGrid
) -> tuple[int, int, int]:
    """Owning (rank, stage, task position) of canonical triple (i, j, k)."""
    if not 0 <= i < j < k < n_v:
        raise ValueError(f"need 0 <= i < j < k < n_v, got ({i}, {j}, {k})")
    if n_v % grid.n_pv:
        raise ConfigError(f"n_pv={grid.n_pv} does not divide n_v={n_v}")
    n_vp = n_v // grid.n_pv
    if n_vp % (6 * grid.n_st):
        raise ConfigError(
            f"3-way needs the block edge divisible by 6*n_st: n_vp={n_vp}, n_st={grid.n_st}"
        )
    bi, bj, bk = i // n_vp, j // n_vp, k // n_vp
    cls = classify_block3(bi, bj, bk)
    if cls is BlockClass.DIAGONAL_EDGE:
        I, sliced_local = bi, k - bk * n_vp
        s = (sliced_local * 6) // n_vp
        s_b = s
        slice_index = s
    elif cls is BlockClass.FACE:
        if bi == bj:  # pair sits low, single vector high
            I, J, sliced_local = bk, bi, k - bk * n_vp
        else:  # single vector low, pair high
            I, J, sliced_local = bi, bj, i - bi * n_vp
        s = (sliced_local * 6) // n_vp
        dj = (J - I) % grid.n_pv
        s_b = 6 + s * (grid.n_pv - 1) + (dj - 1)
        slice_index = s
    else:
        sliced_local = i - bi * n_vp  # block A holds the smallest vector id
        sigma = (sliced_local * 6) // n_vp
        I, J, K = _perm_of_rank(sigma, (bi, bj, bk))
        dj = (J - I) % grid.n_pv
        dk = (K - I) % grid.n_pv
        s_b = 6 + 6 * (grid.n_pv - 1) + (dk - 1) * (grid.n_pv - 1) + (dj - 1)
        slice_index = sigma
    p_r = s_b % grid.n_pr
    rank = rank_of_coords(RankCoords(0, I, p_r), grid)
    tasks = [e for e in _slab_plan_3way(grid, I, p_r) if isinstance(e, SliceTask3)]
    position = next(pos for pos, t in enumerate(tasks) if t.counter == s_b)
    assert tasks[position].slice_index == slice_index
    width = n_vp // (6 * grid.n_st)
    stage = (sliced_local // width) % grid.n_st
    return rank, stage, position


def bind_stage(task: SliceTask3, stage: int) -> SliceTask3:
    return replace(task, stage=stage)


# ---------------------------------------------------------------------------
# load accounting


@dataclass(frozen=True)
class LoadStats:
    """Scheduled units per rank plus class-mix summaries.

    ``ideal_unit_ratio`` (3-way) compares the n_pv^2 slice units a slab
    would carry under perfect division against the (n_pv+1)(n_pv+2) it
    actually runs; ``volume_fraction`` is the share of scheduled units
    doing full-block work.
    """

    units_per_rank: tuple[int, ...]
    max_units: int
    min_units: int
    imbalance_ratio: float
    volume_fraction: float | None = None
    ideal_unit_ratio: float | None = None


def load_stats(grid: DecompGrid, arity: int) -> LoadStats:
    if arity == 2:
        per_rank = [len(tasks) for _, tasks in sorted(schedule_2way(grid).items())]
        volume = ideal = None
    elif arity == 3:
        sched = schedule_3way(grid)
        per_rank = [len(tasks) for _, tasks in sorted(sched.items())]
        total = sum(per_rank)
        n_volume = sum(
            1
            for tasks in sched.values()
            for t in tasks
            if t.block_class is BlockClass.VOLUME
        )
        volume = n_volume / total if total else 0.0
        ideal = grid.n_pv**2 / ((grid.n_pv + 1) * (grid.n_pv + 2))
    else:
        raise ConfigError(f"arity must be 2 or 3, got {arity}")
    mx, mn = max(per_rank), min(per_rank)
    return LoadStats(
        units_per_rank=tuple(per_rank),
        max_units=mx,
        min_units=mn,
        imbalance_ratio=(mn / mx) if mx else 0.0,
        volume_fraction=volume,
        ideal_unit_ratio=ideal,
    )
