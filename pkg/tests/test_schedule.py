"""Schedule coverage: every unique tuple lands on exactly one task."""
from collections import Counter

import pytest

from propsim.core import (
    ConfigError,
    DecompGrid,
    RankCoords,
    coords_of_rank,
    iter_pairs,
    iter_triples,
)
from propsim.schedule import (
    BlockClass,
    BlockTask2,
    Exchange,
    SliceTask3,
    _perm_of_rank,
    _perm_rank,
    bind_stage,
    classify_block3,
    load_stats,
    owns_pair,
    owns_triple,
    plan_2way,
    plan_3way,
    region_3way,
    schedule_2way,
    schedule_3way,
    sixth_bounds,
    sliced_axis,
    stage_range,
)


def test_schedule_2way_slab_counts():
    # even slab count: the two upper slabs drop their half-offset block
    grid = DecompGrid(n_pv=4)
    sched = schedule_2way(grid)
    assert [len(sched[r]) for r in range(4)] == [3, 3, 2, 2]
    total = sum(len(t) for t in sched.values())
    assert total == 4 * 5 // 2

    odd = schedule_2way(DecompGrid(n_pv=5))
    assert [len(odd[r]) for r in range(5)] == [3, 3, 3, 3, 3]


def test_schedule_2way_unique_block_coverage():
    for n_pv in range(1, 9):
        for n_pr in (1, 2, 3):
            grid = DecompGrid(n_pv=n_pv, n_pr=n_pr)
            seen = Counter()
            for tasks in schedule_2way(grid).values():
                for t in tasks:
                    seen[frozenset((t.row_block, t.col_block)) if not t.diagonal
                         else (t.row_block,)] += 1
            # replication-axis peers must not duplicate blocks
            expected = {(b,): 1 for b in range(n_pv)}
            expected.update(
                {frozenset((a, b)): 1 for a in range(n_pv) for b in range(a + 1, n_pv)}
            )
            assert dict(seen) == expected


def test_plan_2way_exchange_matching():
    """Per step, sends and receives across slabs pair up exactly."""
    for n_pv in range(1, 9):
        for n_pr in (1, 2, 3):
            grid = DecompGrid(n_pv=n_pv, n_pr=n_pr)
            for p_r in range(n_pr):
                by_step: dict[int, dict[int, Exchange]] = {}
                for p_v in range(n_pv):
                    for e in plan_2way(grid, RankCoords(0, p_v, p_r)):
                        if isinstance(e, Exchange):
                            by_step.setdefault(e.step, {})[p_v] = e
                for participants in by_step.values():
                    for p_v, e in participants.items():
                        assert participants[e.send_to_slab].recv_from_slab == p_v
                        assert participants[e.recv_from_slab].send_to_slab == p_v


def test_plan_2way_dropped_compute_still_exchanges():
    grid = DecompGrid(n_pv=4)
    upper = plan_2way(grid, RankCoords(0, 3, 0))
    steps_exchanged = [e.step for e in upper if isinstance(e, Exchange)]
    steps_computed = [t.step for t in upper if isinstance(t, BlockTask2)]
    assert steps_exchanged == [1, 2]
    assert steps_computed == [0, 1]


def test_owns_pair_examples():
    grid = DecompGrid(n_pv=3)
    # wraparound: offset 2 of slab 0 is offset 1 seen from slab 2
    rank, pos = owns_pair(0, 5, n_v=6, grid=grid)
    assert rank == 2
    assert schedule_2way(grid)[rank][pos].step == 1

    rank, pos = owns_pair(0, 1, n_v=6, grid=grid)
    assert rank == 0 and schedule_2way(grid)[rank][pos].diagonal


def test_owns_pair_exhaustive_against_regions():
    for n_pv, n_pr, n_vp in [(1, 1, 3), (2, 2, 2), (3, 2, 2), (4, 3, 2), (6, 2, 1), (8, 3, 1)]:
        grid = DecompGrid(n_pv=n_pv, n_pr=n_pr)
        n_v = n_pv * n_vp
        covering = {}
        for rank, tasks in schedule_2way(grid).items():
            for pos, t in enumerate(tasks):
                for li in range(n_vp):
                    for lj in range(n_vp):
                        gi = t.row_block * n_vp + li
                        gj = t.col_block * n_vp + lj
                        if gi < gj:
                            covering[(gi, gj)] = (rank, pos)
                        elif gj < gi and not t.diagonal:
                            covering[(gj, gi)] = (rank, pos)
        assert sorted(covering) == list(iter_pairs(n_v))
        for (i, j), where in covering.items():
            assert owns_pair(i, j, n_v, grid) == where


def test_owns_pair_rejects_bad_input():
    grid = DecompGrid(n_pv=3)
    with pytest.raises(ValueError):
        owns_pair(2, 2, 6, grid)
    with pytest.raises(ConfigError):
        owns_pair(0, 1, 7, grid)


# ---------------------------------------------------------------------------
# 3-way


def test_perm_rank_is_lexicographic():
    blocks = (0, 1, 2)
    orderings = sorted(
        {(a, b, c) for a in blocks for b in blocks for c in blocks if len({a, b, c}) == 3}
    )
    for rank, perm in enumerate(orderings):
        assert _perm_rank(*perm) == rank
        assert _perm_of_rank(rank, blocks) == perm


def test_classify_block3():
    assert classify_block3(2, 2, 2) is BlockClass.DIAGONAL_EDGE
    assert classify_block3(1, 0, 0) is BlockClass.FACE
    assert classify_block3(0, 2, 1) is BlockClass.VOLUME


@pytest.mark.parametrize("n_pv", list(range(1, 17)))
def test_slice_unit_count_per_slab(n_pv):
    grid = DecompGrid(n_pv=n_pv)
    sched = schedule_3way(grid)
    for rank in range(n_pv):
        assert len(sched[rank]) == (n_pv + 1) * (n_pv + 2)


def test_slice_units_split_across_replication_axis():
    for n_pr in (1, 2, 3):
        grid = DecompGrid(n_pv=4, n_pr=n_pr)
        sched = schedule_3way(grid)
        for p_v in range(4):
            ranks = [p_v + 4 * p_r for p_r in range(n_pr)]
            counters = sorted(t.counter for r in ranks for t in sched[r])
            assert len(counters) == 30
            assert len(set(counters)) == 30


def test_sixth_bounds_tile():
    for n in (1, 3, 4, 6, 12, 30):
        edges = [sixth_bounds(s, n) for s in range(6)]
        assert edges[0][0] == 0 and edges[-1][1] == n
        for (_, hi), (lo, _) in zip(edges, edges[1:]):
            assert hi == lo


def test_region_sizes_small_blocks():
    owner = RankCoords(0, 0, 0)
    edge_total = sum(
        len(region_3way(SliceTask3((0, 0, 0), BlockClass.DIAGONAL_EDGE, s, s, owner), 4))
        for s in range(6)
    )
    assert edge_total == 4 * 3 * 2 // 6

    face_total = sum(
        len(region_3way(SliceTask3((1, 0, 0), BlockClass.FACE, s, 6 + s, owner), 3))
        for s in range(6)
    )
    assert face_total == 3 * 3  # one vector from the single block, a pair from the other

    vol = region_3way(SliceTask3((2, 0, 1), BlockClass.VOLUME, 4, 24, owner), 6)
    assert len(vol) == 6 * 6 * 6 // 6
    assert sliced_axis(SliceTask3((2, 0, 1), BlockClass.VOLUME, 4, 24, owner)) == 1


def _covering_map(grid: DecompGrid, n_v: int):
    """Map every canonical triple to the (rank, position) whose region holds it."""
    n_vp = n_v // grid.n_pv
    covering = {}
    seen = Counter()
    for rank, tasks in schedule_3way(grid).items():
        if coords_of_rank(rank, grid).p_f:
            continue
        for pos, task in enumerate(tasks):
            bi, bj, bk = task.blocks
            for cell in region_3way(task, n_vp):
                li, lj, lk = cell
                g = tuple(sorted((bi * n_vp + li, bj * n_vp + lj, bk * n_vp + lk)))
                if len(set(g)) == 3:
                    seen[g] += 1
                    covering[g] = (rank, pos, cell)
    return covering, seen


@pytest.mark.parametrize(
    "n_pv,n_pr,n_vp",
    [(1, 1, 6), (1, 1, 12), (2, 1, 6), (2, 3, 6), (3, 2, 6), (4, 2, 6), (6, 1, 6)],
)
def test_region_partition_exhaustive(n_pv, n_pr, n_vp):
    grid = DecompGrid(n_pv=n_pv, n_pr=n_pr)
    n_v = n_pv * n_vp
    covering, seen = _covering_map(grid, n_v)
    assert all(count == 1 for count in seen.values())
    assert sorted(covering) == list(iter_triples(n_v))
    assert all(cell in region_3way(schedule_3way(grid)[r][p], n_vp)
               for r, p, cell in covering.values())


@pytest.mark.parametrize(
    "n_pv,n_pr,n_st,n_vp",
    [(1, 1, 1, 6), (2, 1, 1, 6), (2, 2, 2, 12), (3, 1, 2, 12), (4, 3, 1, 6)],
)
def test_owns_triple_matches_regions(n_pv, n_pr, n_st, n_vp):
    grid = DecompGrid(n_pv=n_pv, n_pr=n_pr, n_st=n_st)
    n_v = n_pv * n_vp
    covering, _ = _covering_map(grid, n_v)
    sched = schedule_3way(grid)
    for (i, j, k), (rank, pos, cell) in covering.items():
        got_rank, stage, got_pos = owns_triple(i, j, k, n_v, grid)
        assert (got_rank, got_pos) == (rank, pos)
        local = cell[sliced_axis(sched[rank][pos])]
        lo, hi = stage_range(stage, (local * 6) // n_vp, n_vp, n_st)
        assert lo <= local < hi


def test_owns_triple_rejects_bad_grid():
    with pytest.raises(ConfigError):
        owns_triple(0, 1, 2, 8, DecompGrid(n_pv=2))  # block edge 4 not divisible by 6


def test_stage_range_tiles_and_depth():
    assert stage_range(0, 0, 6, 1) == (0, 1)
    # deep pipeline: the last stage of the last slice reaches the block edge
    assert stage_range(15, 5, 2880, 16) == (2850, 2880)
    for n_vp, n_st in [(6, 1), (12, 2), (24, 4), (36, 3)]:
        cursor = 0
        for s in range(6):
            for s_t in range(n_st):
                lo, hi = stage_range(s_t, s, n_vp, n_st)
                assert lo == cursor
                cursor = hi
        assert cursor == n_vp


def test_plan_3way_exchange_matching():
    for n_pv in (1, 2, 3, 4, 6):
        for n_pr in (1, 2, 3):
            grid = DecompGrid(n_pv=n_pv, n_pr=n_pr)
            for p_r in range(n_pr):
                by_key: dict[tuple, dict[int, Exchange]] = {}
                for p_v in range(n_pv):
                    for e in plan_3way(grid, RankCoords(0, p_v, p_r)):
                        if isinstance(e, Exchange):
                            by_key.setdefault((e.kind, e.step), {})[p_v] = e
                for participants in by_key.values():
                    assert len(participants) in (0, n_pv)
                    for p_v, e in participants.items():
                        assert participants[e.send_to_slab].recv_from_slab == p_v


def test_plan_3way_compute_follows_its_exchange():
    grid = DecompGrid(n_pv=4, n_pr=2)
    for p_v in range(4):
        for p_r in range(2):
            events = plan_3way(grid, RankCoords(0, p_v, p_r))
            for prev, nxt in zip(events, events[1:]):
                if isinstance(prev, Exchange) and prev.kind in ("face_j", "vol_j"):
                    assert isinstance(nxt, SliceTask3)
                    assert nxt.counter == prev.step


def test_bind_stage():
    task = SliceTask3((0, 0, 0), BlockClass.DIAGONAL_EDGE, 2, 2, RankCoords(0, 0, 0))
    assert task.stage is None
    assert bind_stage(task, 3).stage == 3


def test_load_stats_2way():
    stats = load_stats(DecompGrid(n_pv=4), arity=2)
    assert stats.units_per_rank == (3, 3, 2, 2)
    assert stats.max_units == 3 and stats.min_units == 2
    assert stats.imbalance_ratio == pytest.approx(2 / 3)
    assert stats.volume_fraction is None


def test_load_stats_3way():
    stats = load_stats(DecompGrid(n_pv=4), arity=3)
    assert stats.units_per_rank == (30, 30, 30, 30)
    assert stats.imbalance_ratio == 1.0
    assert stats.volume_fraction == pytest.approx(6 / 30)
    assert stats.ideal_unit_ratio == pytest.approx(16 / 30)


def test_load_stats_counts_idle_replicas():
    # more replication than slice units leaves some ranks empty
    stats = load_stats(DecompGrid(n_pv=1, n_pr=8), arity=2)
    assert stats.min_units == 0
    assert stats.imbalance_ratio == 0.0
