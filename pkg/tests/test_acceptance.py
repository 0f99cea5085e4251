"""Acceptance gate: one test per criterion, one visible verdict line each.

Verdict lines go to the real stdout so they appear even under capture;
numbers that matter (kernel speedup, scaling rates) are printed with them.
"""
import csv
import sys
import time
from collections import Counter
from fractions import Fraction

import numpy as np

import conftest
from propsim.cli import main, model_time_2way, model_time_3way
from propsim.core import (
    DecompGrid,
    Problem,
    coords_of_rank,
    iter_pairs,
    iter_triples,
    unique_tuple_count,
)
from propsim.io import MetricOutputSpec, read_run_output, reconstruct_index, write_run_output
from propsim.metrics2 import PHASE_BLOCK, run_2way
from propsim.metrics3 import run_3way
from propsim.mingemm import DEFAULT_TILE, mgemm_blocked, mgemm_naive
from propsim.schedule import (
    BlockClass,
    owns_pair,
    owns_triple,
    region_3way,
    schedule_2way,
    schedule_3way,
    sliced_axis,
    stage_range,
)
from propsim.verify import (
    combine_checksums,
    dense_matrix,
    gen_analytic,
    gen_random_exact,
    oracle_2way,
    oracle_3way,
    records_bitwise_equal,
    value_bits,
)


def _verdict(n: int, text: str) -> None:
    line = f"criterion {n:2d}: PASS  {text}"
    print(line, file=sys.__stdout__, flush=True)
    conftest.ACCEPTANCE_LINES.append(line)


def _timed(fn) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def _problem(spec, arity, precision="double", metric="czekanowski"):
    return Problem(arity, spec.n_f, spec.n_v, spec, precision, metric)


def test_criterion_01_twoway_oracle_equivalence_across_grids():
    t0 = time.perf_counter()
    runs = 0
    for n_v in (6, 13, 24):
        for n_f in (1, 7, 64):
            spec = gen_random_exact(seed=401, n_f=n_f, n_v=n_v, bits=11)
            oracle = oracle_2way(dense_matrix(spec, "double"))
            checksums = set()
            for n_pf in (1, 2):
                if n_f % n_pf:
                    continue
                for n_pv in (1, 2, 3, 4, 6):
                    if n_v % n_pv:
                        continue
                    for n_pr in (1, 2, 3):
                        grid = DecompGrid(n_pf=n_pf, n_pv=n_pv, n_pr=n_pr)
                        res = run_2way(_problem(spec, 2), grid)
                        assert records_bitwise_equal(list(res.records), oracle)
                        checksums.add(res.checksum.value)
                        runs += 1
            assert len(checksums) == 1
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    _verdict(1, f"2-way bitwise oracle match, {runs} grid runs in {elapsed:.1f}s")


def test_criterion_02_threeway_oracle_equivalence_and_staging():
    t0 = time.perf_counter()
    runs = 0
    for n_v in (12, 24):
        for n_f in (7, 64):
            spec = gen_random_exact(seed=402, n_f=n_f, n_v=n_v, bits=11)
            oracle = oracle_3way(dense_matrix(spec, "double"))
            checksums = set()
            for n_pv in (1, 2, 4):
                if n_v % n_pv:
                    continue
                n_vp = n_v // n_pv
                for n_st in (1, 2):
                    if n_vp % (6 * n_st):
                        continue
                    for n_pr in (1, 3):
                        grid = DecompGrid(n_pv=n_pv, n_pr=n_pr, n_st=n_st)
                        if n_st == 1:
                            res = run_3way(_problem(spec, 3), grid)
                            assert records_bitwise_equal(list(res.records), oracle)
                            checksums.add(res.checksum.value)
                            runs += 1
                        else:
                            parts = [
                                run_3way(_problem(spec, 3), grid, stage=s) for s in range(n_st)
                            ]
                            merged = [rec for part in parts for rec in part.records]
                            assert records_bitwise_equal(merged, oracle)
                            combined = combine_checksums([part.checksum for part in parts])
                            checksums.add(combined.value)
                            runs += n_st
            assert len(checksums) == 1
    elapsed = time.perf_counter() - t0
    assert elapsed < 300.0
    _verdict(2, f"3-way bitwise oracle match incl. staged unions, {runs} runs in {elapsed:.1f}s")


def test_criterion_03_ownership_partitions_exactly():
    pair_checked = 0
    for n_pv in range(1, 9):
        for n_vp in (1, 4, 12):
            n_v = n_pv * n_vp
            if n_v < 2:
                continue
            for n_pf in (1, 2):
                for n_pr in (1, 2, 3):
                    grid = DecompGrid(n_pf=n_pf, n_pv=n_pv, n_pr=n_pr)
                    covering = {}
                    for rank, tasks in schedule_2way(grid).items():
                        if coords_of_rank(rank, grid).p_f:
                            continue
                        for pos, task in enumerate(tasks):
                            for li in range(n_vp):
                                for lj in range(n_vp):
                                    gi = task.row_block * n_vp + li
                                    gj = task.col_block * n_vp + lj
                                    if gi < gj:
                                        key = (gi, gj)
                                    elif gj < gi and not task.diagonal:
                                        key = (gj, gi)
                                    else:
                                        continue
                                    assert key not in covering, f"duplicate {key} in {grid}"
                                    covering[key] = (rank, pos)
                    assert len(covering) == unique_tuple_count(n_v, 2)
                    for i, j in iter_pairs(n_v):
                        assert owns_pair(i, j, n_v, grid) == covering[(i, j)]
                        pair_checked += 1

    triple_checked = 0
    for n_pv in range(1, 7):
        for n_vp in (6, 12):
            n_v = n_pv * n_vp
            for n_st in (1, 2):
                if n_vp % (6 * n_st):
                    continue
                for n_pr in (1, 3):
                    grid = DecompGrid(n_pv=n_pv, n_pr=n_pr, n_st=n_st)
                    sched = schedule_3way(grid)
                    covering = {}
                    seen = Counter()
                    for rank, tasks in sched.items():
                        if coords_of_rank(rank, grid).p_f:
                            continue
                        for pos, task in enumerate(tasks):
                            bi, bj, bk = task.blocks
                            for li, lj, lk in region_3way(task, n_vp):
                                g = tuple(
                                    sorted((bi * n_vp + li, bj * n_vp + lj, bk * n_vp + lk))
                                )
                                if len(set(g)) == 3:
                                    seen[g] += 1
                                    covering[g] = (rank, pos, (li, lj, lk))
                    assert max(seen.values()) == 1, f"duplicate triples in {grid}"
                    assert len(covering) == unique_tuple_count(n_v, 3)
                    for i, j, k in iter_triples(n_v):
                        rank, stage, pos = owns_triple(i, j, k, n_v, grid)
                        want_rank, want_pos, cell = covering[(i, j, k)]
                        assert (rank, pos) == (want_rank, want_pos)
                        local = cell[sliced_axis(sched[rank][pos])]
                        lo, hi = stage_range(stage, (local * 6) // n_vp, n_vp, n_st)
                        assert lo <= local < hi
                        triple_checked += 1
    _verdict(3, f"ownership bijective: {pair_checked} pairs, {triple_checked} triples")


def test_criterion_04_slice_units_and_volume_fraction_formulas():
    for n_pv in range(1, 17):
        grid = DecompGrid(n_pv=n_pv)
        sched = schedule_3way(grid)
        per_slab = [len(tasks) for tasks in sched.values()]
        assert per_slab == [(n_pv + 1) * (n_pv + 2)] * n_pv
        volume = sum(
            1 for tasks in sched.values() for t in tasks if t.block_class is BlockClass.VOLUME
        )
        total = sum(per_slab)
        assert Fraction(volume, total) == Fraction(
            (n_pv - 1) * (n_pv - 2), (n_pv + 1) * (n_pv + 2)
        )
    _verdict(4, "slice units (n_pv+1)(n_pv+2) and volume fraction exact for n_pv <= 16")


def test_criterion_05_analytic_predictor_exact():
    checked = 0
    for n_v in range(2, 17):
        for n_f in sorted({max(n_v, 2), 17, 33, 64}):
            if n_f < n_v:
                continue
            spec = gen_analytic(seed=0, n_f=n_f, n_v=n_v)
            precisions = ("double", "single") if n_v % 5 == 0 else ("double",)
            for precision in precisions:
                res = run_2way(_problem(spec, 2, precision), DecompGrid())
                for rec in res.records:
                    expected = spec.predicted_pair(*rec.id.indices, precision)
                    assert value_bits(rec.value) == value_bits(expected)
                    checked += 1
    for n_v in (6, 12):
        for n_f in (max(n_v, 12), 33, 64):
            spec = gen_analytic(seed=0, n_f=n_f, n_v=n_v)
            for precision in ("double", "single"):
                res = run_3way(_problem(spec, 3, precision), DecompGrid())
                for rec in res.records:
                    expected = spec.predicted_triple(*rec.id.indices, precision)
                    assert value_bits(rec.value) == value_bits(expected)
                    checked += 1
    _verdict(5, f"analytic closed forms match bitwise, {checked} values")


def test_criterion_06_sorenson_bitpacked_equals_dense():
    cases = [
        (12, 37, DecompGrid()),
        (16, 128, DecompGrid(n_pv=2, n_pr=2)),
        (64, 512, DecompGrid(n_pv=4, n_pr=2)),
    ]
    for n_v, n_f, grid in cases:
        spec = gen_random_exact(seed=406, n_f=n_f, n_v=n_v, bits=1)
        packed = run_2way(_problem(spec, 2, metric="sorenson"), grid)
        dense = run_2way(_problem(spec, 2), grid, kernel="blocked")
        assert packed.kernel == "bitpacked"
        assert records_bitwise_equal(list(packed.records), list(dense.records))
        assert packed.checksum == dense.checksum
    spec = gen_random_exact(seed=407, n_f=24, n_v=12, bits=1)
    tri_s = run_3way(_problem(spec, 3, metric="sorenson"), DecompGrid(n_pv=2))
    tri_c = run_3way(_problem(spec, 3), DecompGrid(n_pv=2))
    assert records_bitwise_equal(list(tri_s.records), list(tri_c.records))
    _verdict(6, "0/1 bit-packed equals dense czekanowski up to 64 vectors x 512 fields")


def test_criterion_07_io_round_trip_and_index_reconstruction(tmp_path):
    n_v, n_f = 24, 64
    spec = gen_random_exact(seed=407, n_f=n_f, n_v=n_v, bits=11)
    grids = [
        DecompGrid(n_pf=pf, n_pv=pv, n_pr=pr)
        for pf in (1, 2)
        for pv in (1, 2, 3, 4, 6)
        for pr in (1, 2, 3)
    ]
    positions = 0
    for idx, grid in enumerate(grids):
        res = run_2way(_problem(spec, 2), grid)
        by_id = {rec.id: rec.value for rec in res.records}
        for mode in ("full", "byte"):
            out = MetricOutputSpec(directory=str(tmp_path / f"g{idx}_{mode}"), mode=mode)
            write_run_output(res, out)
            _, per_rank = read_run_output(out.directory)
            assert sum(len(recs) for recs in per_rank.values()) == len(by_id)
            for rank, records in per_rank.items():
                for pos, rec in enumerate(records):
                    tid = reconstruct_index(rank, pos, arity=2, n_v=n_v, grid=grid)
                    assert tid == rec.id
                    if mode == "full":
                        assert value_bits(rec.value) == value_bits(by_id[rec.id])
                    else:
                        assert abs(float(rec.value) - float(by_id[rec.id])) <= 1.0 / 510.0
                    positions += 1
    _verdict(7, f"round trip exact (full) and <=1/510 (byte); {positions} (rank, position) lookups")


def test_criterion_08_blocked_kernel_equivalent_and_faster():
    rng = np.random.default_rng(408)
    for _ in range(1000):
        n_f = int(rng.integers(1, 40))
        m = int(rng.integers(1, 28))
        n = int(rng.integers(1, 28))
        W = np.asfortranarray(rng.random((n_f, m)) * float(rng.integers(1, 5)))
        V = np.asfortranarray(rng.random((n_f, n)) * float(rng.integers(1, 5)))
        tile = (int(rng.integers(1, 9)), int(rng.integers(1, 9)))
        assert np.array_equal(mgemm_blocked(W, V, tile=tile), mgemm_naive(W, V))

    n = 1024
    V = np.asfortranarray(rng.random((n, n)))
    mgemm_naive(V[:8], V[:8])
    mgemm_blocked(V[:8], V[:8])
    t_naive = min(_timed(lambda: mgemm_naive(V, V)) for _ in range(3))
    t_blocked = min(_timed(lambda: mgemm_blocked(V, V)) for _ in range(3))
    speedup = t_naive / t_blocked
    assert speedup >= 3.0
    _verdict(
        8,
        f"blocked==naive on 1000 fuzz cases; 1024^3 double: naive {t_naive:.3f}s, "
        f"blocked {t_blocked:.3f}s (tile {DEFAULT_TILE[0]}x{DEFAULT_TILE[1]}), {speedup:.1f}x",
    )


def test_criterion_09_exchange_volume_matches_model_term():
    cases = [
        (8, 12, DecompGrid(n_pv=3)),
        (8, 8, DecompGrid(n_pf=2, n_pv=4, n_pr=2)),
        (12, 12, DecompGrid(n_pv=6, n_pr=3)),
    ]
    for n_f, n_v, grid in cases:
        spec = gen_random_exact(seed=409, n_f=n_f, n_v=n_v, bits=5)
        res = run_2way(_problem(spec, 2), grid)
        n_fp, n_vp = n_f // grid.n_pf, n_v // grid.n_pv
        exchanging = 0
        for rank in range(grid.n_p):
            msgs, elems, nbytes = res.rank_traffic[rank].by_phase.get(PHASE_BLOCK, (0, 0, 0))
            assert elems == msgs * n_fp * n_vp
            assert nbytes == elems * 8
            exchanging += msgs > 0
        assert exchanging > 0
    _verdict(9, "per-step vector exchange is exactly n_fp*n_vp elements per rank on 3 grids")


def test_criterion_10_delay_injection_determinism():
    spec2 = gen_random_exact(seed=410, n_f=9, n_v=12, bits=7)
    base2 = run_2way(_problem(spec2, 2), DecompGrid(n_pv=3, n_pr=2))
    spec3 = gen_random_exact(seed=411, n_f=8, n_v=12, bits=7)
    base3 = run_3way(_problem(spec3, 3), DecompGrid(n_pv=2, n_pr=3))
    for trial in range(1, 11):
        delayed2 = run_2way(
            _problem(spec2, 2), DecompGrid(n_pv=3, n_pr=2),
            inject_delay=0.002, delay_seed=trial,
        )
        assert delayed2.checksum == base2.checksum
        delayed3 = run_3way(
            _problem(spec3, 3), DecompGrid(n_pv=2, n_pr=3),
            inject_delay=0.002, delay_seed=trial,
        )
        assert delayed3.checksum == base3.checksum
    _verdict(10, "checksums unchanged under injected delays, 10 trials, both arities")


def test_criterion_11_weak_scaling_sweep(tmp_path):
    csv_path = tmp_path / "bench.csv"
    rc = main(
        [
            "bench", "--sizes", "96", "--tiles", "64x128", "--workers", "1,2,4,8",
            "--repeat", "3", "--scaling", "weak", "--csv", str(csv_path),
        ]
    )
    assert rc == 0
    with open(csv_path, newline="") as fh:
        rows = [row for row in csv.DictReader(fh) if row["section"] == "weak"]
    assert [int(r["workers"]) for r in rows] == [1, 2, 4, 8]
    rates = [float(r["rate"]) for r in rows]
    assert rates == sorted(rates), f"aggregate rate not monotone: {rates}"
    degradation = ", ".join(
        f"w={r['workers']} {float(r['rate_per_worker']):.3g}/s eff {float(r['efficiency']):.2f}"
        for r in rows
    )
    _verdict(11, f"weak scaling completes, aggregate rate monotone; per-worker {degradation}")


def test_criterion_12_model_worked_examples_exact():
    assert model_time_2way(1, 1, 1, 1, 1, 1) == 5.0
    assert model_time_3way(6, 2880, 16, 1, 0, 0, 0, 0) == 198.0
    assert model_time_2way(2, 3, 0, 0, 0, 0) == 2 * model_time_2way(1, 3, 0, 0, 0, 0)
    _verdict(12, "runtime model reproduces both worked examples exactly")
