"""Exhaustive 2-way similarity runs over the circulant block schedule.

Every rank walks its slab plan: circulate the local vector block around
the slab ring, feed each landed block pair to a min-product kernel, sum
kernel partials over the field axis in fixed ascending order, and let the
field leader emit records.  Value arithmetic keeps one expression shape,
(2 * numerator) / (sum_i + sum_j), evaluated in the run precision, so a
result never depends on which grid produced it as long as the sums stay
exact in that precision.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import (
    ConfigError,
    DecompGrid,
    EngineError,
    MetricRecord,
    Problem,
    TupleId,
    unique_tuple_count,
)
from .engine import DEFAULT_TIMEOUT, TrafficStats
from .engine import run as engine_run
from .mingemm import column_sums, mgemm_bitpacked, mgemm_blocked, mgemm_naive, pack_bits
from .schedule import BlockTask2, Exchange, plan_2way
from .verify import Checksum128, checksum

# message namespaces; step numbers are unique inside each phase
PHASE_BLOCK = 0  # vector block circulation (j role)
PHASE_BLOCK_K = 1  # 3-way k-block circulation
PHASE_SUM = 2  # column-sum reductions for own and j blocks
PHASE_SUM_K = 3  # column-sum reductions for k blocks
PHASE_TASK = 4  # per-task pair-numerator reductions
PHASE_PIPE = 5  # per-pipeline-column reductions

KERNELS = ("blocked", "naive", "bitpacked")


def resolve_kernel(metric: str, kernel: str | None) -> str:
    if kernel is None:
        return "bitpacked" if metric == "sorenson" else "blocked"
    if kernel not in KERNELS:
        raise ConfigError(f"kernel must be one of {KERNELS}, got {kernel!r}")
    return kernel


@dataclass(frozen=True)
class RunResult:
    """Merged output of one distributed run."""

    arity: int
    n_f: int
    n_v: int
    precision: str
    metric: str
    grid: DecompGrid
    transport: str
    kernel: str
    records: tuple[MetricRecord, ...]
    checksum: Checksum128
    traffic: TrafficStats
    rank_traffic: dict[int, TrafficStats]
    degenerate_count: int
    elapsed: float
    stages: tuple[int, ...] | None = None


def _dense_kernel(name: str):
    return mgemm_naive if name == "naive" else mgemm_blocked


def metric2_value(numerator, sum_i, sum_j, dt):
    """Scalar 2-way value; the one expression shape used everywhere."""
    d = sum_i + sum_j
    if d == 0:
        return dt(0)
    return (dt(2) * numerator) / d


def _pair_value_matrix(N: np.ndarray, s_row: np.ndarray, s_col: np.ndarray, dt):
    D = s_row[:, None] + s_col[None, :]
    zero = D == 0
    vals = (dt(2) * N) / np.where(zero, dt(1), D)
    return np.where(zero, dt(0), vals), zero


def _emit_pair_records(task: BlockTask2, N, s_row, s_col, n_vp: int, dt) -> list[MetricRecord]:
    vals, zero = _pair_value_matrix(N, s_row, s_col, dt)
    g_row = task.row_block * n_vp
    g_col = task.col_block * n_vp
    out = []
    if task.diagonal:
        cells = ((li, lj) for li in range(n_vp - 1) for lj in range(li + 1, n_vp))
    else:
        cells = ((li, lj) for li in range(n_vp) for lj in range(n_vp))
    for li, lj in cells:
        gi, gj = g_row + li, g_col + lj
        pair = (gi, gj) if gi < gj else (gj, gi)
        out.append(MetricRecord(TupleId(pair), vals[li, lj], degenerate=bool(zero[li, lj])))
    return out


def run_2way(
    problem: Problem,
    grid: DecompGrid,
    *,
    transport: str = "thread",
    kernel: str | None = None,
    timeout: float = DEFAULT_TIMEOUT,
    inject_delay: float = 0.0,
    delay_seed: int = 0,
) -> RunResult:
    if problem.arity != 2:
        raise ConfigError(f"run_2way needs an arity-2 problem, got arity={problem.arity}")
    grid.validate(problem.n_f, problem.n_v, arity=2)
    kern_name = resolve_kernel(problem.metric, kernel)
    dense = _dense_kernel(kern_name)
    packed = kern_name == "bitpacked"
    n_vp = problem.n_v // grid.n_pv

    def numerator(W, V, W_packed, V_packed, dt):
        if packed:
            return mgemm_bitpacked(W_packed, V_packed).astype(dt)
        return dense(W, V)

    def rank_fn(ctx):
        own = problem.block(grid, ctx.coords).elements
        dt = own.dtype.type
        own_packed = pack_bits(own) if packed else None
        s_own = ctx.reduce_field_axis(column_sums(own), phase=PHASE_SUM, step=0)
        current = None
        records: list[MetricRecord] = []
        for event in plan_2way(grid, ctx.coords):
            if isinstance(event, Exchange):
                ctx.send(ctx.peer(p_v=event.send_to_slab), own, phase=PHASE_BLOCK, step=event.step)
                remote = ctx.receive(
                    ctx.peer(p_v=event.recv_from_slab), phase=PHASE_BLOCK, step=event.step
                )
                r_sums = ctx.reduce_field_axis(
                    column_sums(remote), phase=PHASE_SUM, step=event.step
                )
                current = (remote, pack_bits(remote) if packed else None, r_sums)
                continue
            if event.diagonal:
                part = numerator(own, own, own_packed, own_packed, dt)
                s_col = s_own
            else:
                remote, r_packed, r_sums = current
                part = numerator(own, remote, own_packed, r_packed, dt)
                s_col = r_sums
            N = ctx.reduce_field_axis(part, phase=PHASE_TASK, step=event.step)
            if ctx.coords.p_f == 0:
                records.extend(_emit_pair_records(event, N, s_own, s_col, n_vp, dt))
        return records

    t0 = time.perf_counter()
    outs = engine_run(
        grid,
        rank_fn,
        transport=transport,
        timeout=timeout,
        inject_delay=inject_delay,
        delay_seed=delay_seed,
    )
    elapsed = time.perf_counter() - t0
    return _gather(problem, grid, transport, kern_name, outs, elapsed, stages=None)


def _gather(problem, grid, transport, kern_name, outs, elapsed, stages) -> RunResult:
    records = [rec for out in outs.values() for rec in out.value]
    records.sort(key=lambda r: r.id.indices)
    expected = unique_tuple_count(problem.n_v, problem.arity)
    if stages is None and len(records) != expected:
        raise EngineError(
            f"schedule covered {len(records)} tuples, expected {expected}"
        )
    total = TrafficStats()
    rank_traffic = {}
    for rank, out in sorted(outs.items()):
        rank_traffic[rank] = out.traffic
        total.merge(out.traffic)
    return RunResult(
        arity=problem.arity,
        n_f=problem.n_f,
        n_v=problem.n_v,
        precision=problem.precision,
        metric=problem.metric,
        grid=grid,
        transport=transport,
        kernel=kern_name,
        records=tuple(records),
        checksum=checksum(records, problem.n_v),
        traffic=total,
        rank_traffic=rank_traffic,
        degenerate_count=sum(1 for r in records if r.degenerate),
        elapsed=elapsed,
        stages=stages,
    )
