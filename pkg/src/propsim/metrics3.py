"""Exhaustive 3-way similarity runs over the three-phase slice schedule.

Each slice unit pipelines along its sliced axis: one column of the sliced
block at a time is min-combined with the second block, pushed through the
min-product kernel against the third, and the partial numerators are
reduced over the field axis as a single packed buffer per pipeline column.
The value expression keeps the oracle's shape exactly,
(1.5 * (((n_ij + n_ik) + n_jk) - n_ijk)) / ((s_i + s_j) + s_k),
with the i/j/k roles resolved per task from block ids, so canonical
results are reproducible bit for bit across grids on exact inputs.
"""
from __future__ import annotations

import time

import numpy as np

from .core import ConfigError, DataError, DecompGrid, MetricRecord, Problem, TupleId
from .engine import DEFAULT_TIMEOUT
from .engine import run as engine_run
from .metrics2 import (
    PHASE_BLOCK,
    PHASE_BLOCK_K,
    PHASE_PIPE,
    PHASE_SUM,
    PHASE_SUM_K,
    PHASE_TASK,
    RunResult,
    _dense_kernel,
    _gather,
    resolve_kernel,
)
from .mingemm import column_sums, xj_columns
from .schedule import BlockClass, Exchange, SliceTask3, plan_3way, sliced_axis, stage_range
from .verify import checksum  # noqa: F401  (re-exported for callers)


def metric3_value(n_ij, n_ik, n_jk, n_ijk, s_i, s_j, s_k, dt):
    """Scalar 3-way value; the one expression shape used everywhere."""
    d = (s_i + s_j) + s_k
    if d == 0:
        return dt(0)
    n = ((n_ij + n_ik) + n_jk) - n_ijk
    return (dt(1.5) * n) / d


def _edge_cells(t: int, n_vp: int):
    return [(lb, lc) for lc in range(t) for lb in range(lc)]


def _face_cells(n_vp: int):
    return [(lb, lc) for lb in range(n_vp - 1) for lc in range(lb + 1, n_vp)]


def _volume_cells(n_vp: int):
    return [(lb, lc) for lb in range(n_vp) for lc in range(n_vp)]


def run_3way(
    problem: Problem,
    grid: DecompGrid,
    *,
    stage: int | None = None,
    transport: str = "thread",
    kernel: str | None = None,
    timeout: float = DEFAULT_TIMEOUT,
    inject_delay: float = 0.0,
    delay_seed: int = 0,
) -> RunResult:
    if problem.arity != 3:
        raise ConfigError(f"run_3way needs an arity-3 problem, got arity={problem.arity}")
    grid.validate(problem.n_f, problem.n_v, arity=3)
    if stage is not None and not 0 <= stage < grid.n_st:
        raise ConfigError(f"stage must be in [0, {grid.n_st}), got {stage}")
    stages = tuple(range(grid.n_st)) if stage is None else (stage,)
    kern_name = resolve_kernel(problem.metric, kernel)
    # the pipeline already min-combines columns, so binary inputs take the
    # dense kernels here; bit-packing pays off on the 2-way path only
    dense = _dense_kernel("blocked" if kern_name == "bitpacked" else kern_name)
    n_vp = problem.n_v // grid.n_pv

    def rank_fn(ctx):
        own = problem.block(grid, ctx.coords).elements
        if problem.metric == "sorenson" and not bool(((own == 0) | (own == 1)).all()):
            raise DataError("sorenson runs need strictly 0/1 input")
        dt = own.dtype.type
        sums: dict[int, np.ndarray] = {
            ctx.coords.p_v: ctx.reduce_field_axis(column_sums(own), phase=PHASE_SUM, step=0)
        }
        vj = vk = None  # (slab, block) registers fed by the circulation
        records: list[MetricRecord] = []
        for event in plan_3way(grid, ctx.coords):
            if isinstance(event, Exchange):
                phase = PHASE_BLOCK_K if event.kind == "vol_k" else PHASE_BLOCK
                ctx.send(ctx.peer(p_v=event.send_to_slab), own, phase=phase, step=event.step)
                block = ctx.receive(
                    ctx.peer(p_v=event.recv_from_slab), phase=phase, step=event.step
                )
                slab = event.recv_from_slab
                if slab not in sums:
                    sum_phase = PHASE_SUM_K if event.kind == "vol_k" else PHASE_SUM
                    sums[slab] = ctx.reduce_field_axis(
                        column_sums(block), phase=sum_phase, step=event.step
                    )
                if event.kind == "vol_k":
                    vk = (slab, block)
                else:
                    vj = (slab, block)
                continue
            records.extend(
                _execute_slice(ctx, event, own, vj, vk, sums, dense, stages, n_vp, dt)
            )
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
    return _gather(
        problem, grid, transport, kern_name, outs, elapsed,
        stages=None if stage is None else stages,
    )


def _execute_slice(ctx, task: SliceTask3, own, vj, vk, sums, dense, stages, n_vp, dt):
    blocks = task.blocks
    if task.block_class is BlockClass.DIAGONAL_EDGE:
        V = [own, own, own]
    elif task.block_class is BlockClass.FACE:
        assert vj is not None and vj[0] == blocks[1]
        V = [own, vj[1], vj[1]]
    else:
        assert vj is not None and vj[0] == blocks[1]
        assert vk is not None and vk[0] == blocks[2]
        V = [own, vj[1], vk[1]]
    S = [sums[b] for b in blocks]

    a = sliced_axis(task)
    b, c = (ax for ax in (0, 1, 2) if ax != a)
    role = sorted((0, 1, 2), key=lambda ax: (blocks[ax], ax))  # canonical i, j, k

    part = dense(V[b], V[c])
    P_bc = ctx.reduce_field_axis(part, phase=PHASE_TASK, step=task.counter)

    if task.block_class is BlockClass.FACE:
        cells = _face_cells(n_vp)
    elif task.block_class is BlockClass.VOLUME:
        cells = _volume_cells(n_vp)
    records: list[MetricRecord] = []
    emit = ctx.coords.p_f == 0
    for s_t in stages:
        lo, hi = stage_range(s_t, task.slice_index, n_vp, ctx.grid.n_st)
        for t in range(lo, hi):
            x_t = V[a][:, t]
            Xb = xj_columns(V[b], x_t)
            Xc = xj_columns(V[c], x_t)
            buf = np.concatenate([column_sums(Xb), column_sums(Xc), dense(Xb, V[c]).ravel(order="F")])
            red = ctx.reduce_field_axis(buf, phase=PHASE_PIPE, step=task.counter * n_vp + t)
            if not emit:
                continue
            p_ab = red[:n_vp]
            p_ac = red[n_vp:2 * n_vp]
            B = red[2 * n_vp:].reshape((n_vp, n_vp), order="F")
            comp = {
                frozenset((a, b)): p_ab[:, None],
                frozenset((a, c)): p_ac[None, :],
                frozenset((b, c)): P_bc,
            }
            n3 = (
                (comp[frozenset((role[0], role[1]))] + comp[frozenset((role[0], role[2]))])
                + comp[frozenset((role[1], role[2]))]
            ) - B
            terms = {a: S[a][t], b: S[b][:, None], c: S[c][None, :]}
            d3 = (terms[role[0]] + terms[role[1]]) + terms[role[2]]
            zero = d3 == 0
            vals = np.where(zero, dt(0), (dt(1.5) * n3) / np.where(zero, dt(1), d3))
            if task.block_class is BlockClass.DIAGONAL_EDGE:
                cells = _edge_cells(t, n_vp)
            base = [blocks[ax] * n_vp for ax in (0, 1, 2)]
            for lb, lc in cells:
                local = {a: t, b: lb, c: lc}
                ids = tuple(base[ax] + local[ax] for ax in role)
                records.append(
                    MetricRecord(TupleId(ids), vals[lb, lc], degenerate=bool(zero[lb, lc]))
                )
    return records
