"""Command-line front end.

Subcommands: generate synthetic vector files, run a metric computation,
verify a run against reference paths, recover tuple indices from output
positions, suggest a decomposition grid, evaluate the runtime model, run
kernel and scaling benchmarks, and dump a schedule.

Exit codes: 0 success, 1 configuration errors, 2 I/O or data errors,
3 runtime or verification failures.  Reports come in two shapes, a human
paragraph and flat key=value lines, so scripts never parse prose.
"""
from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import (
    ConfigError,
    DataError,
    DecompGrid,
    EngineError,
    Problem,
    dtype_of,
    unique_tuple_count,
)
from .engine import DEFAULT_TIMEOUT, TRANSPORT_LABELS, TrafficStats
from .io import (
    MetricOutputSpec,
    VectorFileSpec,
    grid_from_manifest,
    read_manifest,
    read_run_output,
    reconstruct_index,
    stages_from_manifest,
    write_manifest,
    write_run_output,
    write_vectors,
)
from .metrics2 import (
    KERNELS,
    PHASE_BLOCK,
    PHASE_BLOCK_K,
    PHASE_PIPE,
    PHASE_SUM,
    PHASE_SUM_K,
    PHASE_TASK,
    RunResult,
    run_2way,
)
from .metrics3 import run_3way
from .mingemm import (
    DEFAULT_TILE,
    OpCounter,
    disable_op_counting,
    enable_op_counting,
    mgemm_blocked,
    mgemm_naive,
    mgemm_bitpacked,
    pack_bits,
)
from .schedule import BlockClass, load_stats, schedule_2way, schedule_3way
from .verify import (
    SyntheticSpec,
    dense_matrix,
    gen_analytic,
    gen_random_exact,
    oracle_2way,
    oracle_3way,
    records_bitwise_equal,
    value_bits,
)

TRANSPORT_NAMES = {label: name for name, label in TRANSPORT_LABELS.items()}
SYNTHETIC_KINDS = ("random-exact", "analytic")
PHASE_NAMES = {
    PHASE_BLOCK: "block",
    PHASE_BLOCK_K: "block_k",
    PHASE_SUM: "sum",
    PHASE_SUM_K: "sum_k",
    PHASE_TASK: "task",
    PHASE_PIPE: "pipe",
}


# ---------------------------------------------------------------------------
# run configuration and execution


@dataclass(frozen=True)
class RunConfig:
    """Everything one computation needs, resolved from flags and manifests."""

    arity: int
    n_f: int
    n_v: int
    grid: DecompGrid
    precision: str = "double"
    metric: str = "czekanowski"
    transport: str = "thread"
    kernel: str | None = None
    stage: int | None = None
    synthetic: str | None = None
    seed: int = 0
    bits: int = 8
    input_path: str | None = None
    output_dir: str | None = None
    output_mode: str = "full"
    counters: bool = False
    timeout: float = DEFAULT_TIMEOUT
    inject_delay: float = 0.0
    delay_seed: int = 0

    def source(self) -> tuple[object, dict]:
        """Build the block source plus manifest entries describing it."""
        if self.input_path is not None:
            spec = VectorFileSpec(
                path=self.input_path, n_f=self.n_f, n_v=self.n_v, precision=self.precision
            )
            return spec, {"kind": "file", "path": self.input_path}
        if self.synthetic == "random-exact":
            spec = gen_random_exact(seed=self.seed, n_f=self.n_f, n_v=self.n_v, bits=self.bits)
            return spec, {"kind": "random-exact", "seed": self.seed, "bits": self.bits}
        if self.synthetic == "analytic":
            spec = gen_analytic(seed=self.seed, n_f=self.n_f, n_v=self.n_v)
            return spec, {"kind": "analytic", "seed": self.seed}
        raise ConfigError("need either --input or --synthetic to define the vector set")


@dataclass(frozen=True)
class PerfReport:
    """Timing and work accounting for one run."""

    comparisons: int
    elapsed: float
    phase_seconds: dict[str, float]
    traffic: TrafficStats
    ops: OpCounter | None = None

    @property
    def comparisons_per_sec(self) -> float:
        return self.comparisons / self.elapsed if self.elapsed > 0 else 0.0

    @property
    def ops_per_sec(self) -> float | None:
        if self.ops is None or self.elapsed <= 0:
            return None
        return self.ops.total / self.elapsed

    def entries(self) -> dict:
        out = {
            "comparisons": self.comparisons,
            "comparisons_per_sec": f"{self.comparisons_per_sec:.6g}",
        }
        for name, seconds in self.phase_seconds.items():
            out[f"seconds_{name}"] = f"{seconds:.6f}"
        out["traffic_messages"] = self.traffic.messages
        out["traffic_elements"] = self.traffic.elements
        out["traffic_nbytes"] = self.traffic.nbytes
        for phase, (msgs, elems, nbytes) in sorted(self.traffic.by_phase.items()):
            tag = PHASE_NAMES.get(phase, str(phase))
            out[f"traffic_{tag}_messages"] = msgs
            out[f"traffic_{tag}_elements"] = elems
            out[f"traffic_{tag}_nbytes"] = nbytes
        if self.ops is not None:
            rate = self.ops_per_sec or 0.0
            out["ops_adds"] = self.ops.adds
            out["ops_mins"] = self.ops.mins
            out["ops_muls"] = self.ops.muls
            out["ops_total"] = self.ops.total
            out["ops_per_sec"] = f"{rate:.6g}"
            # reported for inspection, deliberately never asserted
            out["two_comparisons_per_op"] = (
                "yes" if 2 * self.comparisons_per_sec <= rate else "no"
            )
        return out

    def render_text(self) -> str:
        lines = [
            f"time: " + ", ".join(f"{k} {v:.3f}s" for k, v in self.phase_seconds.items()),
            f"work: {self.comparisons} elementwise comparisons, "
            f"{self.comparisons_per_sec:.3g} comparisons/s",
            f"traffic: {self.traffic.messages} messages, {self.traffic.elements} elements, "
            f"{self.traffic.nbytes} bytes",
        ]
        for phase, (msgs, elems, nbytes) in sorted(self.traffic.by_phase.items()):
            lines.append(
                f"  phase {PHASE_NAMES.get(phase, phase)}: {msgs} messages, "
                f"{elems} elements, {nbytes} bytes"
            )
        if self.ops is not None:
            rate = self.ops_per_sec or 0.0
            lines.append(
                f"ops: {self.ops.total} (adds {self.ops.adds}, mins {self.ops.mins}, "
                f"muls {self.ops.muls}), {rate:.3g} ops/s"
            )
            ok = "holds" if 2 * self.comparisons_per_sec <= rate else "does not hold"
            lines.append(f"  2x comparisons/s <= ops/s {ok} on this run")
        return "\n".join(lines)


def execute_run(cfg: RunConfig) -> tuple[RunResult, PerfReport]:
    """Run one configuration end to end; shared by run and verify."""
    t0 = time.perf_counter()
    if cfg.arity == 2 and cfg.stage is not None:
        raise ConfigError("stages apply to 3-way runs only")
    source, source_desc = cfg.source()
    problem = Problem(cfg.arity, cfg.n_f, cfg.n_v, source, cfg.precision, cfg.metric)
    cfg.grid.validate(cfg.n_f, cfg.n_v, cfg.arity)
    counter = None
    if cfg.counters:
        if cfg.transport != "thread":
            raise ConfigError(
                "op counters need the threads transport; forked workers cannot share one"
            )
        counter = enable_op_counting()
    setup = time.perf_counter() - t0
    try:
        kwargs = dict(
            transport=cfg.transport,
            kernel=cfg.kernel,
            timeout=cfg.timeout,
            inject_delay=cfg.inject_delay,
            delay_seed=cfg.delay_seed,
        )
        if cfg.arity == 2:
            result = run_2way(problem, cfg.grid, **kwargs)
        else:
            result = run_3way(problem, cfg.grid, stage=cfg.stage, **kwargs)
    finally:
        if counter is not None:
            disable_op_counting()
    phases = {"setup": setup, "compute": result.elapsed}
    if cfg.output_dir is not None:
        t2 = time.perf_counter()
        spec = MetricOutputSpec(directory=cfg.output_dir, mode=cfg.output_mode)
        write_run_output(result, spec, source=source_desc)
        phases["write"] = time.perf_counter() - t2
    report = PerfReport(
        comparisons=cfg.n_f * len(result.records),
        elapsed=result.elapsed,
        phase_seconds=phases,
        traffic=result.traffic,
        ops=counter,
    )
    return result, report


# ---------------------------------------------------------------------------
# grid suggestion and runtime model


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def suggest_replication(arity: int, n_pv: int, target_units: int) -> int:
    """Replication depth that caps per-rank slice units at the target."""
    if target_units < 1:
        raise ConfigError(f"target units per rank must be positive, got {target_units}")
    if arity == 2:
        return _ceil_div(_ceil_div(n_pv, 2) + 1, target_units)
    if arity == 3:
        return _ceil_div((n_pv + 1) * (n_pv + 2), target_units)
    raise ConfigError(f"arity must be 2 or 3, got {arity}")


def _divisors(n: int) -> list[int]:
    return [d for d in range(1, n + 1) if n % d == 0]


def _block_memory(arity: int, n_fp: int, n_vp: int, esize: int) -> int:
    # resident per rank: own block, visiting registers, numerator tiles,
    # column sums; 3-way holds two visitors and the pipeline tiles
    if arity == 2:
        return (3 * n_fp * n_vp + 2 * n_vp * n_vp + 2 * n_vp) * esize
    return (5 * n_fp * n_vp + 3 * n_vp * n_vp + 3 * n_vp) * esize


def suggest_grid(
    *,
    arity: int,
    n_f: int,
    n_v: int,
    n_proc: int,
    target_units: int,
    memory_bytes: int = 1 << 30,
    precision: str = "double",
) -> DecompGrid:
    """Pick the grid with the largest per-rank block that fits the budgets.

    Replication depth follows the target-units formula; field and vector
    splits grow only as the memory bound demands.  Raises when no divisor
    pair fits inside ``n_proc`` workers.
    """
    esize = dtype_of(precision).itemsize
    best: tuple[tuple, DecompGrid] | None = None
    for n_pv in _divisors(n_v):
        n_vp = n_v // n_pv
        if arity == 3 and n_vp % 6:
            continue
        n_pr = suggest_replication(arity, n_pv, target_units)
        for n_pf in _divisors(n_f):
            if _block_memory(arity, n_f // n_pf, n_vp, esize) > memory_bytes:
                continue
            if n_pf * n_pv * n_pr > n_proc:
                continue
            grid = DecompGrid(n_pf=n_pf, n_pv=n_pv, n_pr=n_pr)
            grid.validate(n_f, n_v, arity)
            key = (-(n_f // n_pf) * n_vp, grid.n_p)
            if best is None or key < best[0]:
                best = (key, grid)
            break  # larger n_pf only shrinks the block further
    if best is None:
        raise ConfigError(
            f"no grid with blocks under {memory_bytes} bytes fits in {n_proc} workers"
        )
    return best[1]


def model_time_2way(ell: float, t_g: float, t_c: float, t_tv: float, t_tm: float, t_cpu: float) -> float:
    """Per-node step model: setup terms plus one GEMM per owned unit."""
    return t_c + t_tv + ell * t_g + t_tm + t_cpu


def model_time_3way(
    ell: float,
    n_vp: int,
    n_st: int,
    t_g: float,
    t_c: float,
    t_tv: float,
    t_tm: float,
    t_cpu: float,
) -> float:
    """Per-node model with the staged pipeline inside every owned unit."""
    per_unit = (3.0 + (n_vp / 6.0) / n_st) * t_g + 3.0 * t_tv + 4.0 * t_tm + t_cpu
    return t_c + t_tv + ell * per_unit


# ---------------------------------------------------------------------------
# benchmarks


def bench_kernels(
    sizes: list[int],
    tiles: list[tuple[int, int]],
    precision: str = "double",
    repeat: int = 3,
) -> list[dict]:
    """Min-product kernel timings, one row per (size, variant)."""
    rng = np.random.default_rng(7)
    rows = []
    for n in sizes:
        V = np.asfortranarray(rng.integers(0, 64, size=(n, n)).astype(dtype_of(precision)))
        variants: list[tuple[str, object]] = [("naive", lambda v=V: mgemm_naive(v, v))]
        for tile in tiles:
            variants.append(
                (f"blocked {tile[0]}x{tile[1]}", lambda v=V, t=tile: mgemm_blocked(v, v, tile=t))
            )
        bits = np.asfortranarray((V % 2 == 0).astype(dtype_of(precision)))
        packed = pack_bits(bits)
        variants.append(("bitpacked", lambda p=packed: mgemm_bitpacked(p, p)))
        for name, fn in variants:
            fn()  # warm the jit cache outside the timed region
            best = min(_timed(fn) for _ in range(repeat))
            rows.append(
                {
                    "size": n,
                    "variant": name,
                    "seconds": best,
                    "comparisons_per_sec": n * n * n / best if best > 0 else 0.0,
                }
            )
    return rows


def _timed(fn) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def bench_scaling(
    workers: list[int],
    *,
    mode: str = "weak",
    n_v: int = 256,
    base_n_f: int = 256,
    repeat: int = 3,
    arity: int = 2,
) -> list[dict]:
    """Thread-transport scaling sweep along the field axis.

    Weak mode grows the field count with the worker count so per-worker
    work is constant; strong mode fixes the total problem.  Timings are
    wall clock around the complete run, so the serial result-assembly
    stage counts too and weak scaling amortizes it.  Rows carry aggregate
    and per-worker comparison rates plus efficiency against the
    single-worker row.
    """
    if mode not in ("weak", "strong"):
        raise ConfigError(f"scaling mode must be weak or strong, got {mode!r}")
    total_f = base_n_f * max(workers)
    rows = []
    for w in workers:
        n_f = base_n_f * w if mode == "weak" else total_f
        spec = gen_random_exact(seed=23, n_f=n_f, n_v=n_v, bits=8)
        problem = Problem(arity, n_f, n_v, spec)
        grid = DecompGrid(n_pf=w)
        runner = run_2way if arity == 2 else run_3way
        best = min(_timed(lambda: runner(problem, grid)) for _ in range(repeat))
        comparisons = n_f * unique_tuple_count(n_v, arity)
        rate = comparisons / best
        rows.append(
            {
                "workers": w,
                "num_field": n_f,
                "seconds": best,
                "comparisons": comparisons,
                "rate": rate,
                "rate_per_worker": rate / w,
            }
        )
    base = rows[0]
    for row in rows:
        if mode == "weak":
            row["efficiency"] = row["rate_per_worker"] / base["rate_per_worker"]
        else:
            row["efficiency"] = base["seconds"] / (row["seconds"] * row["workers"] / base["workers"])
    return rows


# ---------------------------------------------------------------------------
# subcommands


def _print_kv(entries: dict, fh=None) -> None:
    for key, value in entries.items():
        print(f"{key}={value}", file=fh or sys.stdout)


def cmd_generate(args) -> int:
    if args.synthetic == "random-exact":
        spec = gen_random_exact(seed=args.seed, n_f=args.num_field, n_v=args.num_vector, bits=args.bits)
    else:
        spec = gen_analytic(seed=args.seed, n_f=args.num_field, n_v=args.num_vector)
    matrix = dense_matrix(spec, args.precision)
    fspec = write_vectors(args.output, matrix, precision=args.precision)
    entries = {
        "format": "vectors",
        "num_field": fspec.n_f,
        "num_vector": fspec.n_v,
        "precision": fspec.precision,
        "kind": args.synthetic,
        "seed": args.seed,
    }
    if args.synthetic == "random-exact":
        entries["bits"] = args.bits
    write_manifest(f"{args.output}.manifest", entries)
    print(f"wrote {fspec.expected_nbytes} bytes to {args.output}")
    _print_kv(entries)
    return 0


def _config_from_args(args) -> RunConfig:
    n_f, n_v, precision = args.num_field, args.num_vector, args.precision
    if args.input is not None:
        sidecar = Path(f"{args.input}.manifest")
        if sidecar.exists():
            entries = read_manifest(sidecar)
            n_f = n_f or int(entries["num_field"])
            n_v = n_v or int(entries["num_vector"])
            precision = precision or entries["precision"]
    precision = precision or "double"
    if not n_f or not n_v:
        raise ConfigError("--num-field and --num-vector are required without an input manifest")
    grid = DecompGrid(n_pf=args.npf, n_pv=args.npv, n_pr=args.npr, n_st=args.num_stage)
    return RunConfig(
        arity=args.num_way,
        n_f=n_f,
        n_v=n_v,
        grid=grid,
        precision=precision,
        metric=args.metric,
        transport=TRANSPORT_NAMES[args.transport],
        kernel=args.kernel,
        stage=args.stage,
        synthetic=args.synthetic,
        seed=args.seed,
        bits=args.bits,
        input_path=args.input,
        output_dir=args.output,
        output_mode=args.output_mode,
        counters=args.counters == "on",
        timeout=args.timeout,
        inject_delay=args.inject_delay,
        delay_seed=args.delay_seed,
    )


def _run_entries(cfg: RunConfig, result: RunResult, report: PerfReport) -> dict:
    entries = {
        "arity": result.arity,
        "num_field": result.n_f,
        "num_vector": result.n_v,
        "precision": result.precision,
        "metric": result.metric,
        "npf": cfg.grid.n_pf,
        "npv": cfg.grid.n_pv,
        "npr": cfg.grid.n_pr,
        "num_stage": cfg.grid.n_st,
        "stages": "all" if result.stages is None else ",".join(map(str, result.stages)),
        "transport": TRANSPORT_LABELS[result.transport],
        "kernel": result.kernel,
        "record_count": len(result.records),
        "degenerate_count": result.degenerate_count,
        "checksum": f"{result.checksum.value:032x}",
    }
    entries.update(report.entries())
    return entries


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    result, report = execute_run(cfg)
    stage_note = "" if result.stages is None else f" (stage {','.join(map(str, result.stages))})"
    print(
        f"{result.arity}-way {result.metric}, {result.n_f} fields x {result.n_v} vectors, "
        f"{result.precision}{stage_note}"
    )
    print(
        f"grid: npf={cfg.grid.n_pf} npv={cfg.grid.n_pv} npr={cfg.grid.n_pr} "
        f"num_stage={cfg.grid.n_st} ({cfg.grid.n_p} ranks), {args.transport}, "
        f"kernel {result.kernel}"
    )
    print(f"metrics: {len(result.records)} records, {result.degenerate_count} degenerate")
    print(f"checksum: {result.checksum.value:032x}")
    print(report.render_text())
    entries = _run_entries(cfg, result, report)
    print("---")
    _print_kv(entries)
    if cfg.output_dir is not None:
        report_path = Path(cfg.output_dir) / "report.txt"
        with open(report_path, "w", encoding="ascii") as fh:
            _print_kv(entries, fh)
        print(f"output: {cfg.output_dir}")
    return 0


def cmd_verify(args) -> int:
    cfg = _config_from_args(args)
    checks: list[tuple[str, bool, str]] = []

    source, _ = cfg.source()
    if isinstance(source, SyntheticSpec) and source.kind == "random-exact":
        ok = True
        try:
            source.check_exactness(cfg.precision)
        except ConfigError:
            ok = False
        checks.append(("exactness precondition", ok, ""))

    result, _ = execute_run(cfg)
    reference_cfg = RunConfig(
        arity=cfg.arity,
        n_f=cfg.n_f,
        n_v=cfg.n_v,
        grid=DecompGrid(),
        precision=cfg.precision,
        metric=cfg.metric,
        kernel=cfg.kernel,
        synthetic=cfg.synthetic,
        seed=cfg.seed,
        bits=cfg.bits,
        input_path=cfg.input_path,
        timeout=cfg.timeout,
    )
    reference, _ = execute_run(reference_cfg)
    if cfg.stage is None:
        ok = records_bitwise_equal(list(result.records), list(reference.records))
        ok = ok and result.checksum == reference.checksum
        checks.append(("distributed vs single rank", ok, f"checksum {result.checksum.value:032x}"))
    else:
        ref_by_id = {rec.id: rec for rec in reference.records}
        ok = all(
            rec.id in ref_by_id and value_bits(rec.value) == value_bits(ref_by_id[rec.id].value)
            for rec in result.records
        )
        checks.append(("stage subset vs single rank", ok, f"{len(result.records)} records"))

    delayed, _ = execute_run(replace(cfg, inject_delay=0.002, delay_seed=17, output_dir=None))
    checks.append(("delay-injected rerun", delayed.checksum == result.checksum, ""))

    if isinstance(source, SyntheticSpec) and source.kind == "analytic":
        predict = source.predicted_pair if cfg.arity == 2 else source.predicted_triple
        ok = all(
            value_bits(rec.value) == value_bits(predict(*rec.id.indices, cfg.precision))
            for rec in result.records
        )
        checks.append(("analytic predictor", ok, ""))

    small = cfg.n_v <= (32 if cfg.arity == 2 else 16)
    if small and cfg.stage is None:
        V = _materialize(source, cfg)
        oracle = oracle_2way(V) if cfg.arity == 2 else oracle_3way(V)
        checks.append(
            ("brute-force oracle", records_bitwise_equal(list(result.records), oracle), "")
        )

    failed = False
    for name, ok, note in checks:
        suffix = f" ({note})" if note else ""
        print(f"{name}: {'PASS' if ok else 'FAIL'}{suffix}")
        failed = failed or not ok
    print(f"verify: {'FAIL' if failed else 'PASS'}")
    return 3 if failed else 0


def _materialize(source, cfg: RunConfig) -> np.ndarray:
    if isinstance(source, SyntheticSpec):
        return dense_matrix(source, cfg.precision)
    from .io import read_slice
    from .core import RankCoords

    return read_slice(source, RankCoords(0, 0, 0), DecompGrid()).elements


def cmd_index(args) -> int:
    entries = read_manifest(Path(args.input) / "manifest.txt")
    grid = grid_from_manifest(entries)
    arity = int(entries["arity"])
    n_v = int(entries["num_vector"])
    stages = stages_from_manifest(entries)
    if args.rank is not None and args.position is not None:
        tid = reconstruct_index(args.rank, args.position, arity=arity, n_v=n_v, grid=grid, stages=stages)
        print(f"rank={args.rank} position={args.position} tuple={','.join(map(str, tid.indices))}")
        return 0
    _, per_rank = read_run_output(args.input)
    shown = 0
    for rank in sorted(per_rank):
        if args.rank is not None and rank != args.rank:
            continue
        for position, rec in enumerate(per_rank[rank]):
            print(
                f"rank={rank} position={position} "
                f"tuple={','.join(map(str, rec.id.indices))} value={float(rec.value)!r}"
            )
            shown += 1
            if args.limit and shown >= args.limit:
                return 0
    return 0


def cmd_suggest(args) -> int:
    grid = suggest_grid(
        arity=args.num_way,
        n_f=args.num_field,
        n_v=args.num_vector,
        n_proc=args.num_proc,
        target_units=args.target_units,
        memory_bytes=args.memory_bytes,
        precision=args.precision,
    )
    stats = load_stats(grid, args.num_way)
    _print_kv(
        {
            "npf": grid.n_pf,
            "npv": grid.n_pv,
            "npr": grid.n_pr,
            "ranks": grid.n_p,
            "block_fields": args.num_field // grid.n_pf,
            "block_vectors": args.num_vector // grid.n_pv,
            "max_units_per_rank": stats.max_units,
            "imbalance_ratio": f"{stats.imbalance_ratio:.4f}",
        }
    )
    return 0


def cmd_model(args) -> int:
    if args.num_way == 2:
        predicted = model_time_2way(args.ell, args.tg, args.tc, args.ttv, args.ttm, args.tcpu)
    else:
        if args.nvp is None:
            raise ConfigError("3-way model needs --nvp")
        predicted = model_time_3way(
            args.ell, args.nvp, args.num_stage, args.tg, args.tc, args.ttv, args.ttm, args.tcpu
        )
    print(f"predicted_time={predicted:.6g}")
    return 0


def _render_table(rows: list[dict]) -> str:
    if not rows:
        return "(no rows)"
    cols = list(rows[0].keys())
    cells = [[_fmt_cell(row[c]) for c in cols] for row in rows]
    widths = [max(len(c), *(len(r[i]) for r in cells)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    for r in cells:
        lines.append("  ".join(v.rjust(w) for v, w in zip(r, widths)))
    return "\n".join(lines)


def _fmt_cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def _write_csv(path: str, rows: list[dict]) -> None:
    import csv

    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    tiles = []
    for t in args.tiles.split(","):
        a, _, b = t.partition("x")
        tiles.append((int(a), int(b)))
    workers = [int(w) for w in args.workers.split(",")]
    all_rows: list[dict] = []

    kernel_rows = bench_kernels(sizes, tiles, precision=args.precision, repeat=args.repeat)
    print("kernel microbenchmarks")
    print(_render_table(kernel_rows))
    all_rows += [{"section": "kernel", **r} for r in kernel_rows]

    for mode in ("weak", "strong") if args.scaling == "both" else (args.scaling,):
        if mode == "none":
            continue
        rows = bench_scaling(
            workers,
            mode=mode,
            n_v=args.num_vector,
            base_n_f=args.num_field,
            repeat=args.repeat,
        )
        print(f"\n{mode} scaling, thread transport, field axis")
        print(_render_table(rows))
        all_rows += [{"section": mode, **r} for r in rows]

    if args.csv:
        keys: list[str] = []
        for row in all_rows:
            keys += [k for k in row if k not in keys]
        normalized = [{k: row.get(k, "") for k in keys} for row in all_rows]
        _write_csv(args.csv, normalized)
        print(f"\ncsv: {args.csv}")
    return 0


def cmd_dump_schedule(args) -> int:
    grid = DecompGrid(n_pf=args.npf, n_pv=args.npv, n_pr=args.npr, n_st=args.num_stage)
    if args.num_way == 2:
        sched = schedule_2way(grid)
    else:
        sched = schedule_3way(grid)
    for rank in sorted(sched):
        if args.rank is not None and rank != args.rank:
            continue
        tasks = sched[rank]
        print(f"rank {rank}: {len(tasks)} units")
        for t in tasks:
            if args.num_way == 2:
                tag = " diagonal" if t.diagonal else ""
                print(f"  step {t.step}: block ({t.row_block},{t.col_block}){tag}")
            else:
                cls = {
                    BlockClass.DIAGONAL_EDGE: "edge",
                    BlockClass.FACE: "face",
                    BlockClass.VOLUME: "volume",
                }[t.block_class]
                print(
                    f"  counter {t.counter}: blocks {t.blocks} {cls} slice {t.slice_index}"
                )
    stats = load_stats(grid, args.num_way)
    print(f"units per rank: {list(stats.units_per_rank)}")
    print(f"imbalance ratio: {stats.imbalance_ratio:.4f}")
    if stats.volume_fraction is not None:
        print(f"volume fraction: {stats.volume_fraction:.4f} (ideal {stats.ideal_unit_ratio:.4f})")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_problem_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--num-way", type=int, choices=(2, 3), default=2)
    p.add_argument("--num-field", type=int, default=None)
    p.add_argument("--num-vector", type=int, default=None)
    p.add_argument("--precision", choices=("single", "double"), default=None)
    p.add_argument("--metric", choices=("czekanowski", "sorenson"), default="czekanowski")


def _add_source_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", default=None, help="raw vector file")
    p.add_argument("--synthetic", choices=SYNTHETIC_KINDS, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bits", type=int, default=8, help="magnitude bits for random-exact")


def _add_grid_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--npf", type=int, default=1)
    p.add_argument("--npv", type=int, default=1)
    p.add_argument("--npr", type=int, default=1)
    p.add_argument("--num-stage", type=int, default=1)
    p.add_argument("--stage", type=int, default=None)


def _add_exec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--transport", choices=tuple(TRANSPORT_NAMES), default="threads")
    p.add_argument("--kernel", choices=KERNELS, default=None)
    p.add_argument("--counters", choices=("on", "off"), default="off")
    p.add_argument("--timeout", type=float, default=DEFAULT_TIMEOUT)
    p.add_argument("--inject-delay", type=float, default=0.0)
    p.add_argument("--delay-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="propsim",
        description="exhaustive 2-way and 3-way proportional-similarity metrics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic vector file")
    p.add_argument("--synthetic", choices=SYNTHETIC_KINDS, required=True)
    p.add_argument("--num-field", type=int, required=True)
    p.add_argument("--num-vector", type=int, required=True)
    p.add_argument("--bits", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", choices=("single", "double"), default="double")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="compute metrics")
    _add_problem_flags(p)
    _add_source_flags(p)
    _add_grid_flags(p)
    _add_exec_flags(p)
    p.add_argument("--output", default=None, help="metrics output directory")
    p.add_argument("--output-mode", choices=("byte", "full"), default="full")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="run and check against reference paths")
    _add_problem_flags(p)
    _add_source_flags(p)
    _add_grid_flags(p)
    _add_exec_flags(p)
    p.set_defaults(func=cmd_verify, output=None, output_mode="full")

    p = sub.add_parser("index", help="recover tuples behind output positions")
    p.add_argument("--input", required=True, help="metrics output directory")
    p.add_argument("--rank", type=int, default=None)
    p.add_argument("--position", type=int, default=None)
    p.add_argument("--limit", type=int, default=None)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("suggest", help="suggest a decomposition grid")
    p.add_argument("--num-way", type=int, choices=(2, 3), default=2)
    p.add_argument("--num-field", type=int, required=True)
    p.add_argument("--num-vector", type=int, required=True)
    p.add_argument("--num-proc", type=int, required=True)
    p.add_argument("--target-units", type=int, required=True)
    p.add_argument("--memory-bytes", type=int, default=1 << 30)
    p.add_argument("--precision", choices=("single", "double"), default="double")
    p.set_defaults(func=cmd_suggest)

    p = sub.add_parser("model", help="evaluate the runtime model")
    p.add_argument("--num-way", type=int, choices=(2, 3), default=2)
    p.add_argument("--ell", type=float, required=True, help="owned units per rank")
    p.add_argument("--nvp", type=int, default=None)
    p.add_argument("--num-stage", type=int, default=1)
    p.add_argument("--tg", type=float, default=0.0)
    p.add_argument("--tc", type=float, default=0.0)
    p.add_argument("--ttv", type=float, default=0.0)
    p.add_argument("--ttm", type=float, default=0.0)
    p.add_argument("--tcpu", type=float, default=0.0)
    p.set_defaults(func=cmd_model)

    p = sub.add_parser("bench", help="kernel and scaling benchmarks")
    p.add_argument("--sizes", default="192,384")
    p.add_argument("--tiles", default="64x128")
    p.add_argument("--workers", default="1,2,4,8")
    p.add_argument("--num-vector", type=int, default=256)
    p.add_argument("--num-field", type=int, default=256)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--scaling", choices=("weak", "strong", "both", "none"), default="both")
    p.add_argument("--precision", choices=("single", "double"), default="double")
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("dump-schedule", help="print per-rank task lists")
    p.add_argument("--num-way", type=int, choices=(2, 3), default=2)
    p.add_argument("--npf", type=int, default=1)
    p.add_argument("--npv", type=int, default=1)
    p.add_argument("--npr", type=int, default=1)
    p.add_argument("--num-stage", type=int, default=1)
    p.add_argument("--rank", type=int, default=None)
    p.set_defaults(func=cmd_dump_schedule)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except EngineError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
