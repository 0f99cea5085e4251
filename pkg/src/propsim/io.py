"""Binary vector files, per-rank metric output, and offline index recovery.

Vector files are headerless: n_f * n_v elements in column order, little
endian, nothing else.  Shape and precision live in a text manifest next to
the data (or are supplied by the caller), so the byte count of the file is
fully determined and checked before any element is touched.

Metric output is a directory holding one file per rank, ``metrics_<r>.bin``,
with values only.  No indices are stored: within a rank the records are
sorted by canonical tuple index, and ownership is a pure function of the
run configuration, so ``reconstruct_index`` can name the tuple behind any
(rank, position) after the fact.  ``byte`` mode stores one quantized byte
per metric, ``full`` mode the raw little-endian value.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .core import (
    ConfigError,
    DataError,
    DecompGrid,
    MetricRecord,
    Problem,
    RankCoords,
    TupleId,
    VectorBlock,
    dtype_of,
    field_range,
    iter_pairs,
    iter_triples,
    vector_range,
)
from .engine import TRANSPORT_LABELS
from .schedule import owns_pair, owns_triple

OUTPUT_MODES = ("byte", "full")
MANIFEST_NAME = "manifest.txt"


def _file_dtype(precision: str) -> np.dtype:
    return np.dtype("<f4" if precision == "single" else "<f8")


# ---------------------------------------------------------------------------
# vector files


@dataclass(frozen=True)
class VectorFileSpec:
    """Location and shape of one raw vector file.

    Doubles as a ``Problem`` source: ``local_block`` reads only the slice a
    rank needs, so no worker ever materializes the full set.
    """

    path: str
    n_f: int
    n_v: int
    precision: str = "double"

    def __post_init__(self) -> None:
        if self.n_f < 1 or self.n_v < 1:
            raise ConfigError(f"vector file needs positive dims, got {self.n_f}x{self.n_v}")
        dtype_of(self.precision)

    @property
    def expected_nbytes(self) -> int:
        return self.n_f * self.n_v * _file_dtype(self.precision).itemsize

    def check_size(self) -> None:
        actual = os.path.getsize(self.path)
        if actual != self.expected_nbytes:
            raise DataError(
                f"vector file {self.path}: expected {self.expected_nbytes} bytes "
                f"for {self.n_f}x{self.n_v} {self.precision}, found {actual}"
            )

    def local_block(self, problem: Problem, grid: DecompGrid, coords: RankCoords) -> np.ndarray:
        return read_slice(self, coords, grid).elements


def write_vectors(path: str | Path, matrix: np.ndarray, precision: str = "double") -> VectorFileSpec:
    """Write a fields x vectors matrix as a raw column-major file."""
    arr = np.asfortranarray(matrix, dtype=_file_dtype(precision))
    n_f, n_v = arr.shape
    VectorBlock(arr, field_offset=0, vector_offset=0)  # rejects NaN and negatives
    arr.ravel(order="F").tofile(str(path))
    return VectorFileSpec(path=str(path), n_f=n_f, n_v=n_v, precision=precision)


def read_slice(spec: VectorFileSpec, coords: RankCoords, grid: DecompGrid) -> VectorBlock:
    """Load exactly the (p_f, p_v) block of the file for one rank.

    Every replica along p_r reads the same slice.  The file is validated for
    size first and for finiteness/sign on the loaded elements only.
    """
    if spec.n_f % grid.n_pf or spec.n_v % grid.n_pv:
        raise ConfigError(
            f"grid ({grid.n_pf},{grid.n_pv},{grid.n_pr}) does not divide "
            f"{spec.n_f} fields x {spec.n_v} vectors"
        )
    spec.check_size()
    f0, f1 = field_range(grid, coords.p_f, spec.n_f)
    v0, v1 = vector_range(grid, coords.p_v, spec.n_v)
    # column-major (n_f, n_v) on disk == row-major (n_v, n_f), so a vector
    # range is a contiguous row slice of the memmap
    mm = np.memmap(str(spec.path), dtype=_file_dtype(spec.precision), mode="r", shape=(spec.n_v, spec.n_f))
    arr = np.array(mm[v0:v1, f0:f1].T, dtype=dtype_of(spec.precision), order="F", copy=True)
    del mm
    return VectorBlock(arr, field_offset=f0, vector_offset=v0)


# ---------------------------------------------------------------------------
# byte quantization


def quantize_byte(value: float) -> int:
    """Map a metric in [0, 1] to one byte: floor(clamp(v) * 255 + 0.5)."""
    v = float(value)
    if not math.isfinite(v):
        raise DataError(f"cannot quantize non-finite metric value {value!r}")
    return int(math.floor(min(max(v, 0.0), 1.0) * 255.0 + 0.5))


def quantize_values(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if not np.isfinite(v).all():
        raise DataError("cannot quantize non-finite metric value")
    return np.floor(np.clip(v, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def dequantize_byte(byte: int, precision: str = "double"):
    dt = dtype_of(precision)
    return dt.type(byte) / dt.type(255)


# ---------------------------------------------------------------------------
# metric output directories


@dataclass(frozen=True)
class MetricOutputSpec:
    """Output directory and storage mode for per-rank metric files."""

    directory: str
    mode: str = "full"

    def __post_init__(self) -> None:
        if self.mode not in OUTPUT_MODES:
            raise ConfigError(f"output mode must be one of {OUTPUT_MODES}, got {self.mode!r}")

    def rank_path(self, rank: int) -> str:
        return str(Path(self.directory) / f"metrics_{rank}.bin")

    @property
    def manifest_path(self) -> str:
        return str(Path(self.directory) / MANIFEST_NAME)


def write_metrics(
    records: Sequence[MetricRecord],
    spec: MetricOutputSpec,
    rank: int,
    precision: str = "double",
) -> str:
    """Write one rank's records, sorted by canonical index; returns the path.

    A rank that owns nothing still gets a file, just an empty one, so a
    directory always holds exactly n_p files.
    """
    ordered = sorted(records, key=lambda r: r.id.indices)
    os.makedirs(spec.directory, exist_ok=True)
    path = spec.rank_path(rank)
    values = np.array([r.value for r in ordered], dtype=_file_dtype(precision))
    if spec.mode == "byte":
        quantize_values(values).tofile(path)
    else:
        values.tofile(path)
    return path


def owned_tuples(
    rank: int,
    *,
    arity: int,
    n_v: int,
    grid: DecompGrid,
    stages: Iterable[int] | None = None,
) -> Iterator[TupleId]:
    """Canonical-order tuples stored in one rank's file for this configuration."""
    if arity == 2:
        for i, j in iter_pairs(n_v):
            if owns_pair(i, j, n_v, grid)[0] == rank:
                yield TupleId((i, j))
        return
    wanted = None if stages is None else frozenset(stages)
    for i, j, k in iter_triples(n_v):
        owner, stage, _ = owns_triple(i, j, k, n_v, grid)
        if owner == rank and (wanted is None or stage in wanted):
            yield TupleId((i, j, k))


def reconstruct_index(
    rank: int,
    position: int,
    *,
    arity: int,
    n_v: int,
    grid: DecompGrid,
    stages: Iterable[int] | None = None,
) -> TupleId:
    """Name the tuple at a (rank, position) of an output directory.

    Pure function of the run configuration; needs no data files.
    """
    if position < 0:
        raise IndexError(f"position must be nonnegative, got {position}")
    for pos, tid in enumerate(owned_tuples(rank, arity=arity, n_v=n_v, grid=grid, stages=stages)):
        if pos == position:
            return tid
    raise IndexError(f"rank {rank} holds no record at position {position}")


def read_metrics(
    spec: MetricOutputSpec,
    rank: int,
    *,
    arity: int,
    n_v: int,
    grid: DecompGrid,
    precision: str = "double",
    stages: Iterable[int] | None = None,
) -> list[MetricRecord]:
    """Read one rank's file back into records with reconstructed TupleIds."""
    ids = list(owned_tuples(rank, arity=arity, n_v=n_v, grid=grid, stages=stages))
    path = spec.rank_path(rank)
    unit = 1 if spec.mode == "byte" else _file_dtype(precision).itemsize
    expected = len(ids) * unit
    actual = os.path.getsize(path)
    if actual != expected:
        raise DataError(
            f"metric file {path}: expected {expected} bytes for {len(ids)} records, found {actual}"
        )
    if spec.mode == "byte":
        raw = np.fromfile(path, dtype=np.uint8)
        dt = dtype_of(precision)
        values = raw.astype(dt) / dt.type(255)
    else:
        values = np.fromfile(path, dtype=_file_dtype(precision)).astype(dtype_of(precision))
    return [MetricRecord(tid, val) for tid, val in zip(ids, values)]


# ---------------------------------------------------------------------------
# manifests


def write_manifest(path: str | Path, entries: dict) -> None:
    """Write flat key=value lines; keys and values must be newline-free."""
    lines = []
    for key, value in entries.items():
        k, v = str(key), str(value)
        if "=" in k or "\n" in k or "\n" in v:
            raise DataError(f"manifest entry {key!r} is not representable as key=value")
        lines.append(f"{k}={v}\n")
    with open(path, "w", encoding="ascii") as fh:
        fh.writelines(lines)


def read_manifest(path: str | Path) -> dict[str, str]:
    entries: dict[str, str] = {}
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"manifest {path} line {lineno}: missing '='")
            key, _, value = line.partition("=")
            entries[key] = value
    return entries


def _grid_entries(grid: DecompGrid) -> dict:
    return {"npf": grid.n_pf, "npv": grid.n_pv, "npr": grid.n_pr, "num_stage": grid.n_st}


def grid_from_manifest(entries: dict[str, str]) -> DecompGrid:
    return DecompGrid(
        n_pf=int(entries["npf"]),
        n_pv=int(entries["npv"]),
        n_pr=int(entries["npr"]),
        n_st=int(entries.get("num_stage", 1)),
    )


def stages_from_manifest(entries: dict[str, str]) -> tuple[int, ...] | None:
    raw = entries.get("stages", "all")
    if raw == "all":
        return None
    return tuple(int(s) for s in raw.split(","))


def write_run_output(result, spec: MetricOutputSpec, source: dict | None = None) -> str:
    """Write a finished run: one file per rank plus the directory manifest.

    Ownership is recomputed from the configuration rather than carried
    through the engine, which keeps the files consistent with
    ``reconstruct_index`` by construction.  Returns the manifest path.
    """
    grid = result.grid
    per_rank: dict[int, list[MetricRecord]] = {r: [] for r in range(grid.n_p)}
    for rec in result.records:
        if result.arity == 2:
            owner = owns_pair(*rec.id.indices, result.n_v, grid)[0]
        else:
            owner = owns_triple(*rec.id.indices, result.n_v, grid)[0]
        per_rank[owner].append(rec)
    for rank in range(grid.n_p):
        write_metrics(per_rank[rank], spec, rank, precision=result.precision)
    entries = {
        "format": "metrics",
        "arity": result.arity,
        "num_field": result.n_f,
        "num_vector": result.n_v,
        "precision": result.precision,
        "metric": result.metric,
        "mode": spec.mode,
        **_grid_entries(grid),
        "stages": "all" if result.stages is None else ",".join(map(str, result.stages)),
        "transport": TRANSPORT_LABELS.get(result.transport, result.transport),
        "kernel": result.kernel,
        "record_count": len(result.records),
        "degenerate_count": result.degenerate_count,
        "checksum": f"{result.checksum.value:032x}",
    }
    for key, value in (source or {}).items():
        entries[f"input_{key}"] = value
    write_manifest(spec.manifest_path, entries)
    return spec.manifest_path


def read_run_output(directory: str | Path) -> tuple[dict[str, str], dict[int, list[MetricRecord]]]:
    """Load a metrics directory: (manifest entries, records per rank)."""
    entries = read_manifest(Path(directory) / MANIFEST_NAME)
    if entries.get("format") != "metrics":
        raise DataError(f"{directory} is not a metrics directory")
    grid = grid_from_manifest(entries)
    spec = MetricOutputSpec(directory=str(directory), mode=entries["mode"])
    arity = int(entries["arity"])
    n_v = int(entries["num_vector"])
    stages = stages_from_manifest(entries)
    per_rank = {
        rank: read_metrics(
            spec,
            rank,
            arity=arity,
            n_v=n_v,
            grid=grid,
            precision=entries["precision"],
            stages=stages,
        )
        for rank in range(grid.n_p)
    }
    return entries, per_rank
