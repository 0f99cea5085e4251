"""Min-product GEMM kernels: M[i, j] = sum_q min(W[q, i], V[q, j]).

Every kernel accumulates each output element over the full field extent in
ascending q order, so the naive, blocked, and bit-packed variants agree
bitwise on identical inputs (the blocked kernel tiles output coordinates
only).  The naive triple loop is the reference the others are held to.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import DataError, unique_tuple_count

DEFAULT_TILE = (64, 128)

# Op tallies follow the summation convention: reducing k terms counts k-1
# additions; one three-way min counts two min operations.


class OpCounter:
    """Tally of scalar adds / mins / multiplies.  Counting takes a lock, so
    one counter may be shared by every worker thread of a run; forked
    workers still need their own plus a merge."""

    __slots__ = ("adds", "mins", "muls", "_lock")

    def __init__(self, adds: int = 0, mins: int = 0, muls: int = 0):
        self.adds = adds
        self.mins = mins
        self.muls = muls
        self._lock = threading.Lock()

    def count(self, adds: int = 0, mins: int = 0, muls: int = 0) -> None:
        with self._lock:
            self.adds += adds
            self.mins += mins
            self.muls += muls

    def merge(self, other: "OpCounter") -> None:
        self.adds += other.adds
        self.mins += other.mins
        self.muls += other.muls

    @property
    def total(self) -> int:
        return self.adds + self.mins + self.muls

    def __repr__(self) -> str:
        return f"OpCounter(adds={self.adds}, mins={self.mins}, muls={self.muls})"


_active: OpCounter | None = None


def enable_op_counting() -> OpCounter:
    global _active
    _active = OpCounter()
    return _active


def disable_op_counting() -> None:
    global _active
    _active = None


def op_counter() -> OpCounter | None:
    """The module-wide counter, or None when counting is disabled."""
    return _active


def _resolve(counter: OpCounter | None) -> OpCounter | None:
    return counter if counter is not None else _active


@njit(cache=True, nogil=True)
def _naive_kernel(W, V, M):
    nf = W.shape[0]
    m = W.shape[1]
    n = V.shape[1]
    for i in range(m):
        for j in range(n):
            acc = M[i, j]
            for q in range(nf):
                w = W[q, i]
                v = V[q, j]
                acc = acc + (w if w < v else v)
            M[i, j] = acc


@njit(cache=True, nogil=True)
def _blocked_kernel(W, V, M, ti, tj):
    # Tiles cover output coordinates only; the q loop always runs the full
    # extent in ascending order, so rounding matches the naive kernel per
    # element.  The tile copy of V puts rows contiguous so the inner loop
    # vectorizes across output columns.
    nf = W.shape[0]
    m = W.shape[1]
    n = V.shape[1]
    for j0 in range(0, n, tj):
        j1 = min(j0 + tj, n)
        bw = j1 - j0
        Vp = np.ascontiguousarray(V[:, j0:j1])
        for i0 in range(0, m, ti):
            i1 = min(i0 + ti, m)
            for i in range(i0, i1):
                acc = M[i, j0:j1].copy()
                for q in range(nf):
                    w = W[q, i]
                    row = Vp[q]
                    for jj in range(bw):
                        v = row[jj]
                        acc[jj] = acc[jj] + (w if w < v else v)
                M[i, j0:j1] = acc


@njit(cache=True, nogil=True)
def _colsum_kernel(V, out):
    nf = V.shape[0]
    for i in range(V.shape[1]):
        acc = out[i]
        for q in range(nf):
            acc = acc + V[q, i]
        out[i] = acc


@njit(cache=True, nogil=True)
def _pair_num_kernel(V, out):
    nf = V.shape[0]
    n = V.shape[1]
    idx = 0
    for i in range(n - 1):
        for j in range(i + 1, n):
            acc = out[idx]
            for q in range(nf):
                a = V[q, i]
                b = V[q, j]
                acc = acc + (a if a < b else b)
            out[idx] = acc
            idx += 1


@njit(cache=True, nogil=True)
def _triple_num_kernel(V, out):
    nf = V.shape[0]
    n = V.shape[1]
    idx = 0
    for i in range(n - 2):
        for j in range(i + 1, n - 1):
            for k in range(j + 1, n):
                acc = out[idx]
                for q in range(nf):
                    a = V[q, i]
                    b = V[q, j]
                    c = V[q, k]
                    ab = a if a < b else b
                    acc = acc + (ab if ab < c else c)
                out[idx] = acc
                idx += 1


def _check_operands(W: np.ndarray, V: np.ndarray) -> None:
    if W.ndim != 2 or V.ndim != 2:
        raise ValueError("operands must be 2-d")
    if W.shape[0] != V.shape[0]:
        raise ValueError(f"field extents differ: {W.shape[0]} vs {V.shape[0]}")
    if W.dtype != V.dtype:
        raise ValueError(f"operand dtypes differ: {W.dtype} vs {V.dtype}")


def mgemm_naive(W: np.ndarray, V: np.ndarray, counter: OpCounter | None = None) -> np.ndarray:
    """Reference min-product: plain triple loop, ascending q accumulation."""
    _check_operands(W, V)
    W = np.asfortranarray(W)
    V = np.asfortranarray(V)
    nf, m = W.shape
    n = V.shape[1]
    M = np.zeros((m, n), dtype=W.dtype, order="F")
    _naive_kernel(W, V, M)
    c = _resolve(counter)
    if c is not None:
        c.count(mins=m * n * nf, adds=m * n * max(nf - 1, 0))
    return M


def mgemm_blocked(
    W: np.ndarray,
    V: np.ndarray,
    tile: tuple[int, int] = DEFAULT_TILE,
    counter: OpCounter | None = None,
) -> np.ndarray:
    """Cache-blocked min-product, bitwise equal to :func:`mgemm_naive`."""
    _check_operands(W, V)
    ti, tj = tile
    if ti < 1 or tj < 1:
        raise ValueError(f"tile sides must be >= 1, got {tile}")
    W = np.asfortranarray(W)
    V = np.asfortranarray(V)
    nf, m = W.shape
    n = V.shape[1]
    M = np.zeros((m, n), dtype=W.dtype, order="F")
    _blocked_kernel(W, V, M, ti, tj)
    c = _resolve(counter)
    if c is not None:
        c.count(mins=m * n * nf, adds=m * n * max(nf - 1, 0))
    return M


def column_sums(V: np.ndarray, counter: OpCounter | None = None) -> np.ndarray:
    """Per-column sums, ascending field order; equals diag(mgemm_naive(V, V))."""
    if V.ndim != 2:
        raise ValueError("operand must be 2-d")
    V = np.asfortranarray(V)
    out = np.zeros(V.shape[1], dtype=V.dtype)
    _colsum_kernel(V, out)
    c = _resolve(counter)
    if c is not None:
        c.count(adds=max(V.shape[0] - 1, 0) * V.shape[1])
    return out


def xj_columns(V: np.ndarray, vj: np.ndarray, counter: OpCounter | None = None) -> np.ndarray:
    """Columns min(v_j, v_k) for every column v_k of V (elementwise, no sums)."""
    if vj.shape != (V.shape[0],):
        raise ValueError(f"pivot column shape {vj.shape} does not match field extent {V.shape[0]}")
    out = np.empty(V.shape, dtype=V.dtype, order="F")
    np.minimum(vj[:, None], V, out=out)
    c = _resolve(counter)
    if c is not None:
        c.count(mins=V.shape[0] * V.shape[1])
    return out


def pair_numerators(V: np.ndarray, counter: OpCounter | None = None) -> np.ndarray:
    """Direct 2-way numerators for all unique column pairs, canonical order."""
    V = np.asfortranarray(V)
    nf, n = V.shape
    out = np.zeros(unique_tuple_count(n, 2), dtype=V.dtype)
    _pair_num_kernel(V, out)
    c = _resolve(counter)
    if c is not None:
        npairs = out.shape[0]
        c.count(mins=nf * npairs, adds=max(nf - 1, 0) * npairs)
    return out


def triple_min_numerators(V: np.ndarray, counter: OpCounter | None = None) -> np.ndarray:
    """Direct three-way min sums for all unique column triples, canonical order."""
    V = np.asfortranarray(V)
    nf, n = V.shape
    out = np.zeros(unique_tuple_count(n, 3), dtype=V.dtype)
    _triple_num_kernel(V, out)
    c = _resolve(counter)
    if c is not None:
        ntrip = out.shape[0]
        c.count(mins=2 * nf * ntrip, adds=max(nf - 1, 0) * ntrip)
    return out


# ---------------------------------------------------------------------------
# bit-packed path (0/1 data)


@dataclass(frozen=True)
class BitMatrix:
    """Column bit vectors packed 64 rows per word; padding bits are zero."""

    words: np.ndarray
    n_rows: int

    @property
    def n_cols(self) -> int:
        return self.words.shape[1]


def pack_bits(V: np.ndarray) -> BitMatrix:
    """Pack a 0/1-valued matrix column-wise into uint64 words."""
    if V.ndim != 2:
        raise ValueError("operand must be 2-d")
    ones = V == 1
    if not (ones | (V == 0)).all():
        raise DataError("bit packing needs entries exactly in {0, 1}")
    nf, n = V.shape
    n_words = (nf + 63) // 64 if nf else 0
    words = np.zeros((max(n_words, 1) if nf else 0, n), dtype=np.uint64)
    for q in range(nf):
        words[q >> 6] |= ones[q].astype(np.uint64) << np.uint64(q & 63)
    return BitMatrix(words=words, n_rows=nf)


def mgemm_bitpacked(
    A: BitMatrix, B: BitMatrix, counter: OpCounter | None = None
) -> np.ndarray:
    """Min-product on packed bits: popcount of column AND, as int64 counts."""
    if A.n_rows != B.n_rows:
        raise ValueError(f"row counts differ: {A.n_rows} vs {B.n_rows}")
    m, n = A.n_cols, B.n_cols
    M = np.zeros((m, n), dtype=np.int64, order="F")
    if A.n_rows:
        # chunk over A columns to bound the broadcast temporary
        step = max(1, (1 << 22) // max(n * A.words.shape[0], 1))
        for i0 in range(0, m, step):
            i1 = min(i0 + step, m)
            anded = A.words[:, i0:i1, None] & B.words[:, None, :]
            M[i0:i1] = np.bitwise_count(anded).sum(axis=0, dtype=np.int64)
    c = _resolve(counter)
    if c is not None:
        c.count(mins=m * n * A.n_rows, adds=m * n * max(A.n_rows - 1, 0))
    return M
