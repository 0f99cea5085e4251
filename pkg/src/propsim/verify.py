"""Bit-exact verification: synthetic inputs, brute-force oracles, checksums.

The oracles evaluate the metric definitions directly with scalar loops in
ascending field order and never touch the kernels, schedules, or engine
they are used to check.  Synthetic generators are pure functions of global
coordinates, so every rank of every grid sees the same logical input.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import (
    ConfigError,
    DataError,
    DecompGrid,
    MetricRecord,
    Problem,
    RankCoords,
    TupleId,
    dtype_of,
    field_range,
    pair_index,
    triple_index,
    vector_range,
)

_MASK64 = (1 << 64) - 1
_MASK128 = (1 << 128) - 1
_MIX_C1 = 0xBF58476D1CE4E5B9
_MIX_C2 = 0x94D049BB133111EB


def mix64(x: int) -> int:
    """64-bit avalanche mix (wrapping arithmetic)."""
    x &= _MASK64
    x ^= x >> 30
    x = (x * _MIX_C1) & _MASK64
    x ^= x >> 27
    x = (x * _MIX_C2) & _MASK64
    x ^= x >> 31
    return x


def _mix64_u64(x: np.ndarray) -> np.ndarray:
    # vectorized twin of mix64 for block generation; uint64 wraps
    x = x.astype(np.uint64)
    x ^= x >> np.uint64(30)
    x *= np.uint64(_MIX_C1)
    x ^= x >> np.uint64(27)
    x *= np.uint64(_MIX_C2)
    x ^= x >> np.uint64(31)
    return x


def value_bits(value) -> int:
    """Bit pattern of a metric value, zero-extended to 64 bits."""
    a = np.asarray(value)
    if a.dtype == np.float32:
        return int(a.view(np.uint32))
    if a.dtype == np.float64:
        return int(a.view(np.uint64))
    raise TypeError(f"metric values must be float32/float64, got {a.dtype}")


@dataclass(frozen=True)
class Checksum128:
    """Order-independent 128-bit wrapping sum over (tuple, value) terms."""

    value: int = 0

    def add_term(self, canonical_index: int, bits: int) -> "Checksum128":
        term = mix64(canonical_index) * (mix64(bits) | 1)
        return Checksum128((self.value + term) & _MASK128)

    def combine(self, other: "Checksum128") -> "Checksum128":
        return Checksum128((self.value + other.value) & _MASK128)

    @property
    def hex(self) -> str:
        return format(self.value, "032x")


def checksum(records: Iterable[MetricRecord], n_v: int) -> Checksum128:
    """Checksum of a record set; raises on duplicate tuple ids."""
    seen: set[tuple[int, ...]] = set()
    acc = Checksum128()
    for rec in records:
        key = rec.id.indices
        if key in seen:
            raise DataError(f"duplicate result tuple {key}")
        seen.add(key)
        acc = acc.add_term(rec.id.canonical_index(n_v), value_bits(rec.value))
    return acc


def combine_checksums(parts: Iterable[Checksum128]) -> Checksum128:
    acc = Checksum128()
    for p in parts:
        acc = acc.combine(p)
    return acc


# ---------------------------------------------------------------------------
# synthetic inputs


@dataclass(frozen=True)
class SyntheticSpec:
    """Deterministic input defined per global element.

    kind "random-exact": value = mix64(seed ^ (q*n_v + i)) mod 2^bits,
    integers small enough that every sum in a run stays exact in the run
    precision.  kind "analytic": v[i, q] = 1 + [q == i (mod n_v)], whose
    metrics have closed forms.
    """

    kind: str
    seed: int
    n_f: int
    n_v: int
    bits: int = 0

    def element(self, q: int, i: int) -> int:
        if self.kind == "random-exact":
            return mix64(self.seed ^ (q * self.n_v + i)) % (1 << self.bits)
        return 1 + (1 if q % self.n_v == i else 0)

    def local_block(self, problem: Problem, grid: DecompGrid, coords: RankCoords) -> np.ndarray:
        if (problem.n_f, problem.n_v) != (self.n_f, self.n_v):
            raise ConfigError(
                f"problem dims ({problem.n_f}, {problem.n_v}) do not match "
                f"synthetic dims ({self.n_f}, {self.n_v})"
            )
        self.check_exactness(problem.precision)
        f0, f1 = field_range(grid, coords.p_f, self.n_f)
        v0, v1 = vector_range(grid, coords.p_v, self.n_v)
        qg = np.arange(f0, f1, dtype=np.uint64)[:, None]
        ig = np.arange(v0, v1, dtype=np.uint64)[None, :]
        if self.kind == "random-exact":
            mixed = _mix64_u64((qg * np.uint64(self.n_v) + ig) ^ np.uint64(self.seed))
            vals = mixed & np.uint64((1 << self.bits) - 1)
        else:
            vals = (qg % np.uint64(self.n_v) == ig).astype(np.uint64) + np.uint64(1)
        return np.asfortranarray(vals.astype(dtype_of(problem.precision)))

    def check_exactness(self, precision: str) -> None:
        if self.kind != "random-exact":
            return
        mant = 24 if precision == "single" else 53
        worst = 3 * self.n_f * ((1 << self.bits) - 1)
        if worst >= (1 << mant):
            raise ConfigError(
                f"bits={self.bits} with n_f={self.n_f} overflows exact {precision} "
                f"accumulation (3*n_f*(2^b-1) = {worst} >= 2^{mant})"
            )

    # closed-form predictors (analytic kind only)

    def _spike_count(self, i: int) -> int:
        return (self.n_f - 1 - i) // self.n_v + 1

    def predicted_pair(self, i: int, j: int, precision: str = "double"):
        dt = dtype_of(precision).type
        n2 = dt(self.n_f)
        d2 = dt(self.n_f + self._spike_count(i)) + dt(self.n_f + self._spike_count(j))
        return (dt(2) * n2) / d2

    def predicted_triple(self, i: int, j: int, k: int, precision: str = "double"):
        dt = dtype_of(precision).type
        nf = dt(self.n_f)
        n3 = ((nf + nf) + nf) - nf
        d3 = (
            dt(self.n_f + self._spike_count(i))
            + dt(self.n_f + self._spike_count(j))
        ) + dt(self.n_f + self._spike_count(k))
        return (dt(1.5) * n3) / d3


def gen_random_exact(seed: int, n_f: int, n_v: int, bits: int) -> SyntheticSpec:
    if not 0 <= bits <= 53:
        raise ConfigError(f"magnitude bits must be in [0, 53], got {bits}")
    return SyntheticSpec(kind="random-exact", seed=seed & _MASK64, n_f=n_f, n_v=n_v, bits=bits)


def gen_analytic(seed: int, n_f: int, n_v: int) -> SyntheticSpec:
    # seed is accepted for interface symmetry; placement is deterministic
    if n_f < n_v:
        raise ConfigError(f"analytic input needs n_f >= n_v, got n_f={n_f} n_v={n_v}")
    return SyntheticSpec(kind="analytic", seed=seed & _MASK64, n_f=n_f, n_v=n_v)


def dense_matrix(spec: SyntheticSpec, precision: str = "double") -> np.ndarray:
    """Materialize the full (n_f, n_v) input for oracle evaluation."""
    problem = Problem(arity=2, n_f=spec.n_f, n_v=spec.n_v, source=spec, precision=precision)
    return problem.block(DecompGrid(), RankCoords(0, 0, 0)).elements


# ---------------------------------------------------------------------------
# brute-force oracles


def _columns(V: np.ndarray) -> list[list]:
    return [list(V[:, i]) for i in range(V.shape[1])]


def _column_sum(col: list, zero):
    acc = zero
    for a in col:
        acc = acc + a
    return acc


def oracle_2way(V: np.ndarray) -> list[MetricRecord]:
    """All unique 2-way metrics by direct evaluation, canonical order."""
    V = np.asfortranarray(V)
    dt = V.dtype.type
    zero = dt(0)
    cols = _columns(V)
    sums = [_column_sum(c, zero) for c in cols]
    out = []
    n = len(cols)
    for i in range(n - 1):
        ci, si = cols[i], sums[i]
        for j in range(i + 1, n):
            cj = cols[j]
            n2 = zero
            for a, b in zip(ci, cj):
                n2 = n2 + (a if a < b else b)
            d2 = si + sums[j]
            if d2 == 0:
                out.append(MetricRecord(TupleId((i, j)), zero, degenerate=True))
            else:
                out.append(MetricRecord(TupleId((i, j)), (dt(2) * n2) / d2))
    return out


def oracle_3way(V: np.ndarray) -> list[MetricRecord]:
    """All unique 3-way metrics by direct evaluation, canonical order."""
    V = np.asfortranarray(V)
    dt = V.dtype.type
    zero = dt(0)
    cols = _columns(V)
    sums = [_column_sum(c, zero) for c in cols]

    def pair_num(ca, cb):
        acc = zero
        for a, b in zip(ca, cb):
            acc = acc + (a if a < b else b)
        return acc

    out = []
    n = len(cols)
    for i in range(n - 2):
        for j in range(i + 1, n - 1):
            nij = pair_num(cols[i], cols[j])
            for k in range(j + 1, n):
                nik = pair_num(cols[i], cols[k])
                njk = pair_num(cols[j], cols[k])
                n3p = zero
                for a, b, c in zip(cols[i], cols[j], cols[k]):
                    ab = a if a < b else b
                    n3p = n3p + (ab if ab < c else c)
                n3 = ((nij + nik) + njk) - n3p
                d3 = (sums[i] + sums[j]) + sums[k]
                if d3 == 0:
                    out.append(MetricRecord(TupleId((i, j, k)), zero, degenerate=True))
                else:
                    out.append(MetricRecord(TupleId((i, j, k)), (dt(1.5) * n3) / d3))
    return out


def records_bitwise_equal(a: list[MetricRecord], b: list[MetricRecord]) -> bool:
    """True when two record sets carry identical ids and value bits."""
    if len(a) != len(b):
        return False
    bm = {r.id.indices: r for r in b}
    for r in a:
        other = bm.get(r.id.indices)
        if other is None or value_bits(r.value) != value_bits(other.value):
            return False
    return True
