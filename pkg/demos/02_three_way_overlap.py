"""Three-way overlap: what the triple metric adds over the three pair scores.

Summing the three pairwise shared masses counts the part common to all
three vectors more than once, so the triple numerator subtracts the
elementwise three-way minimum before scaling:

    1.5 * (min(i,j) + min(i,k) + min(j,k) - min(i,j,k)) / (S_i + S_j + S_k)

The factor 1.5 puts three identical columns at exactly 1.  Below we spell
the arithmetic out per triple and cross-check one value by hand.
"""
from itertools import combinations

import numpy as np

from propsim.core import DecompGrid, Problem, field_range, vector_range
from propsim.metrics3 import run_3way


class MatrixSource:
    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=np.float64)

    def local_block(self, problem, grid, coords):
        f0, f1 = field_range(grid, coords.p_f, problem.n_f)
        v0, v1 = vector_range(grid, coords.p_v, problem.n_v)
        return self.matrix[f0:f1, v0:v1]


rng = np.random.default_rng(7)
n_f, n_v = 5, 6
V = rng.integers(0, 4, size=(n_f, n_v)).astype(np.float64)

problem = Problem(arity=3, n_f=n_f, n_v=n_v, source=MatrixSource(V))
result = run_3way(problem, DecompGrid())

print(f"{n_v} vectors over {n_f} fields, {len(result.records)} triples")
print()
for rec in result.records:
    i, j, k = rec.id.indices
    pair_part = sum(
        np.minimum(V[:, a], V[:, b]).sum() for a, b in combinations((i, j, k), 2)
    )
    common = np.minimum(np.minimum(V[:, i], V[:, j]), V[:, k]).sum()
    total = V[:, (i, j, k)].sum()
    print(
        f"  ({i}, {j}, {k})  value={float(rec.value):.6f}"
        f"   1.5*({pair_part:g}-{common:g})/{total:g}"
    )

# one triple worked through completely, against the same formula
i, j, k = result.records[0].id.indices
pair_part = sum(np.minimum(V[:, a], V[:, b]).sum() for a, b in combinations((i, j, k), 2))
common = np.minimum(np.minimum(V[:, i], V[:, j]), V[:, k]).sum()
by_hand = 1.5 * float(pair_part - common) / float(V[:, (i, j, k)].sum())
print()
print(f"hand check for triple ({i}, {j}, {k}): {by_hand!r}")
print(f"engine value:                          {float(result.records[0].value)!r}")
assert by_hand == float(result.records[0].value)

# identical columns really do score 1 (runs need at least 6 vectors per block)
W = np.tile(V[:, :1], (1, 6))
ident = run_3way(Problem(3, n_f, 6, MatrixSource(W)), DecompGrid())
assert all(float(rec.value) == 1.0 for rec in ident.records)
print(f"six copies of one column: all {len(ident.records)} triples score 1")
