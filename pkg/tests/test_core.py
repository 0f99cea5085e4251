from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from propsim.core import (
    ConfigError,
    DataError,
    DecompGrid,
    RankCoords,
    TupleId,
    VectorBlock,
    coords_of_rank,
    iter_pairs,
    iter_triples,
    pair_index,
    pair_unindex,
    rank_of_coords,
    triple_index,
    triple_unindex,
    unique_tuple_count,
)


def test_rank_layout_field_fastest():
    grid = DecompGrid(n_pf=2, n_pv=3, n_pr=2)
    assert coords_of_rank(0, grid) == RankCoords(0, 0, 0)
    assert coords_of_rank(1, grid) == RankCoords(1, 0, 0)
    assert coords_of_rank(2, grid) == RankCoords(0, 1, 0)
    assert coords_of_rank(5, grid) == RankCoords(1, 2, 0)
    assert coords_of_rank(6, grid) == RankCoords(0, 0, 1)
    assert coords_of_rank(11, grid) == RankCoords(1, 2, 1)


@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5))
def test_rank_coords_roundtrip(n_pf, n_pv, n_pr):
    grid = DecompGrid(n_pf=n_pf, n_pv=n_pv, n_pr=n_pr)
    for rank in range(grid.n_p):
        assert rank_of_coords(coords_of_rank(rank, grid), grid) == rank


def test_pair_index_examples():
    assert pair_index(0, 1, 6) == 0
    assert pair_index(4, 5, 6) == 14
    assert unique_tuple_count(6, 2) == 15
    assert unique_tuple_count(6, 3) == 20


def test_triple_index_examples():
    assert triple_index(0, 1, 2, 6) == 0
    assert triple_index(0, 2, 4, 6) == 5
    assert triple_index(3, 4, 5, 6) == 19
    assert triple_index(0, 1, 5, 6) == 3
    assert triple_index(2, 3, 5, 6) == 17


@pytest.mark.parametrize("n_v", [2, 3, 7, 24, 64])
def test_pair_index_is_lexicographic_and_invertible(n_v):
    seq = list(iter_pairs(n_v))
    assert seq == sorted(seq)
    assert [pair_index(i, j, n_v) for i, j in seq] == list(range(len(seq)))
    assert [pair_unindex(t, n_v) for t in range(len(seq))] == seq


@pytest.mark.parametrize("n_v", [3, 4, 9, 24])
def test_triple_index_is_lexicographic_and_invertible(n_v):
    seq = list(itertools.combinations(range(n_v), 3))
    assert list(iter_triples(n_v)) == seq
    assert [triple_index(i, j, k, n_v) for i, j, k in seq] == list(range(len(seq)))
    assert [triple_unindex(t, n_v) for t in range(len(seq))] == seq


def test_tuple_id_validation():
    TupleId((0, 1))
    TupleId((3, 5, 9))
    with pytest.raises(ValueError):
        TupleId((1, 1))
    with pytest.raises(ValueError):
        TupleId((2, 1, 3))
    with pytest.raises(ValueError):
        TupleId((0,))


def test_grid_validation():
    DecompGrid(n_pf=2, n_pv=3, n_pr=2).validate(n_f=8, n_v=12, arity=2)
    with pytest.raises(ConfigError):
        DecompGrid(n_pv=5).validate(n_f=8, n_v=12, arity=2)
    with pytest.raises(ConfigError):
        DecompGrid(n_pf=3).validate(n_f=8, n_v=12, arity=2)
    with pytest.raises(ConfigError):
        DecompGrid(n_st=2).validate(n_f=8, n_v=12, arity=2)
    # 3-way: block edge must divide into sixths times stages
    DecompGrid(n_pv=2, n_st=1).validate(n_f=8, n_v=12, arity=3)
    with pytest.raises(ConfigError):
        DecompGrid(n_pv=2, n_st=2).validate(n_f=8, n_v=12, arity=3)
    with pytest.raises(ConfigError):
        DecompGrid(n_pv=4).validate(n_f=8, n_v=12, arity=3)


def test_vector_block_rejects_bad_data():
    good = np.asfortranarray(np.ones((4, 3)))
    VectorBlock(good, 0, 0)
    bad = good.copy(order="F")
    bad[1, 2] = -0.5
    with pytest.raises(DataError):
        VectorBlock(bad, 0, 0)
    bad[1, 2] = np.nan
    with pytest.raises(DataError):
        VectorBlock(bad, 0, 0)
