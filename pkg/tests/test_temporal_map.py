import numpy as np
import pytest

from glanceloc.numerics import seeded_rng
from glanceloc.temporal_map import build_map, contains, flat_index, iou, \
    moment_grid, num_moments, unflatten

from oracles import oracle_iou, oracle_pool


def test_flat_index_exhaustive_n3():
    expected = {(0, 0): 0, (0, 1): 1, (0, 2): 2, (1, 1): 3, (1, 2): 4, (2, 2): 5}
    for (i, j), z in expected.items():
        assert flat_index(i, j, 3) == z
        assert unflatten(z, 3) == (i, j)


def test_flat_index_round_trip_all_n():
    for n in range(1, 17):
        seen = set()
        for i in range(n):
            for j in range(i, n):
                z = flat_index(i, j, n)
                assert unflatten(z, n) == (i, j)
                seen.add(z)
        assert seen == set(range(num_moments(n)))


def test_flat_index_minimal_and_errors():
    assert flat_index(0, 0, 1) == 0
    with pytest.raises(IndexError):
        flat_index(2, 1, 4)
    with pytest.raises(IndexError):
        flat_index(0, 4, 4)
    with pytest.raises(IndexError):
        unflatten(num_moments(5), 5)


def test_moment_grid_matches_flat_order():
    starts, ends = moment_grid(6)
    for z in range(num_moments(6)):
        assert (int(starts[z]), int(ends[z])) == unflatten(z, 6)


def test_build_map_small_example():
    clips = np.array([[1.0, 2.0], [3.0, 0.0], [0.0, 5.0]])
    mmap = build_map(clips)
    assert np.array_equal(mmap.features[mmap.index(0, 2)], [3.0, 5.0])
    assert np.array_equal(mmap.features[mmap.index(1, 1)], [3.0, 0.0])


def test_build_map_matches_bruteforce_pooling():
    rng = seeded_rng(4)
    clips = rng.normal(size=(8, 4))
    mmap = build_map(clips)
    rows = clips.tolist()
    for z in range(mmap.size):
        i, j = mmap.moment(z)
        assert np.array_equal(mmap.features[z], oracle_pool(rows, i, j))


def test_build_map_argmax_ties_to_lowest_clip():
    clips = np.array([[2.0, 1.0], [2.0, 3.0], [2.0, 3.0]])
    mmap = build_map(clips)
    z = mmap.index(0, 2)
    assert list(mmap.pool_argmax[z]) == [0, 1]


def test_build_map_rejects_empty():
    with pytest.raises(ValueError):
        build_map(np.empty((0, 3)))


def test_pooled_feature_dominates_subspans():
    rng = seeded_rng(5)
    clips = rng.normal(size=(12, 3))
    mmap = build_map(clips)
    for i in range(12):
        for j in range(i, 12):
            outer = mmap.features[mmap.index(i, j)]
            for a in range(i, j + 1):
                for b in range(a, j + 1):
                    assert np.all(outer >= mmap.features[mmap.index(a, b)])


def test_iou_examples():
    assert iou((0, 3), (0, 3)) == 1.0
    assert iou((0, 3), (2, 5)) == pytest.approx(2.0 / 6.0)
    assert iou((0, 1), (3, 4)) == 0.0


def test_iou_matches_bruteforce_and_properties():
    rng = seeded_rng(6)
    n = 9
    for _ in range(300):
        ai, bi = rng.integers(0, n, size=2)
        aj = int(rng.integers(ai, n))
        bj = int(rng.integers(bi, n))
        a, b = (int(ai), aj), (int(bi), bj)
        v = iou(a, b)
        assert v == pytest.approx(oracle_iou(a, b), abs=1e-12)
        assert v == pytest.approx(iou(b, a), abs=1e-15)
        assert 0.0 <= v <= 1.0
        assert (v == 1.0) == (a == b)


def test_contains():
    assert contains((2, 5), 2)
    assert not contains((2, 5), 6)
    assert contains((4, 4), 4)
