import itertools
import json
from math import comb

import numpy as np
import pytest

from harmonicpd.geometry import PointCloud, ScaleGrid, generate, make_scale_grid, pairwise_distances
from harmonicpd.simplicial import SimplicialComplex, boundary, build_vr, simplex_keys

EQUILATERAL = np.ones((3, 3)) - np.eye(3)
SQUARE = pairwise_distances(PointCloud([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]))


def test_complete_triangle():
    cx = build_vr(EQUILATERAL, ScaleGrid([0.5, 1.5]), 2).at(1)
    assert cx.counts() == [3, 3, 1]
    assert cx.level(1).tolist() == [[0, 1], [0, 2], [1, 2]]


def test_below_threshold():
    cx = build_vr(EQUILATERAL, ScaleGrid([0.5, 1.5]), 2).at(0)
    assert cx.counts() == [3, 0, 0]


def test_hollow_square():
    cx = build_vr(SQUARE, ScaleGrid([1.0, 1.5]), 2).at(0)
    assert cx.counts() == [4, 4, 0]
    d1 = boundary(cx, 1).toarray()
    assert d1.shape == (4, 4)
    assert np.all(np.sort(d1, axis=0) == [[-1], [0], [0], [1]])


def test_square_matches_subset_enumeration():
    # every vertex subset whose pairwise distances are within the scale
    eps = 1.5
    filt = build_vr(SQUARE, ScaleGrid([1.0, eps]), 3)
    for k in range(4):
        brute = [s for s in itertools.combinations(range(4), k + 1)
                 if all(SQUARE[a, b] <= eps for a, b in itertools.combinations(s, 2))]
        assert filt.at(1).level(k).tolist() == [list(s) for s in brute]


def test_triangle_boundary_signs():
    cx = SimplicialComplex.from_simplices(3, [(0, 1, 2)])
    col = boundary(cx, 2).toarray()[:, 0]
    # rows are the edges [0,1], [0,2], [1,2]
    assert col.tolist() == [1, -1, 1]


def test_boundary_columns_and_composition():
    cx = SimplicialComplex.from_simplices(5, [tuple(range(5))])
    for k in range(1, 5):
        d = boundary(cx, k).toarray()
        assert np.all(np.count_nonzero(d, axis=0) == k + 1)
        assert set(np.unique(d)) <= {-1, 0, 1}
    for k in range(1, 4):
        assert not np.any(boundary(cx, k).toarray() @ boundary(cx, k + 1).toarray())


def test_boundary_of_vertices_and_empty_levels():
    cx = SimplicialComplex.from_simplices(3, [(0,), (1,), (2,)])
    assert boundary(cx, 0).shape == (0, 3)
    assert boundary(cx, 1).shape == (3, 0)


def test_from_simplices_closes_and_validates():
    cx = SimplicialComplex.from_simplices(3, [(2, 0, 1)])
    assert SimplicialComplex.from_simplices(4, [(2, 0, 1)]).counts() == [4, 3, 1]
    assert cx.counts() == [3, 3, 1]
    cx.check()
    assert cx.euler_characteristic() == 1
    with pytest.raises(ValueError):
        SimplicialComplex.from_simplices(3, [(0, 3)])
    with pytest.raises(ValueError):
        SimplicialComplex.from_simplices(3, [(1, 1)])
    open_cx = SimplicialComplex.from_simplices(3, [(0, 1, 2)], close=False)
    with pytest.raises(ValueError):
        open_cx.check()


def test_index_of_missing_face():
    cx = SimplicialComplex.from_simplices(3, [(0, 1)])
    assert cx.index_of(1, np.array([[0, 1]])).tolist() == [0]
    with pytest.raises(KeyError):
        cx.index_of(1, np.array([[1, 2]]))


def test_simplex_keys_rank_subsets():
    for size in (1, 2, 3):
        subsets = np.array(list(itertools.combinations(range(7), size)))
        keys = simplex_keys(subsets)
        assert sorted(keys.tolist()) == list(range(comb(7, size)))


def test_filtration_nesting_and_births():
    cloud = generate("circle", 15, 0.05, 2)
    d = pairwise_distances(cloud)
    grid = make_scale_grid(d, 8)
    filt = build_vr(d, grid, 2)
    counts = np.array([filt.at(j).counts() for j in range(grid.T)])
    assert np.all(np.diff(counts, axis=0) >= 0)
    for k in range(3):
        # birth scale = first grid value at or above the simplex diameter
        b = filt.birth_scales(k)
        assert np.all(b >= filt.diameters[k])
        prev = np.concatenate([[0.0], grid.scales])[filt.birth_index[k]]
        assert np.all(prev < filt.diameters[k]) or k == 0
    for j in range(grid.T - 1):
        small, big = filt.at(j), filt.at(j + 1)
        for k in range(3):
            assert set(simplex_keys(small.level(k))) <= set(simplex_keys(big.level(k)))
    doc = json.loads(filt.to_json())
    assert doc["K"] == 2 and len(doc["scales"]) == 8


def test_build_vr_rejects_large_dimension():
    with pytest.raises(ValueError, match="dimension exceeds vertex count"):
        build_vr(EQUILATERAL, ScaleGrid([0.5, 1.5]), 3)


def test_single_point():
    filt = build_vr(np.zeros((1, 1)), ScaleGrid([0.5, 1.0]), 0)
    assert filt.at(0).counts() == [1]
