import itertools

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from partgen.geometry import TriMesh
from partgen.metrics import (EMD_EXACT_LIMIT, area_error, chamfer_distance,
                             coverage_and_mmd, emd, jensen_shannon_divergence,
                             mesh_accuracy, one_nn_accuracy, voxel_iou,
                             voxel_jsd, voxel_occupancy)


def test_chamfer_single_point_oracle():
    a = np.array([[0.0, 0.0, 0.0]])
    b = np.array([[1.0, 0.0, 0.0]])
    # squared distances, sum of both directional means
    assert chamfer_distance(a, b) == pytest.approx(2.0)


def test_chamfer_identical_sets_zero():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(100, 3))
    assert chamfer_distance(a, a.copy()) == pytest.approx(0.0, abs=1e-12)


def test_chamfer_brute_force_equivalence():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(40, 3))
    b = rng.normal(size=(60, 3))
    d2 = ((a[:, None] - b[None]) ** 2).sum(-1)
    expect = d2.min(1).mean() + d2.min(0).mean()
    assert chamfer_distance(a, b) == pytest.approx(expect, rel=1e-12)


def test_emd_exact_small():
    # two points each; optimal matching is the crossing-free one
    a = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    b = np.array([[0.1, 0, 0], [0.9, 0, 0]])
    assert emd(a, b) == pytest.approx(0.1)


def test_emd_matches_hungarian():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(64, 3))
    b = rng.normal(size=(64, 3))
    d = np.sqrt(((a[:, None] - b[None]) ** 2).sum(-1))
    r, c = linear_sum_assignment(d)
    expect = d[r, c].mean()
    assert emd(a, b) == pytest.approx(expect, rel=1e-9)


def test_emd_auction_above_exact_limit():
    rng = np.random.default_rng(3)
    n = EMD_EXACT_LIMIT + 64
    a = rng.normal(size=(n, 3))
    b = rng.normal(size=(n, 3))
    d = np.sqrt(((a[:, None] - b[None]) ** 2).sum(-1))
    r, c = linear_sum_assignment(d)
    exact = d[r, c].mean()
    approx = emd(a, b)
    assert approx >= exact - 1e-9
    assert approx <= exact * 1.01   # within 1% of optimal


def test_emd_requires_equal_sizes():
    with pytest.raises(ValueError):
        emd(np.zeros((3, 3)), np.zeros((4, 3)))


def test_mesh_accuracy_percentile_semantics():
    # distances 1..100 -> numpy's 'lower' 90th percentile picks the realized
    # value at index floor(99 * 0.9) = 89, i.e. 90.0
    tri = TriMesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]),
                  np.array([[0, 1, 2]]))
    pts = np.zeros((100, 3))
    pts[:, 2] = np.arange(1.0, 101.0)
    got = mesh_accuracy(pts, tri)
    assert got == pytest.approx(90.0)
    assert got in pts[:, 2]       # a realized distance, not an interpolation


def test_mesh_accuracy_zero_for_on_surface_points(rng):
    tri = TriMesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]),
                  np.array([[0, 1, 2]]))
    r1 = rng.random(50)
    r2 = rng.random(50) * (1 - r1)
    pts = np.stack([r1, r2, np.zeros(50)], axis=1)
    assert mesh_accuracy(pts, tri) == pytest.approx(0.0, abs=1e-12)


def test_voxel_occupancy_and_iou():
    pts = np.array([[-0.99, -0.99, -0.99], [0.99, 0.99, 0.99]])
    occ = voxel_occupancy(pts, resolution=4)
    assert occ.shape == (4, 4, 4)
    assert occ[0, 0, 0] == pytest.approx(0.5)
    assert occ[3, 3, 3] == pytest.approx(0.5)
    assert occ.sum() == pytest.approx(1.0)    # normalized mass, not counts
    other = np.zeros((4, 4, 4), dtype=bool)
    other[0, 0, 0] = True
    assert voxel_iou(occ, other) == pytest.approx(0.5)
    assert voxel_iou(occ, occ) == 1.0
    assert voxel_iou(np.zeros((2, 2, 2), bool), np.zeros((2, 2, 2), bool)) == 1.0


def test_jsd_bounds_and_symmetry():
    p = np.array([0.7, 0.2, 0.1, 0.0])
    q = np.array([0.1, 0.2, 0.3, 0.4])
    j = jensen_shannon_divergence(p, q)
    assert 0 < j <= np.log(2) + 1e-12
    assert j == pytest.approx(jensen_shannon_divergence(q, p))
    assert jensen_shannon_divergence(p, p) == pytest.approx(0.0, abs=1e-12)
    # hand-computed two-bin oracle
    p2, q2 = np.array([1.0, 0.0]), np.array([0.5, 0.5])
    m = (p2 + q2) / 2
    expect = 0.5 * np.log(1 / m[0]) + 0.5 * (0.5 * np.log(0.5 / m[0])
                                             + 0.5 * np.log(0.5 / m[1]))
    assert jensen_shannon_divergence(p2, q2) == pytest.approx(expect)


def test_voxel_jsd_separates_distributions():
    rng = np.random.default_rng(4)
    ref = [rng.uniform(-1, 0, (4096, 3)) for _ in range(6)]
    same = [rng.uniform(-1, 0, (4096, 3)) for _ in range(6)]
    shifted = [rng.uniform(0, 1, (4096, 3)) for _ in range(6)]
    low = voxel_jsd(same, ref)
    high = voxel_jsd(shifted, ref)
    assert low < 0.1
    # disjoint supports saturate at ln 2
    assert high == pytest.approx(np.log(2))


def test_coverage_and_mmd_oracles():
    # reference shapes at 0 and 10; candidates both near 0
    ref = [np.zeros((4, 3)), np.full((4, 3), 10.0)]
    gen = [np.full((4, 3), 0.1), np.full((4, 3), 0.2)]
    cov, mmd = coverage_and_mmd(gen, ref)
    assert cov == pytest.approx(0.5)      # only ref[0] ever matched
    d00 = chamfer_distance(ref[0], gen[0])
    d10 = chamfer_distance(ref[1], gen[0])  # nearest candidate to ref[1]...
    d11 = chamfer_distance(ref[1], gen[1])
    # mmd averages each reference's nearest-candidate distance
    assert mmd == pytest.approx((d00 + min(d10, d11)) / 2)


def test_one_nn_accuracy_extremes():
    rng = np.random.default_rng(5)
    a = [rng.uniform(-1, -0.5, (64, 3)) for _ in range(8)]
    b = [rng.uniform(0.5, 1, (64, 3)) for _ in range(8)]
    # disjoint distributions: classifier is perfect
    assert one_nn_accuracy(a, b) == pytest.approx(1.0)
    # identical samples (duplicated lists): every cloud's 1-NN is its twin in
    # the other class -> accuracy 0
    assert one_nn_accuracy(a, list(a)) == pytest.approx(0.0)


def test_area_error_oracle():
    tri_a = TriMesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]),
                    np.array([[0, 1, 2]]))
    # double the area: scale x and y by sqrt(2)
    tri_b = TriMesh(np.array([[0.0, 0, 0], [2, 0, 0], [0, 1, 0]]),
                    np.array([[0, 1, 2]]))
    assert area_error(tri_a, [tri_a]) == pytest.approx(0.0)
    assert area_error(tri_b, [tri_a]) == pytest.approx(100.0)   # doubled area
    assert area_error(tri_a, [tri_b]) == pytest.approx(50.0)    # absolute gap
    # parts sum before comparison
    assert area_error(tri_b, [tri_a, tri_a]) == pytest.approx(0.0)
    with pytest.raises(ValueError):
        area_error(tri_a, [])
