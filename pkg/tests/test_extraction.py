import numpy as np
import pytest
import torch

from conftest import tiny_config
from partgen.extraction import (CachingFieldEvaluator, ExtractionStats,
                                build_mesh_frame, evaluate_grid, extract_mesh,
                                make_field, parse_mesh_frame, vertex_part_ids)
from partgen.geometry import TriMesh, mesh_volume, surface_area
from partgen.model import PartAwareNet


def sphere_field(center=(0.0, 0.0, 0.0), radius=0.6, slope=50.0):
    c = np.asarray(center, dtype=np.float64)

    def field(pts):
        d = np.linalg.norm(pts - c, axis=1)
        return (slope * (radius - d)).astype(np.float32)

    return field


def two_blob_field(slope=40.0):
    def field(pts):
        d1 = np.linalg.norm(pts - np.array([-0.4, 0.0, 0.0]), axis=1)
        d2 = np.linalg.norm(pts - np.array([0.45, 0.1, 0.0]), axis=1)
        return (slope * np.maximum(0.3 - d1, 0.25 - d2)).astype(np.float32)

    return field


# ---------------------------------------------------------------------------
# evaluator


def test_evaluator_counts_unique_queries():
    calls = []

    def field(pts):
        calls.append(len(pts))
        return np.ones(len(pts), dtype=np.float32)

    ev = CachingFieldEvaluator(field, resolution=8)
    flat = np.array([0, 1, 2, 1, 0])
    vals = ev.query(flat)
    assert vals.shape == (5,)
    assert ev.eval_count == 3
    ev.query(np.array([2, 3]))
    assert ev.eval_count == 4  # only corner 3 is new
    assert sum(calls) == 4


def test_evaluator_corner_coords_cover_domain():
    ev = CachingFieldEvaluator(lambda p: np.zeros(len(p), np.float32), resolution=4)
    n = 5
    first = ev.corner_coords(np.array([0]))
    last = ev.corner_coords(np.array([n ** 3 - 1]))
    np.testing.assert_allclose(first, [[-1, -1, -1]])
    np.testing.assert_allclose(last, [[1, 1, 1]])


# ---------------------------------------------------------------------------
# dense extraction sanity


def test_sphere_mesh_geometry():
    mesh = extract_mesh(sphere_field(radius=0.6), 64, method="dense")
    assert mesh.num_faces > 100
    # closed surface approximating the sphere
    vol = mesh_volume(mesh)
    assert vol == pytest.approx(4 / 3 * np.pi * 0.6 ** 3, rel=0.02)
    assert surface_area(mesh) == pytest.approx(4 * np.pi * 0.6 ** 2, rel=0.02)
    radii = np.linalg.norm(mesh.vertices, axis=1)
    assert abs(radii.mean() - 0.6) < 0.01
    # vertices sit on cell edges: correct outward orientation
    assert vol > 0


def test_empty_and_full_fields():
    empty = extract_mesh(lambda p: np.full(len(p), -1.0, np.float32), 16)
    assert empty.num_vertices == 0 and empty.num_faces == 0
    full = extract_mesh(lambda p: np.full(len(p), 1.0, np.float32), 16)
    assert full.num_vertices == 0 and full.num_faces == 0


def test_resolution_validation():
    with pytest.raises(ValueError):
        extract_mesh(sphere_field(), 0)
    with pytest.raises(ValueError):
        extract_mesh(sphere_field(), 16, method="bogus")


# ---------------------------------------------------------------------------
# octree == dense


@pytest.mark.parametrize("resolution", [64, 128])
def test_octree_matches_dense(resolution):
    field = two_blob_field()
    dense, d_stats = extract_mesh(field, resolution, method="dense",
                                  return_stats=True)
    octd, o_stats = extract_mesh(field, resolution, method="octree",
                                 return_stats=True)
    assert o_stats.method == "octree" and d_stats.method == "dense"
    assert dense.num_vertices == octd.num_vertices
    np.testing.assert_allclose(octd.vertices, dense.vertices, atol=1e-6)
    np.testing.assert_array_equal(octd.faces, dense.faces)


def test_octree_saves_evaluations():
    field = sphere_field(radius=0.55)
    _, stats = extract_mesh(field, 64, method="octree", return_stats=True)
    assert isinstance(stats, ExtractionStats)
    assert stats.eval_count < 0.15 * stats.dense_eval_count
    assert stats.dense_eval_count == 65 ** 3


def test_octree_falls_back_to_dense_at_low_resolution():
    for res in (16, 32):
        _, stats = extract_mesh(sphere_field(), res, method="octree",
                                return_stats=True)
        assert stats.method == "dense"
    # no power-of-two quotient available -> degrade gracefully
    _, stats = extract_mesh(sphere_field(), 33, method="octree", return_stats=True)
    assert stats.method == "dense"
    # while 96 = 12 * 2^3 does get a root
    mesh, stats = extract_mesh(sphere_field(), 96, method="octree", return_stats=True)
    assert stats.method == "octree"
    dense = extract_mesh(sphere_field(), 96, method="dense")
    np.testing.assert_allclose(mesh.vertices, dense.vertices, atol=1e-6)
    np.testing.assert_array_equal(mesh.faces, dense.faces)


def test_off_center_small_feature_survives_octree():
    # a blob much smaller than a root cell must not be missed
    field = sphere_field(center=(0.62, -0.55, 0.4), radius=0.08)
    dense = extract_mesh(field, 64, method="dense")
    octd = extract_mesh(field, 64, method="octree")
    assert dense.num_faces > 0
    assert octd.num_faces == dense.num_faces
    np.testing.assert_allclose(octd.vertices, dense.vertices, atol=1e-6)


# ---------------------------------------------------------------------------
# grid evaluation conventions


def test_evaluate_grid_layout():
    def field(pts):
        return pts[:, 0].astype(np.float32)  # logit == x coordinate

    grid = evaluate_grid(field, 5)
    assert grid.shape == (5, 5, 5)
    np.testing.assert_allclose(grid[0], -1.0)   # first axis is x
    np.testing.assert_allclose(grid[-1], 1.0)
    np.testing.assert_allclose(grid[2], 0.0)


def test_evaluate_grid_batching_consistent():
    field = sphere_field()
    a = evaluate_grid(field, 17, batch=50)
    b = evaluate_grid(field, 17, batch=100000)
    np.testing.assert_array_equal(a, b)


# ---------------------------------------------------------------------------
# model-backed fields


def test_make_field_and_attribution():
    torch.manual_seed(0)
    model = PartAwareNet(tiny_config()).eval()
    gen = torch.Generator().manual_seed(0)
    z = torch.randn(1, model.cfg.code_dim, generator=gen) * 0.1
    parts = model.decompose(z)
    ctx = model.compose(parts.intrinsic, parts.gaussians.stack())
    field = make_field(model, ctx)
    pts = np.random.default_rng(0).uniform(-1, 1, (500, 3)).astype(np.float32)
    with torch.no_grad():
        want = model.occupancy(torch.from_numpy(pts)[None], ctx)[0].numpy()
    got = field(pts)
    np.testing.assert_allclose(got, want, atol=1e-6)

    ids = vertex_part_ids(model, pts, ctx)
    assert ids.shape == (500,)
    assert ids.min() >= 0 and ids.max() < model.cfg.num_parts

    # masked parts can never win attribution
    m = model.cfg.num_parts
    mask = torch.ones(1, m, dtype=torch.bool)
    mask[0, 0] = False
    ctx_m = model.compose(parts.intrinsic, parts.gaussians.stack(), mask)
    ids_m = vertex_part_ids(model, pts, ctx_m, mask)
    assert not np.any(ids_m == 0)


def test_attribution_concatenates_dual_contexts():
    torch.manual_seed(1)
    model = PartAwareNet(tiny_config()).eval()
    gen = torch.Generator().manual_seed(1)
    za = torch.randn(1, model.cfg.code_dim, generator=gen) * 0.1
    zb = torch.randn(1, model.cfg.code_dim, generator=gen) * 0.1
    pa = model.decompose(za)
    pb = model.decompose(zb)
    ctx_a = model.compose(pa.intrinsic, pa.gaussians.stack())
    ctx_b = model.compose(pb.intrinsic, pb.gaussians.stack())
    pts = np.random.default_rng(1).uniform(-1, 1, (100, 3)).astype(np.float32)
    m = model.cfg.num_parts
    # alpha 0: everything attributed to side A even with B present
    ids0 = vertex_part_ids(model, pts, ctx_a, None, ctx_b, None, alpha=0.0)
    assert ids0.max() < m
    # alpha 1: attribution indexes into the B block [m, 2m)
    ids1 = vertex_part_ids(model, pts, ctx_a, None, ctx_b, None, alpha=1.0)
    assert ids1.min() >= m and ids1.max() < 2 * m


# ---------------------------------------------------------------------------
# wire frames


def test_mesh_frame_round_trip():
    verts = np.array([[0.0, 0.5, -0.25], [1.0, 2.0, 3.0], [-1.0, 0.0, 0.0]])
    faces = np.array([[0, 1, 2]])
    ids = np.array([2, 0, 1])
    blob = build_mesh_frame(TriMesh(verts, faces, ids), mesh_version=41)
    version, mesh = parse_mesh_frame(blob)
    assert version == 41
    np.testing.assert_allclose(mesh.vertices, verts, atol=1e-7)  # float32 wire
    np.testing.assert_array_equal(mesh.faces, faces)
    np.testing.assert_array_equal(mesh.vertex_part_ids, ids)


def test_mesh_frame_without_ids():
    verts = np.zeros((3, 3))
    verts[1, 0] = 1.0
    verts[2, 1] = 1.0
    blob = build_mesh_frame(TriMesh(verts, np.array([[0, 1, 2]])), mesh_version=0)
    _, mesh = parse_mesh_frame(blob)
    assert mesh.vertex_part_ids is None


def test_mesh_frame_rejects_garbage():
    with pytest.raises(ValueError):
        parse_mesh_frame(b"nope")
    good = build_mesh_frame(TriMesh(np.zeros((0, 3)), np.zeros((0, 3), np.int64)), 1)
    with pytest.raises(ValueError):
        parse_mesh_frame(b"XXXX" + good[4:])
