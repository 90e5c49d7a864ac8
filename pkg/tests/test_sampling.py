import numpy as np
import pytest

from partgen.geometry import mesh_volume
from partgen.sampling import (SampleBatch, SamplingError, sample_shape_points,
                              sample_volume_points)
from partgen.toydata import _box_mesh, _ellipsoid_mesh


def test_volume_sampler_stays_inside():
    box = _box_mesh(np.array([0.2, 0.0, -0.1]), np.array([0.3, 0.2, 0.25]))
    rng = np.random.default_rng(0)
    pts = sample_volume_points(box, 2000, rng)
    assert pts.shape == (2000, 3)
    lo = np.array([0.2, 0.0, -0.1]) - np.array([0.3, 0.2, 0.25])
    hi = np.array([0.2, 0.0, -0.1]) + np.array([0.3, 0.2, 0.25])
    assert np.all(pts >= lo - 1e-9) and np.all(pts <= hi + 1e-9)


def test_volume_sampler_sphere_fraction():
    # mean occupancy of a radius-0.5 ball in [-1,1]^3 is (4/3)pi r^3 / 8
    ell = _ellipsoid_mesh(np.zeros(3), np.full(3, 0.5), rings=24, segments=48)
    # tessellation volume is slightly under the ball; compare against the mesh
    vol = mesh_volume(ell)
    rng = np.random.default_rng(1)
    hits = []
    lo, hi = ell.bounds()
    for _ in range(6):
        u = rng.uniform(-1, 1, size=(4000, 3))
        from partgen.winding import occupancy_labels
        hits.append(occupancy_labels(u, ell).mean())
    frac = float(np.mean(hits))
    assert frac == pytest.approx(vol / 8.0, abs=0.01)


def test_sampler_acceptance_guard():
    tiny = _box_mesh(np.zeros(3), np.full(3, 1e-4))
    rng = np.random.default_rng(0)
    with pytest.raises(SamplingError):
        # inside_fn that never accepts
        sample_volume_points(tiny, 100, rng, inside_fn=lambda p: np.zeros(len(p), bool))


def test_shape_points_groups_and_determinism():
    box = _box_mesh(np.zeros(3), np.full(3, 0.4))
    a = sample_shape_points(box, n_vol=256, n_surf=128, seed=9)
    b = sample_shape_points(box, n_vol=256, n_surf=128, seed=9)
    c = sample_shape_points(box, n_vol=256, n_surf=128, seed=10)
    assert isinstance(a, SampleBatch)
    assert a.volume_points.shape == (256, 3)
    # one uniform cube group plus one group per noise sigma
    assert a.surface_points.shape == (3 * 128, 3)
    assert a.surface_labels.shape == (3 * 128,)
    np.testing.assert_array_equal(a.volume_points, b.volume_points)
    np.testing.assert_array_equal(a.surface_points, b.surface_points)
    np.testing.assert_array_equal(a.surface_labels, b.surface_labels)
    assert not np.array_equal(a.volume_points, c.volume_points)


def test_shape_points_labels_match_analytic_box():
    half = np.full(3, 0.4)
    box = _box_mesh(np.zeros(3), half)
    batch = sample_shape_points(box, n_vol=512, n_surf=256, seed=3)
    # volume points are inside by construction
    assert np.all(np.abs(batch.volume_points) <= half + 1e-6)
    inside = np.all(np.abs(batch.surface_points) <= half, axis=1)
    on_face = np.any(np.isclose(np.abs(batch.surface_points), half, atol=1e-7), axis=1)
    clear = ~on_face
    agree = (batch.surface_labels[clear].astype(bool) == inside[clear]).mean()
    assert agree >= 0.995


def test_surface_groups_have_expected_spread():
    box = _box_mesh(np.zeros(3), np.full(3, 0.4))
    batch = sample_shape_points(box, n_vol=64, n_surf=400,
                                sigmas=(0.01, 0.02), seed=3)
    cube_grp = batch.surface_points[:400]
    near1 = batch.surface_points[400:800]
    near2 = batch.surface_points[800:]
    # uniform group fills the domain; jittered groups hug the surface
    assert cube_grp.std() > 0.4
    d1 = np.abs(np.abs(near1).max(axis=1) - 0.4)
    d2 = np.abs(np.abs(near2).max(axis=1) - 0.4)
    assert np.median(d1) < np.median(d2) < 0.1
