"""Point sampling for occupancy supervision.

Two families per shape:
  X_vol  - points inside the shape (rejection-sampled from the bounding box),
           used for fitting the spatial mixture.
  X_surf - occupancy-labeled points: one group uniform in the [-1, 1]^3 cube
           plus one group per noise sigma of surface samples with isotropic
           Gaussian jitter. Labels come from winding numbers; points whose
           winding falls in the ambiguous band are resampled, never clamped.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .geometry import TriMesh, sample_surface
from .winding import occupancy_labels

DEFAULT_SIGMAS = (0.01, 0.02)
CUBE_HALF_EXTENT = 1.0


class SamplingError(RuntimeError):
    pass


@dataclass
class SampleBatch:
    """Per-shape supervision points.

    volume_points  (n_vol, 3) float32, all inside the shape.
    surface_points (n_surf_total, 3) float32.
    surface_labels (n_surf_total,) uint8 occupancy of surface_points.
    """

    volume_points: np.ndarray
    surface_points: np.ndarray
    surface_labels: np.ndarray

    def __post_init__(self):
        self.volume_points = np.ascontiguousarray(self.volume_points, dtype=np.float32)
        self.surface_points = np.ascontiguousarray(self.surface_points, dtype=np.float32)
        self.surface_labels = np.ascontiguousarray(self.surface_labels, dtype=np.uint8)
        if len(self.surface_points) != len(self.surface_labels):
            raise ValueError("surface points/labels length mismatch")


def sample_volume_points(mesh: TriMesh, n: int, rng: np.random.Generator,
                         inside_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                         batch: int = 8192, min_acceptance: float = 1e-4,
                         max_batches: int = 10000) -> np.ndarray:
    """Rejection-sample n points strictly inside the mesh.

    inside_fn overrides the membership test (winding by default). Aborts with
    diagnostics when the running acceptance rate collapses, which catches
    inverted or open meshes early instead of spinning forever.
    """
    lo, hi = mesh.bounds()
    if inside_fn is None:
        inside_fn = lambda p: occupancy_labels(p, mesh).astype(bool)  # noqa: E731
    kept: list[np.ndarray] = []
    total_drawn = 0
    total_kept = 0
    for _ in range(max_batches):
        if total_kept >= n:
            break
        p = rng.uniform(lo, hi, size=(batch, 3))
        inside = np.asarray(inside_fn(p), dtype=bool)
        hits = p[inside]
        kept.append(hits)
        total_drawn += batch
        total_kept += len(hits)
        if total_drawn >= 20 * batch and total_kept / total_drawn < min_acceptance:
            raise SamplingError(
                f"volume sampling acceptance {total_kept}/{total_drawn} below "
                f"{min_acceptance}; bounds lo={lo} hi={hi}. Mesh may be open or inverted.")
    if total_kept < n:
        raise SamplingError(f"volume sampling got {total_kept}/{n} after {max_batches} batches")
    return np.concatenate(kept)[:n].astype(np.float32)


def _labeled_group(draw: Callable[[int], np.ndarray], n: int, mesh: TriMesh,
                   label_fn: Callable, max_rounds: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Draw n points, label them, resample any with ambiguous winding."""
    pts = draw(n)
    labels, uncertain = label_fn(pts)
    rounds = 0
    while uncertain.any() and rounds < max_rounds:
        k = int(uncertain.sum())
        fresh = draw(k)
        fl, fu = label_fn(fresh)
        idx = np.flatnonzero(uncertain)
        pts[idx] = fresh
        labels[idx] = fl
        uncertain[idx] = fu
        rounds += 1
    if uncertain.any():
        # pathological band-dwellers: drop them and refill from clean surplus
        clean = ~uncertain
        need = int(uncertain.sum())
        extra_p, extra_l = [], []
        while need > 0 and rounds < 2 * max_rounds:
            fresh = draw(max(need * 4, 64))
            fl, fu = label_fn(fresh)
            extra_p.append(fresh[~fu])
            extra_l.append(fl[~fu])
            need -= int((~fu).sum())
            rounds += 1
        pts = np.concatenate([pts[clean]] + extra_p)[:n]
        labels = np.concatenate([labels[clean]] + extra_l)[:n]
        if len(pts) < n:
            raise SamplingError("could not escape ambiguous winding band")
    return pts, labels


def sample_shape_points(mesh: TriMesh, n_vol: int, n_surf: int,
                        sigmas: Sequence[float] = DEFAULT_SIGMAS,
                        seed: int = 0,
                        inside_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                        winding_chunk: int = 4096) -> SampleBatch:
    """Full supervision batch for one normalized shape, deterministic in seed.

    n_surf is the size of EACH labeled group: one uniform-cube group plus one
    near-surface group per sigma, so the total is n_surf * (1 + len(sigmas)).
    """
    rng = np.random.default_rng(seed)

    def label_fn(p):
        return occupancy_labels(p, mesh, chunk=winding_chunk, return_uncertain=True)

    vol = sample_volume_points(mesh, n_vol, rng, inside_fn=inside_fn)

    groups_p, groups_l = [], []
    draw_cube = lambda k: rng.uniform(-CUBE_HALF_EXTENT, CUBE_HALF_EXTENT, size=(k, 3))  # noqa: E731
    p, l = _labeled_group(draw_cube, n_surf, mesh, label_fn)
    groups_p.append(p)
    groups_l.append(l)
    for sigma in sigmas:
        draw_near = (lambda s: lambda k: sample_surface(mesh, k, rng)
                     + rng.normal(0.0, s, size=(k, 3)))(sigma)
        p, l = _labeled_group(draw_near, n_surf, mesh, label_fn)
        groups_p.append(p)
        groups_l.append(l)

    return SampleBatch(
        volume_points=vol,
        surface_points=np.concatenate(groups_p).astype(np.float32),
        surface_labels=np.concatenate(groups_l).astype(np.uint8),
    )
