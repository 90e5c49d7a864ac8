"""Inside/outside labeling via generalized winding numbers.

The winding number at a query point is the sum of signed solid angles
subtended by every triangle, divided by 4*pi. For a watertight mesh it is 1
inside and 0 outside; for messy geometry it degrades gracefully, which is why
it is the labeling rule of choice here. Solid angles use the
Van Oosterom-Strackee formula.
"""
from __future__ import annotations

import warnings
from typing import Optional

import numpy as np

from .geometry import TriMesh, degenerate_face_mask

UNCERTAIN_BAND = (0.45, 0.55)


def generalized_winding_number(points: np.ndarray, mesh: TriMesh,
                               chunk: int = 4096) -> np.ndarray:
    """Winding number of each query point. points (n, 3) -> (n,) float64.

    Chunked over query points to bound the (chunk, faces, 3) temporaries.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError(f"points must be (n, 3), got {points.shape}")
    if not np.isfinite(points).all():
        raise ValueError("query points contain non-finite values")
    bad = degenerate_face_mask(mesh)
    faces = mesh.faces
    if bad.any():
        warnings.warn(f"winding: skipping {int(bad.sum())} degenerate faces")
        faces = faces[~bad]
    tri = mesh.vertices[faces]
    out = np.empty(len(points), dtype=np.float64)
    for s in range(0, len(points), chunk):
        out[s:s + chunk] = _solid_angle_sum(points[s:s + chunk], tri)
    return out / (4.0 * np.pi)


def _solid_angle_sum(points: np.ndarray, tri: np.ndarray) -> np.ndarray:
    a = tri[None, :, 0] - points[:, None]   # (n, m, 3)
    b = tri[None, :, 1] - points[:, None]
    c = tri[None, :, 2] - points[:, None]
    la = np.linalg.norm(a, axis=-1)
    lb = np.linalg.norm(b, axis=-1)
    lc = np.linalg.norm(c, axis=-1)
    numer = np.einsum("nmi,nmi->nm", a, np.cross(b, c))
    denom = (la * lb * lc + np.einsum("nmi,nmi->nm", a, b) * lc
             + np.einsum("nmi,nmi->nm", b, c) * la
             + np.einsum("nmi,nmi->nm", a, c) * lb)
    # atan2 handles denom <= 0 (query near/behind the triangle plane)
    return 2.0 * np.arctan2(numer, denom).sum(axis=1)


def occupancy_labels(points: np.ndarray, mesh: TriMesh, threshold: float = 0.5,
                     chunk: int = 4096,
                     return_uncertain: bool = False):
    """Binary occupancy of each point: winding > threshold.

    With return_uncertain=True also returns the mask of points whose winding
    falls in the ambiguous band around the threshold; callers resample those.
    """
    w = generalized_winding_number(points, mesh, chunk=chunk)
    labels = (w > threshold).astype(np.uint8)
    if return_uncertain:
        uncertain = (w >= UNCERTAIN_BAND[0]) & (w <= UNCERTAIN_BAND[1])
        return labels, uncertain
    return labels


# ---------------------------------------------------------------------------
# independent oracle: ray-crossing parity. Only valid for watertight meshes
# without self-intersections (interior faces flip parity but not winding).


def ray_parity_inside(points: np.ndarray, mesh: TriMesh,
                      direction: Optional[np.ndarray] = None,
                      eps: float = 1e-9) -> np.ndarray:
    """Odd/even test along a fixed ray direction. Returns uint8 labels.

    Watson-style Moller-Trumbore intersection per (point, face) pair; counts
    crossings with t > eps. Points whose ray grazes an edge can misreport;
    use an irrational-ish default direction to make that measure-zero.
    """
    points = np.asarray(points, dtype=np.float64)
    d = np.array([0.5773502691896258, 0.6881909602355868, 0.4271482821544817]) \
        if direction is None else np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    tri = mesh.triangles()
    v0, v1, v2 = tri[:, 0], tri[:, 1], tri[:, 2]
    e1 = v1 - v0
    e2 = v2 - v0
    pvec = np.cross(d, e2)                      # (m, 3)
    det = np.einsum("mi,mi->m", e1, pvec)       # (m,)
    ok = np.abs(det) > eps
    inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    counts = np.zeros(len(points), dtype=np.int64)
    for s in range(0, len(points), 2048):
        p = points[s:s + 2048]
        tvec = p[:, None] - v0[None]              # (n, m, 3)
        u = np.einsum("nmi,mi->nm", tvec, pvec) * inv_det[None]
        qvec = np.cross(tvec, e1[None])
        v = np.einsum("nmi,i->nm", qvec, d) * inv_det[None]
        t = np.einsum("nmi,mi->nm", qvec, e2) * inv_det[None]
        hit = ok[None] & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > eps)
        counts[s:s + 2048] = hit.sum(axis=1)
    return (counts % 2 == 1).astype(np.uint8)
