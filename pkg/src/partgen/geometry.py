"""Triangle mesh container, ascii mesh io, and sampling utilities."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np


class InvalidMeshError(ValueError):
    pass


@dataclass
class TriMesh:
    """Indexed triangle mesh. vertices (n, 3) float64, faces (m, 3) int64.

    vertex_part_ids is an optional (n,) int array attaching a part label to
    each vertex; it rides along through io and slicing but is never required.
    """

    vertices: np.ndarray
    faces: np.ndarray
    vertex_part_ids: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise InvalidMeshError(f"vertices must be (n, 3), got {self.vertices.shape}")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise InvalidMeshError(f"faces must be (m, 3), got {self.faces.shape}")
        if not np.isfinite(self.vertices).all():
            raise InvalidMeshError("vertices contain non-finite values")
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise InvalidMeshError("face indices out of range")
        if self.vertex_part_ids is not None:
            self.vertex_part_ids = np.ascontiguousarray(self.vertex_part_ids, dtype=np.int64)
            if self.vertex_part_ids.shape != (len(self.vertices),):
                raise InvalidMeshError("vertex_part_ids must be (n,)")

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def triangles(self) -> np.ndarray:
        """(m, 3, 3) corner positions."""
        return self.vertices[self.faces]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def copy(self) -> "TriMesh":
        ids = None if self.vertex_part_ids is None else self.vertex_part_ids.copy()
        return TriMesh(self.vertices.copy(), self.faces.copy(), ids)


def merge_meshes(meshes: Sequence[TriMesh], part_ids: Optional[Sequence[int]] = None) -> TriMesh:
    """Concatenate meshes into one, offsetting face indices.

    When part_ids is given (one id per input mesh) the result carries
    vertex_part_ids accordingly.
    """
    if not meshes:
        raise InvalidMeshError("merge_meshes needs at least one mesh")
    verts, faces, labels = [], [], []
    offset = 0
    for i, m in enumerate(meshes):
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        if part_ids is not None:
            labels.append(np.full(m.num_vertices, part_ids[i], dtype=np.int64))
        offset += m.num_vertices
    ids = np.concatenate(labels) if part_ids is not None else None
    return TriMesh(np.concatenate(verts), np.concatenate(faces), ids)


# ---------------------------------------------------------------------------
# io: ascii OBJ / OFF / PLY. Only positions and triangular faces are kept.


def load_mesh(path: Union[str, Path]) -> TriMesh:
    path = Path(path)
    ext = path.suffix.lower()
    text = path.read_text()
    if ext == ".obj":
        return _parse_obj(text)
    if ext == ".off":
        return _parse_off(text)
    if ext == ".ply":
        return _parse_ply(text)
    raise InvalidMeshError(f"unsupported mesh format: {ext}")


def _parse_obj(text: str) -> TriMesh:
    verts, faces = [], []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        if tok[0] == "v":
            if len(tok) < 4:
                raise InvalidMeshError(f"malformed vertex line: {line!r}")
            verts.append([float(t) for t in tok[1:4]])
        elif tok[0] == "f":
            if len(tok) < 4:
                raise InvalidMeshError(f"malformed face line: {line!r}")
            # indices may carry /vt/vn suffixes; obj is 1-based, negatives count from end
            idx = []
            for t in tok[1:]:
                s = t.split("/")[0]
                i = int(s)
                idx.append(i - 1 if i > 0 else len(verts) + i)
            # fan-triangulate polygons
            for k in range(1, len(idx) - 1):
                faces.append([idx[0], idx[k], idx[k + 1]])
    if not verts:
        raise InvalidMeshError("obj contains no vertices")
    return TriMesh(np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int64).reshape(-1, 3))


def _parse_off(text: str) -> TriMesh:
    tokens = []
    for line in text.splitlines():
        line = line.split("#")[0].strip()
        if line:
            tokens.extend(line.split())
    if not tokens or tokens[0] != "OFF":
        raise InvalidMeshError("not an OFF file")
    nv, nf = int(tokens[1]), int(tokens[2])
    pos = 4  # skip edge count
    verts = np.array(tokens[pos:pos + 3 * nv], dtype=np.float64).reshape(nv, 3)
    pos += 3 * nv
    faces = []
    for _ in range(nf):
        k = int(tokens[pos])
        idx = [int(t) for t in tokens[pos + 1:pos + 1 + k]]
        pos += 1 + k
        for j in range(1, k - 1):
            faces.append([idx[0], idx[j], idx[j + 1]])
    return TriMesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3))


def _parse_ply(text: str) -> TriMesh:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise InvalidMeshError("not a PLY file")
    nv = nf = 0
    i = 1
    fmt_ok = False
    current = None
    vertex_props = []
    while i < len(lines):
        tok = lines[i].split()
        i += 1
        if not tok:
            continue
        if tok[0] == "format":
            fmt_ok = tok[1] == "ascii"
        elif tok[0] == "element":
            current = tok[1]
            if tok[1] == "vertex":
                nv = int(tok[2])
            elif tok[1] == "face":
                nf = int(tok[2])
        elif tok[0] == "property" and current == "vertex":
            vertex_props.append(tok[-1])
        elif tok[0] == "end_header":
            break
    if not fmt_ok:
        raise InvalidMeshError("only ascii PLY is supported")
    ix, iy, iz = (vertex_props.index(a) for a in ("x", "y", "z"))
    verts = np.empty((nv, 3), dtype=np.float64)
    for v in range(nv):
        tok = lines[i + v].split()
        verts[v] = [float(tok[ix]), float(tok[iy]), float(tok[iz])]
    i += nv
    faces = []
    for f in range(nf):
        tok = lines[i + f].split()
        k = int(tok[0])
        idx = [int(t) for t in tok[1:1 + k]]
        for j in range(1, k - 1):
            faces.append([idx[0], idx[j], idx[j + 1]])
    return TriMesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_obj(mesh: TriMesh, path: Union[str, Path]) -> None:
    """Write ascii OBJ. Part ids, when present, go into a comment block so the
    file stays loadable by any viewer."""
    path = Path(path)
    out = []
    if mesh.vertex_part_ids is not None:
        out.append("# vertex_part_ids " + " ".join(str(int(i)) for i in mesh.vertex_part_ids))
    for v in mesh.vertices:
        out.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    for f in mesh.faces:
        out.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    path.write_text("\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# measures


def face_areas(mesh: TriMesh) -> np.ndarray:
    tri = mesh.triangles()
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    return 0.5 * np.linalg.norm(cross, axis=1)


def surface_area(mesh: TriMesh) -> float:
    return float(face_areas(mesh).sum())


def mesh_volume(mesh: TriMesh) -> float:
    """Signed volume via the divergence theorem (sum of signed tetrahedra).

    Positive for outward-oriented closed meshes.
    """
    tri = mesh.triangles()
    return float(np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6.0)


def normalize_to_unit_sphere(mesh: TriMesh) -> tuple[TriMesh, dict]:
    """Center the bounding box at the origin and scale so max vertex norm is 1.

    Returns the normalized mesh and the applied {center, scale} so the
    transform can be undone (x_norm = (x - center) * scale).
    """
    lo, hi = mesh.bounds()
    center = (lo + hi) / 2.0
    shifted = mesh.vertices - center
    radius = float(np.linalg.norm(shifted, axis=1).max())
    if radius == 0.0:
        raise InvalidMeshError("mesh is a single point, cannot normalize")
    scale = 1.0 / radius
    out = TriMesh(shifted * scale, mesh.faces.copy(),
                  None if mesh.vertex_part_ids is None else mesh.vertex_part_ids.copy())
    return out, {"center": center, "scale": scale}


def degenerate_face_mask(mesh: TriMesh, eps: float = 0.0) -> np.ndarray:
    """True for faces with (near) zero area or repeated vertex indices."""
    f = mesh.faces
    repeated = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
    return repeated | (face_areas(mesh) <= eps)


def drop_degenerate_faces(mesh: TriMesh) -> TriMesh:
    bad = degenerate_face_mask(mesh)
    if bad.any():
        warnings.warn(f"dropping {int(bad.sum())} degenerate faces")
        return TriMesh(mesh.vertices.copy(), mesh.faces[~bad], mesh.vertex_part_ids)
    return mesh


# ---------------------------------------------------------------------------
# sampling


def sample_surface(mesh: TriMesh, n: int, rng: np.random.Generator,
                   return_face_index: bool = False):
    """Draw n points uniformly by area: faces by area weight, then barycentric."""
    areas = face_areas(mesh)
    total = areas.sum()
    if total <= 0:
        raise InvalidMeshError("mesh has zero surface area")
    fi = rng.choice(len(areas), size=n, p=areas / total)
    tri = mesh.vertices[mesh.faces[fi]]
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    a = 1.0 - r1
    b = r1 * (1.0 - r2)
    c = r1 * r2
    pts = a[:, None] * tri[:, 0] + b[:, None] * tri[:, 1] + c[:, None] * tri[:, 2]
    if return_face_index:
        return pts, fi
    return pts


# ---------------------------------------------------------------------------
# point/triangle distance (used by mesh-accuracy style metrics)


def point_triangle_distances(points: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Exact distance from each point to each triangle.

    points (n, 3), tri (m, 3, 3) -> (n, m). Region-based projection onto the
    triangle's plane, edges, or corners (Ericson, Real-Time Collision
    Detection, 5.1.5), vectorized over the full n x m grid.
    """
    p = points[:, None, :]                       # (n, 1, 3)
    a, b, c = tri[None, :, 0], tri[None, :, 1], tri[None, :, 2]
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("nmj,nmj->nm", np.broadcast_arrays(ab, ap)[0], ap)
    d2 = np.einsum("nmj,nmj->nm", np.broadcast_arrays(ac, ap)[0], ap)
    bp = p - b
    d3 = np.einsum("nmj,nmj->nm", np.broadcast_arrays(ab, bp)[0], bp)
    d4 = np.einsum("nmj,nmj->nm", np.broadcast_arrays(ac, bp)[0], bp)
    cp = p - c
    d5 = np.einsum("nmj,nmj->nm", np.broadcast_arrays(ab, cp)[0], cp)
    d6 = np.einsum("nmj,nmj->nm", np.broadcast_arrays(ac, cp)[0], cp)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    denom = va + vb + vc
    # barycentric clamp, guarding the degenerate-triangle denominators
    safe = np.where(np.abs(denom) < 1e-300, 1.0, denom)
    v = np.clip(vb / safe, 0.0, 1.0)
    w = np.clip(vc / safe, 0.0, 1.0)

    closest = a + v[..., None] * ab + w[..., None] * ac

    # vertex regions
    in_a = (d1 <= 0) & (d2 <= 0)
    in_b = (d3 >= 0) & (d4 <= d3)
    in_c = (d6 >= 0) & (d5 <= d6)
    # edge regions
    on_ab = (~in_a) & (~in_b) & (d1 * d4 - d3 * d2 <= 0) & (d1 >= 0) & (d3 <= 0)
    t_ab = np.where(d1 - d3 != 0, d1 / np.where(d1 - d3 == 0, 1.0, d1 - d3), 0.0)
    on_ac = (~in_a) & (~in_c) & (d5 * d2 - d1 * d6 <= 0) & (d2 >= 0) & (d6 <= 0)
    t_ac = np.where(d2 - d6 != 0, d2 / np.where(d2 - d6 == 0, 1.0, d2 - d6), 0.0)
    on_bc = (~in_b) & (~in_c) & (d3 * d6 - d5 * d4 <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
    denom_bc = (d4 - d3) + (d5 - d6)
    t_bc = np.where(denom_bc != 0, (d4 - d3) / np.where(denom_bc == 0, 1.0, denom_bc), 0.0)

    closest = np.where(on_bc[..., None], b + t_bc[..., None] * (c - b), closest)
    closest = np.where(on_ac[..., None], a + t_ac[..., None] * ac, closest)
    closest = np.where(on_ab[..., None], a + t_ab[..., None] * ab, closest)
    closest = np.where(in_c[..., None], np.broadcast_arrays(c, closest)[0], closest)
    closest = np.where(in_b[..., None], np.broadcast_arrays(b, closest)[0], closest)
    closest = np.where(in_a[..., None], np.broadcast_arrays(a, closest)[0], closest)

    return np.linalg.norm(p - closest, axis=-1)


def point_mesh_distance(points: np.ndarray, mesh: TriMesh, chunk: int = 2048) -> np.ndarray:
    """Min distance from each point to the mesh surface, chunked over faces."""
    tri = mesh.triangles()
    best = np.full(len(points), np.inf)
    for s in range(0, len(tri), chunk):
        d = point_triangle_distances(points, tri[s:s + chunk]).min(axis=1)
        best = np.minimum(best, d)
    return best
