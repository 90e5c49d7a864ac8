"""Procedural multi-part toy solids with analytic occupancy.

Each shape is a union of 2-5 axis-aligned primitives (box / cylinder /
ellipsoid). Every primitive after the first is centered at a point drawn
inside an earlier one, so the union is a single connected solid. Membership
is closed-form, which gives an exact ground truth independent of the mesh
labeling pipeline; the meshes themselves are watertight per primitive.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .geometry import TriMesh, merge_meshes, normalize_to_unit_sphere

KINDS = ("box", "cylinder", "ellipsoid")


@dataclass
class Primitive:
    kind: str
    center: np.ndarray      # (3,)
    size: np.ndarray        # (3,) half-extents / semi-axes; cylinder: size[axis] is half-height
    axis: int = 1           # cylinder axis

    def contains(self, points: np.ndarray) -> np.ndarray:
        d = (points - self.center) / self.size
        if self.kind == "box":
            return (np.abs(d) <= 1.0).all(axis=-1)
        if self.kind == "ellipsoid":
            return (d ** 2).sum(axis=-1) <= 1.0
        if self.kind == "cylinder":
            u, v = [i for i in range(3) if i != self.axis]
            radial = d[..., u] ** 2 + d[..., v] ** 2
            return (radial <= 1.0) & (np.abs(d[..., self.axis]) <= 1.0)
        raise ValueError(f"unknown primitive kind {self.kind}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "center": self.center.tolist(),
                "size": self.size.tolist(), "axis": int(self.axis)}

    @classmethod
    def from_dict(cls, d: dict) -> "Primitive":
        return cls(kind=d["kind"], center=np.array(d["center"], dtype=np.float64),
                   size=np.array(d["size"], dtype=np.float64), axis=int(d["axis"]))

    def transformed(self, center: np.ndarray, scale: float) -> "Primitive":
        """Apply x -> (x - center) * scale; axis-aligned forms are closed under it."""
        return Primitive(self.kind, (self.center - center) * scale, self.size * scale, self.axis)


@dataclass
class ToyShape:
    parts: list[Primitive]
    mesh: TriMesh

    def contains(self, points: np.ndarray) -> np.ndarray:
        out = np.zeros(points.shape[:-1], dtype=bool)
        for p in self.parts:
            out |= p.contains(points)
        return out

    def contains_per_part(self, points: np.ndarray) -> np.ndarray:
        return np.stack([p.contains(points) for p in self.parts], axis=-1)


# ---------------------------------------------------------------------------
# primitive meshes (watertight)


def _box_mesh(center, size) -> TriMesh:
    signs = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=np.float64)
    verts = center + signs * size
    faces = np.array([
        [0, 1, 3], [0, 3, 2],   # x-
        [4, 6, 7], [4, 7, 5],   # x+
        [0, 4, 5], [0, 5, 1],   # y-
        [2, 3, 7], [2, 7, 6],   # y+
        [0, 2, 6], [0, 6, 4],   # z-
        [1, 5, 7], [1, 7, 3],   # z+
    ], dtype=np.int64)
    return TriMesh(verts, faces)


def _cylinder_mesh(center, size, axis: int, segments: int = 48) -> TriMesh:
    u, v = [i for i in range(3) if i != axis]
    ang = np.linspace(0.0, 2.0 * np.pi, segments, endpoint=False)
    ring = np.zeros((segments, 3))
    ring[:, u] = np.cos(ang) * size[u]
    ring[:, v] = np.sin(ang) * size[v]
    bottom = ring.copy()
    bottom[:, axis] = -size[axis]
    top = ring.copy()
    top[:, axis] = size[axis]
    cb = np.zeros(3)
    cb[axis] = -size[axis]
    ct = np.zeros(3)
    ct[axis] = size[axis]
    verts = np.concatenate([bottom, top, cb[None], ct[None]]) + center
    ib, it = 2 * segments, 2 * segments + 1
    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        faces += [[i, j, segments + i], [j, segments + j, segments + i]]   # wall
        faces += [[ib, j, i], [it, segments + i, segments + j]]            # caps
    m = TriMesh(verts, np.array(faces, dtype=np.int64))
    # orientation check: flip if signed volume came out negative
    from .geometry import mesh_volume
    if mesh_volume(m) < 0:
        m = TriMesh(m.vertices, m.faces[:, [0, 2, 1]])
    return m


def _ellipsoid_mesh(center, size, rings: int = 12, segments: int = 24) -> TriMesh:
    verts = [np.array([0.0, size[1], 0.0])]
    for r in range(1, rings):
        phi = np.pi * r / rings
        for s in range(segments):
            th = 2.0 * np.pi * s / segments
            verts.append(np.array([np.sin(phi) * np.cos(th) * size[0],
                                   np.cos(phi) * size[1],
                                   np.sin(phi) * np.sin(th) * size[2]]))
    verts.append(np.array([0.0, -size[1], 0.0]))
    verts = np.array(verts) + center
    south = len(verts) - 1
    faces = []
    for s in range(segments):
        faces.append([0, 1 + (s + 1) % segments, 1 + s])
    for r in range(rings - 2):
        a = 1 + r * segments
        b = 1 + (r + 1) * segments
        for s in range(segments):
            s2 = (s + 1) % segments
            faces += [[a + s, a + s2, b + s], [a + s2, b + s2, b + s]]
    a = 1 + (rings - 2) * segments
    for s in range(segments):
        faces.append([south, a + s, a + (s + 1) % segments])
    m = TriMesh(verts, np.array(faces, dtype=np.int64))
    from .geometry import mesh_volume
    if mesh_volume(m) < 0:
        m = TriMesh(m.vertices, m.faces[:, [0, 2, 1]])
    return m


def primitive_mesh(p: Primitive) -> TriMesh:
    if p.kind == "box":
        return _box_mesh(p.center, p.size)
    if p.kind == "cylinder":
        return _cylinder_mesh(p.center, p.size, p.axis)
    if p.kind == "ellipsoid":
        return _ellipsoid_mesh(p.center, p.size)
    raise ValueError(f"unknown primitive kind {p.kind}")


# ---------------------------------------------------------------------------
# generation


def generate_toy_shape(rng: np.random.Generator, min_parts: int = 2,
                       max_parts: int = 5) -> ToyShape:
    n = int(rng.integers(min_parts, max_parts + 1))
    parts: list[Primitive] = []
    for i in range(n):
        kind = KINDS[rng.integers(len(KINDS))]
        size = rng.uniform(0.12, 0.35, size=3)
        axis = int(rng.integers(3))
        if i == 0:
            center = rng.uniform(-0.15, 0.15, size=3)
        else:
            host = parts[rng.integers(len(parts))]
            # center inside the host's core guarantees solid overlap
            center = host.center + rng.uniform(-0.5, 0.5, size=3) * host.size
        center = np.clip(center, -0.5, 0.5)
        parts.append(Primitive(kind, center, size, axis))

    merged = merge_meshes([primitive_mesh(p) for p in parts], part_ids=list(range(n)))
    normalized, tf = normalize_to_unit_sphere(merged)
    parts = [p.transformed(tf["center"], tf["scale"]) for p in parts]
    return ToyShape(parts=parts, mesh=normalized)


def make_toy_dataset(n_shapes: int, seed: int = 0) -> list[ToyShape]:
    rng = np.random.default_rng(seed)
    return [generate_toy_shape(rng) for _ in range(n_shapes)]


def save_toy_shape(shape: ToyShape, out_dir: Union[str, Path], index: int) -> None:
    from .geometry import save_obj
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_obj(shape.mesh, out_dir / f"toy_{index:04d}.obj")
    meta = {"parts": [p.to_dict() for p in shape.parts]}
    (out_dir / f"toy_{index:04d}.json").write_text(json.dumps(meta, indent=1))


def load_toy_shape(out_dir: Union[str, Path], index: int) -> ToyShape:
    from .geometry import load_mesh
    out_dir = Path(out_dir)
    mesh = load_mesh(out_dir / f"toy_{index:04d}.obj")
    meta = json.loads((out_dir / f"toy_{index:04d}.json").read_text())
    return ToyShape(parts=[Primitive.from_dict(d) for d in meta["parts"]], mesh=mesh)
