"""Isosurface extraction from occupancy fields, with part attribution.

The zero level set of the logit field is polygonized by marching cubes over
the cell grid of [-1, 1]^3. Two evaluation strategies share one polygonizer:

  dense  - evaluate every corner of the (R+1)^3 lattice.
  octree - evaluate a coarse corner lattice, flag coarse cells whose corners
           disagree in sign or come within a logit band of zero, refine those
           to the target lattice, then iteratively dilate the set of
           sign-crossing fine cells until closed.

Both paths collect the identical set of sign-crossing cells for well-behaved
fields and emit vertices/faces in the identical deterministic order, so their
outputs match bit for bit while the octree evaluates a small fraction of the
lattice. Corner logits are cached by lattice index and never recomputed.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import torch

from .geometry import TriMesh
from .mc_tables import EDGE_TABLE, TRI_TABLE

FieldFn = Callable[[np.ndarray], np.ndarray]   # (n, 3) float32 -> (n,) float32 logits

DEFAULT_TAU = 2.0
GRID_LO, GRID_HI = -1.0, 1.0

# corner c of a cell at (i, j, k) sits at (i, j, k) + CORNER_OFFSETS[c]
CORNER_OFFSETS = np.array([
    [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
    [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
], dtype=np.int64)

# edge e runs from corner EDGE_CORNERS[e][0] to EDGE_CORNERS[e][1]; the
# canonical key orients every edge from its lexicographically lower corner
# along +axis
EDGE_CORNERS = np.array([
    [0, 1], [1, 2], [2, 3], [3, 0],
    [4, 5], [5, 6], [6, 7], [7, 4],
    [0, 4], [1, 5], [2, 6], [3, 7],
], dtype=np.int64)
EDGE_BASE = np.minimum(CORNER_OFFSETS[EDGE_CORNERS[:, 0]],
                       CORNER_OFFSETS[EDGE_CORNERS[:, 1]])
EDGE_AXIS = np.argmax(np.abs(CORNER_OFFSETS[EDGE_CORNERS[:, 0]]
                             - CORNER_OFFSETS[EDGE_CORNERS[:, 1]]), axis=1)


class CachingFieldEvaluator:
    """Evaluates field logits at corner-lattice points, memoizing by the flat
    corner index so neither extraction path ever evaluates a point twice."""

    def __init__(self, field: FieldFn, resolution: int, batch: int = 65536):
        self.field = field
        self.res = resolution
        self.batch = batch
        self._ids = np.empty(0, dtype=np.int64)
        self._vals = np.empty(0, dtype=np.float32)
        self.eval_count = 0

    def corner_coords(self, flat: np.ndarray) -> np.ndarray:
        n = self.res + 1
        i, rem = np.divmod(flat, n * n)
        j, k = np.divmod(rem, n)
        idx = np.stack([i, j, k], axis=1).astype(np.float64)
        pts = GRID_LO + (GRID_HI - GRID_LO) * idx / self.res
        return pts.astype(np.float32)

    def query(self, flat: np.ndarray) -> np.ndarray:
        flat = np.asarray(flat, dtype=np.int64)
        uniq = np.unique(flat)
        pos = np.searchsorted(self._ids, uniq)
        known = (pos < len(self._ids)) & (self._ids[np.clip(pos, 0, max(len(self._ids) - 1, 0))] == uniq) \
            if len(self._ids) else np.zeros(len(uniq), dtype=bool)
        missing = uniq[~known]
        if len(missing):
            pts = self.corner_coords(missing)
            vals = np.empty(len(missing), dtype=np.float32)
            for s in range(0, len(missing), self.batch):
                vals[s:s + self.batch] = self.field(pts[s:s + self.batch])
            self.eval_count += len(missing)
            self._ids = np.concatenate([self._ids, missing])
            self._vals = np.concatenate([self._vals, vals])
            order = np.argsort(self._ids, kind="stable")
            self._ids = self._ids[order]
            self._vals = self._vals[order]
        return self._vals[np.searchsorted(self._ids, flat)]


def _corner_flat(idx: np.ndarray, resolution: int) -> np.ndarray:
    n = resolution + 1
    return (idx[..., 0] * n + idx[..., 1]) * n + idx[..., 2]


def _cell_corner_flats(cells: np.ndarray, resolution: int) -> np.ndarray:
    """(c, 3) cells -> (c, 8) flat corner indices."""
    return _corner_flat(cells[:, None, :] + CORNER_OFFSETS[None], resolution)


def _crossing(vals8: np.ndarray) -> np.ndarray:
    inside = vals8 > 0.0
    return inside.any(axis=1) & ~inside.all(axis=1)


def _polygonize(cells: np.ndarray, ev: CachingFieldEvaluator) -> TriMesh:
    """Marching cubes over an explicit set of cells (must all be crossing).

    Vertex numbering is the sorted order of canonical edge keys and faces are
    emitted in (cell, table-entry) order, so the output depends only on the
    cell set and the corner logits.
    """
    res = ev.res
    if len(cells) == 0:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    order = np.lexsort((cells[:, 2], cells[:, 1], cells[:, 0]))
    cells = cells[order]
    vals = ev.query(_cell_corner_flats(cells, res).ravel()).reshape(-1, 8)
    inside = vals > 0.0
    case = (inside << np.arange(8)).sum(axis=1)

    edge_keys = (_corner_flat(cells[:, None, :] + EDGE_BASE[None], res) * 3
                 + EDGE_AXIS[None])                                   # (c, 12)
    used = (EDGE_TABLE[case][:, None] & (1 << np.arange(12))[None]) != 0
    unique_keys = np.unique(edge_keys[used])
    vid = np.searchsorted(unique_keys, edge_keys)                     # (c, 12)

    tri = TRI_TABLE[case]                                             # (c, 16)
    valid = tri >= 0
    faces = np.take_along_axis(vid, np.where(valid, tri, 0), axis=1)[valid]
    faces = faces.reshape(-1, 3)

    base_flat = unique_keys // 3
    axis = (unique_keys % 3).astype(np.int64)
    n = res + 1
    i, rem = np.divmod(base_flat, n * n)
    j, k = np.divmod(rem, n)
    ijk = np.stack([i, j, k], axis=1).astype(np.float64)
    v1 = ev.query(base_flat).astype(np.float64)
    step = np.zeros((len(unique_keys), 3), dtype=np.int64)
    step[np.arange(len(unique_keys)), axis] = 1
    v2 = ev.query(_corner_flat((np.stack([i, j, k], axis=1) + step), res)).astype(np.float64)
    t = v1 / (v1 - v2)
    pos = GRID_LO + (GRID_HI - GRID_LO) * ijk / res
    pos[np.arange(len(unique_keys)), axis] += t * (GRID_HI - GRID_LO) / res
    # table winding with the inside = positive-logit convention faces inward;
    # swap to outward normals
    return TriMesh(pos, faces[:, [0, 2, 1]].astype(np.int64))


# ---------------------------------------------------------------------------
# dense path


def _dense_crossing_cells(ev: CachingFieldEvaluator) -> np.ndarray:
    res = ev.res
    n = res + 1
    flat = np.arange(n ** 3, dtype=np.int64)
    vals = ev.query(flat).reshape(n, n, n)
    inside = vals > 0.0
    agg_any = np.zeros((res, res, res), dtype=bool)
    agg_all = np.ones((res, res, res), dtype=bool)
    for dx, dy, dz in CORNER_OFFSETS:
        c = inside[dx:dx + res, dy:dy + res, dz:dz + res]
        agg_any |= c
        agg_all &= c
    return np.argwhere(agg_any & ~agg_all).astype(np.int64)


# ---------------------------------------------------------------------------
# octree path


def _pick_root(resolution: int) -> Optional[int]:
    """Coarse cells per axis: near 16 below resolution 128, else near 32.
    Must reach the target by repeated doubling, so the quotient has to be a
    power of two; returns None (dense fallback) when no such root exists or
    the target is small enough that dense is already cheap."""
    if resolution <= 32:
        return None
    prefer = 16 if resolution < 128 else 32
    roots = [resolution >> k for k in range(1, resolution.bit_length())
             if resolution % (1 << k) == 0 and 8 <= resolution >> k < resolution]
    if not roots:
        return None
    return min(roots, key=lambda d: (abs(d - prefer), d))


_NEIGHBORS = np.array([[dx, dy, dz]
                       for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
                       if (dx, dy, dz) != (0, 0, 0)], dtype=np.int64)


def _level_corner_flats(cells: np.ndarray, level: int, res: int) -> np.ndarray:
    """Corners of level-lattice cells addressed in fine-lattice flat ids, so
    coarse evaluations are reused verbatim by finer levels."""
    return _corner_flat((cells[:, None, :] + CORNER_OFFSETS[None]) * (res // level), res)


_CHILD_OFFSETS = np.array([[dx, dy, dz] for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)],
                          dtype=np.int64)


def _octree_crossing_cells(ev: CachingFieldEvaluator, root: int,
                           tau: float) -> np.ndarray:
    res = ev.res

    # coarse pass: flag cells whose corners change sign or sit within the
    # logit band; the band shrinks with the cells so it tracks geometry scale
    cg = np.stack(np.meshgrid(*[np.arange(root)] * 3, indexing="ij"), axis=-1).reshape(-1, 3)
    vals = ev.query(_level_corner_flats(cg, root, res).ravel()).reshape(-1, 8)
    flagged = cg[_crossing(vals) | (np.abs(vals).min(axis=1) < tau)]

    # refine by doubling; the last transition keeps only true sign crossings
    # (the closure below recovers any neighbors the band would have added)
    level, band = root, tau
    while level < res:
        level *= 2
        band /= 2.0
        children = (flagged[:, None, :] * 2 + _CHILD_OFFSETS[None]).reshape(-1, 3)
        vals = ev.query(_level_corner_flats(children, level, res).ravel()).reshape(-1, 8)
        if level == res:
            tested_final = children
            flagged = children[_crossing(vals)]
        else:
            flagged = children[_crossing(vals) | (np.abs(vals).min(axis=1) < band)]
    crossing = flagged

    # iterative one-cell dilation until no new crossing cell appears, which
    # closes the region-growing over the whole connected isosurface
    def cell_flat(c):
        return (c[:, 0] * res + c[:, 1]) * res + c[:, 2]

    known = set(cell_flat(tested_final).tolist()) if len(crossing) else set()
    accepted = crossing
    frontier = crossing
    while len(frontier):
        cand = (frontier[:, None, :] + _NEIGHBORS[None]).reshape(-1, 3)
        ok = (cand >= 0).all(axis=1) & (cand < res).all(axis=1)
        cand = cand[ok]
        if len(cand) == 0:
            break
        cf = cell_flat(cand)
        _, first = np.unique(cf, return_index=True)
        cand, cf = cand[first], cf[first]
        new = np.array([x not in known for x in cf.tolist()], dtype=bool)
        cand = cand[new]
        if len(cand) == 0:
            break
        known.update(cell_flat(cand).tolist())
        vals = ev.query(_cell_corner_flats(cand, res).ravel()).reshape(-1, 8)
        hits = cand[_crossing(vals)]
        if len(hits) == 0:
            break
        accepted = np.concatenate([accepted, hits])
        frontier = hits
    return accepted


# ---------------------------------------------------------------------------
# public api


@dataclass
class ExtractionStats:
    resolution: int
    method: str
    eval_count: int
    dense_eval_count: int
    num_cells: int


def extract_mesh(field: FieldFn, resolution: int, tau: float = DEFAULT_TAU,
                 method: str = "octree", batch: int = 65536,
                 return_stats: bool = False):
    """Polygonize the zero isosurface of a logit field at the given cell
    resolution (corners form a (resolution+1)^3 lattice over [-1, 1]^3)."""
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    if method not in ("octree", "dense"):
        raise ValueError(f"unknown extraction method {method!r}")
    ev = CachingFieldEvaluator(field, resolution, batch=batch)
    root = _pick_root(resolution) if method == "octree" else None
    if root is None:
        cells = _dense_crossing_cells(ev)
        used = "dense"
    else:
        cells = _octree_crossing_cells(ev, root, tau)
        used = "octree"
    mesh = _polygonize(cells, ev)
    if return_stats:
        stats = ExtractionStats(resolution=resolution, method=used,
                                eval_count=ev.eval_count,
                                dense_eval_count=(resolution + 1) ** 3,
                                num_cells=int(len(cells)))
        return mesh, stats
    return mesh


def evaluate_grid(field: FieldFn, points_per_axis: int, batch: int = 65536) -> np.ndarray:
    """Dense logit samples on an inclusive lattice over [-1, 1]^3,
    shape (n, n, n). points_per_axis=2 evaluates just the 8 cube corners."""
    n = points_per_axis
    axis = np.linspace(GRID_LO, GRID_HI, n) if n > 1 else np.array([0.0])
    pts = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1)
    flat = pts.reshape(-1, 3).astype(np.float32)
    out = np.empty(len(flat), dtype=np.float32)
    for s in range(0, len(flat), batch):
        out[s:s + batch] = field(flat[s:s + batch])
    return out.reshape(n, n, n)


def make_field(model, ctx_a: torch.Tensor, mask_a: Optional[torch.Tensor] = None,
               ctx_b: Optional[torch.Tensor] = None,
               mask_b: Optional[torch.Tensor] = None,
               alpha: float = 0.0, chunk: int = 8192) -> FieldFn:
    """Close a decoder context over numpy in/out for the extraction code."""

    def field(points: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            x = torch.from_numpy(np.ascontiguousarray(points, dtype=np.float32))
            logits = []
            for s in range(0, len(x), chunk):
                lg = model.decoder(x[None, s:s + chunk], ctx_a, mask_a,
                                   ctx_b, mask_b, alpha)
                logits.append(lg[0])
            return torch.cat(logits).numpy().astype(np.float32)

    return field


def vertex_part_ids(model, vertices: np.ndarray, ctx_a: torch.Tensor,
                    mask_a: Optional[torch.Tensor] = None,
                    ctx_b: Optional[torch.Tensor] = None,
                    mask_b: Optional[torch.Tensor] = None,
                    alpha: float = 0.0, chunk: int = 8192) -> np.ndarray:
    """Attribute each vertex to the part with the largest attention mass,
    summed over decoder layers and heads (masked parts never win: their
    attention weights are exactly zero).

    With a second context the part axis is the concatenation [parts of A,
    parts of B] and each side's mass is scaled by its blend weight.
    """
    m = ctx_a.shape[1]
    out = np.empty(len(vertices), dtype=np.int64)
    with torch.no_grad():
        for s in range(0, len(vertices), chunk):
            x = torch.from_numpy(np.ascontiguousarray(vertices[s:s + chunk], dtype=np.float32))
            _, captured = model.decoder(x[None], ctx_a, mask_a, ctx_b, mask_b,
                                        alpha, need_weights=True)
            mass_a = x.new_zeros(x.shape[0], m)
            mass_b = x.new_zeros(x.shape[0], ctx_b.shape[1]) if ctx_b is not None else None
            for w_a, w_b in captured:
                if w_a is not None:
                    mass_a += w_a[0].sum(dim=0)   # (h, n, m) -> (n, m)
                if w_b is not None and mass_b is not None:
                    mass_b += w_b[0].sum(dim=0)
            if ctx_b is not None:
                combined = torch.cat([(1.0 - alpha) * mass_a, alpha * mass_b], dim=-1)
                msk = torch.cat([
                    mask_a[0] if mask_a is not None else torch.ones(m, dtype=torch.bool),
                    mask_b[0] if mask_b is not None else torch.ones(ctx_b.shape[1], dtype=torch.bool),
                ])
            else:
                combined = mass_a
                msk = mask_a[0] if mask_a is not None else torch.ones(m, dtype=torch.bool)
            combined = combined.masked_fill(~msk[None], -1.0)
            out[s:s + chunk] = np.argmax(combined.numpy(), axis=-1)
    return out


# ---------------------------------------------------------------------------
# binary mesh frames (the wire format served to viewers)

FRAME_MAGIC = b"PGMF"
FRAME_VERSION = 1
_FRAME_HEADER = struct.Struct("<4sHHIII")


def build_mesh_frame(mesh: TriMesh, mesh_version: int) -> bytes:
    """Header, float32 positions, uint32 indices, then uint8 part ids when
    the mesh carries them (flag bit 0)."""
    has_ids = mesh.vertex_part_ids is not None
    header = _FRAME_HEADER.pack(FRAME_MAGIC, FRAME_VERSION, 1 if has_ids else 0,
                                mesh_version, mesh.num_vertices, mesh.num_faces)
    chunks = [header,
              np.ascontiguousarray(mesh.vertices, dtype="<f4").tobytes(),
              np.ascontiguousarray(mesh.faces, dtype="<u4").tobytes()]
    if has_ids:
        chunks.append(np.ascontiguousarray(mesh.vertex_part_ids, dtype=np.uint8).tobytes())
    return b"".join(chunks)


def parse_mesh_frame(blob: bytes) -> tuple[int, TriMesh]:
    if len(blob) < _FRAME_HEADER.size:
        raise ValueError("mesh frame too short")
    magic, version, flags, mesh_version, nv, nf = _FRAME_HEADER.unpack_from(blob)
    if magic != FRAME_MAGIC or version != FRAME_VERSION:
        raise ValueError("bad mesh frame header")
    off = _FRAME_HEADER.size
    verts = np.frombuffer(blob, dtype="<f4", count=nv * 3, offset=off).reshape(nv, 3)
    off += nv * 12
    faces = np.frombuffer(blob, dtype="<u4", count=nf * 3, offset=off).reshape(nf, 3)
    off += nf * 12
    ids = None
    if flags & 1:
        ids = np.frombuffer(blob, dtype=np.uint8, count=nv, offset=off).astype(np.int64)
    return mesh_version, TriMesh(verts.astype(np.float64), faces.astype(np.int64), ids)
