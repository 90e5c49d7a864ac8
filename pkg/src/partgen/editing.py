"""Interactive part editing sessions.

A session holds a list of part states: the part embedding, its base decoded
Gaussian, a user transform, and an enabled flag. Parts can come from any
source (training shape, sampled code, inversion, another session), keyed by
(source tag, index) so provenance survives mixing. Recomposition rebuilds the
decoder context from the enabled parts: transformed Gaussians are re-packed
and injected into the intrinsics, mixed, and meshed.

Undo/redo works on full snapshots, so restored states are bit-identical.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .extraction import extract_mesh, make_field, vertex_part_ids
from .geometry import TriMesh
from .gmm import AffineTransform, GaussianParams, transform_gaussian
from .model import PartAwareNet, PartSet

PartKey = tuple[str, int]
SESSION_VERSION = 1


@dataclass
class PartState:
    key: PartKey
    z_b: torch.Tensor          # (d_model,)
    pi: torch.Tensor           # () base mixture weight
    mu: torch.Tensor           # (3,)
    lam: torch.Tensor          # (3,)
    U: torch.Tensor            # (3, 3)
    transform: AffineTransform = field(default_factory=AffineTransform.identity)
    enabled: bool = True

    def gaussian(self) -> GaussianParams:
        """Current (user-transformed) single-component mixture params."""
        g = GaussianParams(self.pi[None], self.mu[None], self.lam[None], self.U[None])
        return transform_gaussian(g, self.transform)

    def clone(self) -> "PartState":
        return PartState(key=self.key, z_b=self.z_b.clone(), pi=self.pi.clone(),
                         mu=self.mu.clone(), lam=self.lam.clone(), U=self.U.clone(),
                         transform=AffineTransform(self.transform.rotation.clone(),
                                                   self.transform.scale.clone(),
                                                   self.transform.translation.clone()),
                         enabled=self.enabled)


@dataclass
class EditSession:
    parts: list[PartState]
    undo_stack: list[list[PartState]] = field(default_factory=list)
    redo_stack: list[list[PartState]] = field(default_factory=list)

    def key_set(self) -> set[PartKey]:
        return {p.key for p in self.parts}

    def find(self, keys: Sequence[PartKey]) -> list[PartState]:
        wanted = {tuple(k) for k in keys}
        found = [p for p in self.parts if p.key in wanted]
        missing = wanted - {p.key for p in found}
        if missing:
            raise KeyError(f"unknown part keys {sorted(missing)}")
        return found

    def _snapshot(self) -> list[PartState]:
        return [p.clone() for p in self.parts]

    def push_undo(self) -> None:
        self.undo_stack.append(self._snapshot())
        self.redo_stack.clear()

    def undo(self) -> bool:
        if not self.undo_stack:
            return False
        self.redo_stack.append(self._snapshot())
        self.parts = self.undo_stack.pop()
        return True

    def redo(self) -> bool:
        if not self.redo_stack:
            return False
        self.undo_stack.append(self._snapshot())
        self.parts = self.redo_stack.pop()
        return True


class EditEngine:
    """Stateless wrapper around a trained model that edits sessions."""

    def __init__(self, model: PartAwareNet):
        self.model = model
        model.eval()

    # -- session construction

    def session_from_parts(self, parts: PartSet, source: str) -> EditSession:
        if parts.z_b.dim() == 3:
            if parts.z_b.shape[0] != 1:
                raise ValueError("sessions are built from a single shape")
            parts = PartSet(parts.z_b[0], parts.intrinsic[0],
                            parts.raw_gaussians[0], parts.gaussians.map(lambda t: t[0]))
        g = parts.gaussians
        states = [PartState(key=(source, j), z_b=parts.z_b[j].detach().clone(),
                            pi=g.pi[j].detach().clone(), mu=g.mu[j].detach().clone(),
                            lam=g.lam[j].detach().clone(), U=g.U[j].detach().clone())
                  for j in range(parts.z_b.shape[0])]
        return EditSession(parts=states)

    def session_from_code(self, z: torch.Tensor, source: str) -> EditSession:
        with torch.no_grad():
            parts = self.model.decompose(z[None])
        return self.session_from_parts(parts, source)

    # -- mutations (each pushes one undo snapshot)

    def apply_transform(self, session: EditSession, keys: Sequence[PartKey],
                        transform: AffineTransform) -> None:
        states = session.find(keys)
        session.push_undo()
        for st in states:
            st.transform = transform.compose(st.transform)

    def set_enabled(self, session: EditSession, keys: Sequence[PartKey],
                    enabled: bool) -> None:
        states = session.find(keys)
        session.push_undo()
        for st in states:
            st.enabled = enabled

    def delete_parts(self, session: EditSession, keys: Sequence[PartKey]) -> None:
        states = session.find(keys)
        session.push_undo()
        drop = {p.key for p in states}
        session.parts = [p for p in session.parts if p.key not in drop]

    def mix_parts(self, session: EditSession, donor: EditSession,
                  keys: Sequence[PartKey]) -> None:
        states = donor.find(keys)
        clash = {p.key for p in states} & session.key_set()
        if clash:
            raise KeyError(f"part keys already present: {sorted(clash)}")
        session.push_undo()
        session.parts.extend(p.clone() for p in states)

    # -- composition

    def context(self, session: EditSession):
        """(ctx (1, k, d_model), keys) over the enabled parts, in list order."""
        active = [p for p in session.parts if p.enabled]
        if not active:
            raise ValueError("session has no enabled parts")
        with torch.no_grad():
            z_b = torch.stack([p.z_b for p in active])[None]
            g_hat = torch.cat([p.gaussian().stack() for p in active])[None]
            s = self.model.decomposition.to_intrinsic(z_b)
            ctx = self.model.compose(s, g_hat)
        return ctx, [p.key for p in active]

    def recompose(self, session: EditSession, resolution: int = 64,
                  method: str = "octree", attribute: bool = True,
                  return_stats: bool = False):
        """Extract the session's mesh; vertex part ids index into the returned
        key list."""
        ctx, keys = self.context(session)
        field_fn = make_field(self.model, ctx)
        out = extract_mesh(field_fn, resolution, method=method, return_stats=return_stats)
        mesh, stats = out if return_stats else (out, None)
        if attribute and mesh.num_vertices:
            ids = vertex_part_ids(self.model, mesh.vertices, ctx)
            mesh = TriMesh(mesh.vertices, mesh.faces, ids)
        if return_stats:
            return mesh, keys, stats
        return mesh, keys

    def interpolate(self, session_a: EditSession, session_b: EditSession,
                    alpha: float, resolution: int = 64, method: str = "octree",
                    highlight: bool = True):
        """Blend two sessions' decoders with weight alpha on the second.

        Returns (mesh, keys, changed) where keys is the combined part-key
        list (A parts then B parts) indexed by the mesh's vertex part ids and
        changed marks vertices attributed to parts outside the sessions'
        shared key set.
        """
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        ctx_a, keys_a = self.context(session_a)
        ctx_b, keys_b = self.context(session_b)
        field_fn = make_field(self.model, ctx_a, None, ctx_b, None, alpha)
        mesh = extract_mesh(field_fn, resolution, method=method)
        keys = keys_a + keys_b
        changed = np.zeros(mesh.num_vertices, dtype=bool)
        if mesh.num_vertices:
            ids = vertex_part_ids(self.model, mesh.vertices, ctx_a, None,
                                  ctx_b, None, alpha)
            mesh = TriMesh(mesh.vertices, mesh.faces, ids)
            if highlight:
                sym_diff = set(keys_a) ^ set(keys_b)
                flag_by_key = np.array([k in sym_diff for k in keys], dtype=bool)
                changed = flag_by_key[mesh.vertex_part_ids]
        return mesh, keys, changed


# ---------------------------------------------------------------------------
# session files


def session_to_payload(session: EditSession) -> dict:
    def pack(parts: list[PartState]) -> list[dict]:
        return [{
            "key": list(p.key), "z_b": p.z_b.tolist(), "pi": float(p.pi),
            "mu": p.mu.tolist(), "lam": p.lam.tolist(), "U": p.U.tolist(),
            "transform": p.transform.to_dict(), "enabled": p.enabled,
        } for p in parts]

    return {"format_version": SESSION_VERSION,
            "parts": pack(session.parts),
            "undo_stack": [pack(s) for s in session.undo_stack],
            "redo_stack": [pack(s) for s in session.redo_stack]}


def session_from_payload(payload: dict) -> EditSession:
    if payload.get("format_version") != SESSION_VERSION:
        raise ValueError(f"unsupported session version {payload.get('format_version')}")

    def unpack(items: list[dict]) -> list[PartState]:
        return [PartState(
            key=(d["key"][0], int(d["key"][1])),
            z_b=torch.tensor(d["z_b"], dtype=torch.get_default_dtype()),
            pi=torch.tensor(float(d["pi"])), mu=torch.tensor(d["mu"]),
            lam=torch.tensor(d["lam"]), U=torch.tensor(d["U"]),
            transform=AffineTransform.from_dict(d["transform"]),
            enabled=bool(d["enabled"]),
        ) for d in items]

    return EditSession(parts=unpack(payload["parts"]),
                       undo_stack=[unpack(s) for s in payload["undo_stack"]],
                       redo_stack=[unpack(s) for s in payload["redo_stack"]])
