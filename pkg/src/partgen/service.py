"""HTTP editing service: JSON control plane, binary mesh frames out.

Each session wraps an EditSession plus delivery state. Mutations are cheap
and synchronous; meshing is expensive, so extraction requests return
immediately with an assigned version and run on a worker pool with a
latest-wins queue per session (at most one extraction in flight, the newest
pending request replaces any older one). Viewers long-poll the mesh endpoint
with the last version they have seen.

Mutating endpoints accept a client-chosen request_id; replays return the
original response instead of re-applying the edit.
"""
from __future__ import annotations

import io
import secrets
import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Union

import torch
from fastapi import Depends, FastAPI, HTTPException, Query, Request, Response
from pydantic import BaseModel, Field

from .editing import EditEngine, EditSession, PartKey
from .extraction import build_mesh_frame, extract_mesh, make_field, vertex_part_ids
from .geometry import TriMesh, _parse_obj
from .gmm import AffineTransform
from .inversion import fit_latent_prior, invert_mesh, load_partset
from .model import load_checkpoint

MAX_IDEMPOTENT_CACHE = 256


class TransformBody(BaseModel):
    rotation: Optional[list[list[float]]] = None
    scale: float = 1.0
    translation: Optional[list[float]] = None

    def to_affine(self) -> AffineTransform:
        rot = torch.tensor(self.rotation) if self.rotation is not None else torch.eye(3)
        tr = torch.tensor(self.translation) if self.translation is not None else torch.zeros(3)
        return AffineTransform(rot, torch.tensor(float(self.scale)), tr)


class CreateSessionBody(BaseModel):
    kind: str = "seed"                    # seed | train_shape | obj | partset
    seed: int = 0
    index: int = 0
    obj_text: Optional[str] = None
    partset_path: Optional[str] = None
    invert_iters: int = 250
    source: Optional[str] = None          # tag for part keys; defaults per kind


class PartIdsBody(BaseModel):
    request_id: Optional[str] = None
    part_keys: list[tuple[str, int]]


class TransformPartsBody(PartIdsBody):
    transform: TransformBody


class ToggleBody(PartIdsBody):
    enabled: bool


class MixBody(PartIdsBody):
    from_session: str


class UndoBody(BaseModel):
    request_id: Optional[str] = None


class ExtractBody(BaseModel):
    request_id: Optional[str] = None
    resolution: int = 64
    method: str = "octree"


class InterpolateBody(ExtractBody):
    with_session: str
    alpha: float = Field(0.5, ge=0.0, le=1.0)


class _Record:
    def __init__(self, sid: str, session: EditSession):
        self.id = sid
        self.session = session
        self.lock = threading.RLock()
        self.cond = threading.Condition(self.lock)
        self.mesh_version = 0          # last assigned
        self.completed_version = 0     # last finished
        self.frame: Optional[bytes] = None
        self.frame_keys: list[PartKey] = []
        self.inflight = False
        self.queued = None             # (version, job) latest-wins
        self.dirty = False
        self.idempotent: OrderedDict[str, dict] = OrderedDict()

    def remember(self, request_id: Optional[str], response: dict) -> dict:
        if request_id:
            self.idempotent[request_id] = response
            while len(self.idempotent) > MAX_IDEMPOTENT_CACHE:
                self.idempotent.popitem(last=False)
        return response

    def replay(self, request_id: Optional[str]) -> Optional[dict]:
        if request_id and request_id in self.idempotent:
            return self.idempotent[request_id]
        return None


def _part_descriptor(state) -> dict:
    return {
        "key": list(state.key),
        "enabled": state.enabled,
        "transform": state.transform.to_dict(),
        "gaussian": {
            "pi": float(state.pi),
            "mu": state.mu.tolist(),
            "lam": state.lam.tolist(),
            "axes": state.U.tolist(),
        },
    }


def create_app(checkpoint: Union[str, Path, tuple], token: Optional[str] = None,
               max_sessions: int = 64, workers: int = 2) -> FastAPI:
    if isinstance(checkpoint, (str, Path)):
        model, codes, _meta = load_checkpoint(checkpoint)
    else:
        model, codes = checkpoint
    engine = EditEngine(model)
    prior = fit_latent_prior(codes)

    app = FastAPI(title="part-aware shape editing service")
    records: dict[str, _Record] = {}
    registry_lock = threading.Lock()
    pool = ThreadPoolExecutor(max_workers=workers)

    def auth(request: Request):
        if token is None:
            return
        got = request.headers.get("authorization", "")
        if got != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="missing or bad token")

    def get_record(sid: str) -> _Record:
        with registry_lock:
            rec = records.get(sid)
        if rec is None:
            raise HTTPException(status_code=404, detail=f"unknown session {sid}")
        return rec

    def build_session(body: CreateSessionBody) -> tuple[EditSession, str]:
        if body.kind == "seed":
            gen = torch.Generator().manual_seed(body.seed)
            z = prior.sample(1, gen)[0]
            tag = body.source or f"seed{body.seed}"
            return engine.session_from_code(z, tag), tag
        if body.kind == "train_shape":
            if not 0 <= body.index < codes.num_shapes:
                raise HTTPException(status_code=400, detail="shape index out of range")
            z = codes.codes[body.index].detach()
            tag = body.source or f"train{body.index}"
            return engine.session_from_code(z, tag), tag
        if body.kind == "obj":
            if not body.obj_text:
                raise HTTPException(status_code=400, detail="obj_text required")
            from .geometry import normalize_to_unit_sphere
            mesh, _ = normalize_to_unit_sphere(_parse_obj(body.obj_text))
            _, parts, _ = invert_mesh(model, prior, mesh, seed=body.seed,
                                      iters_code=body.invert_iters,
                                      iters_parts=body.invert_iters)
            tag = body.source or "inverted"
            return engine.session_from_parts(parts, tag), tag
        if body.kind == "partset":
            if not body.partset_path:
                raise HTTPException(status_code=400, detail="partset_path required")
            parts, _ = load_partset(body.partset_path, model)
            tag = body.source or "partset"
            return engine.session_from_parts(parts, tag), tag
        raise HTTPException(status_code=400, detail=f"unknown source kind {body.kind!r}")

    # -- extraction jobs

    def run_job(rec: _Record, version: int, job: dict):
        try:
            field = make_field(model, job["ctx_a"], None, job.get("ctx_b"),
                               None, job.get("alpha", 0.0))
            mesh = extract_mesh(field, job["resolution"], method=job["method"])
            if mesh.num_vertices:
                ids = vertex_part_ids(model, mesh.vertices, job["ctx_a"], None,
                                      job.get("ctx_b"), None, job.get("alpha", 0.0))
                mesh = TriMesh(mesh.vertices, mesh.faces, ids)
            frame = build_mesh_frame(mesh, version)
        except Exception:
            frame = None
        with rec.cond:
            if frame is not None and version > rec.completed_version:
                rec.completed_version = version
                rec.frame = frame
                rec.frame_keys = job["keys"]
                rec.cond.notify_all()
            nxt = rec.queued
            rec.queued = None
            if nxt is None:
                rec.inflight = False
            else:
                pool.submit(run_job, rec, nxt[0], nxt[1])

    def submit_extract(rec: _Record, body: ExtractBody,
                       partner: Optional[_Record] = None,
                       alpha: float = 0.0) -> dict:
        if not 1 <= body.resolution <= 256:
            raise HTTPException(status_code=400, detail="resolution out of range")
        if body.method not in ("octree", "dense"):
            raise HTTPException(status_code=400, detail="unknown method")
        with rec.cond:
            cached = rec.replay(body.request_id)
            if cached:
                return cached
            try:
                ctx_a, keys = engine.context(rec.session)
            except ValueError as e:
                raise HTTPException(status_code=400, detail=str(e))
            job = {"ctx_a": ctx_a, "keys": keys,
                   "resolution": body.resolution, "method": body.method}
            if partner is not None:
                with partner.lock:
                    ctx_b, keys_b = engine.context(partner.session)
                job.update(ctx_b=ctx_b, alpha=alpha, keys=keys + keys_b)
            rec.mesh_version += 1
            version = rec.mesh_version
            rec.dirty = False
            if rec.inflight:
                rec.queued = (version, job)   # replaces any older pending job
            else:
                rec.inflight = True
                pool.submit(run_job, rec, version, job)
            return rec.remember(body.request_id,
                                {"mesh_version": version, "queued": True})

    # -- endpoints

    @app.get("/healthz")
    def healthz():
        return {"ok": True, "sessions": len(records)}

    @app.post("/api/sessions", dependencies=[Depends(auth)])
    def create_session(body: CreateSessionBody):
        with registry_lock:
            if len(records) >= max_sessions:
                raise HTTPException(status_code=429, detail="session limit reached")
        session, _tag = build_session(body)
        sid = secrets.token_hex(8)
        rec = _Record(sid, session)
        with registry_lock:
            records[sid] = rec
        return {"session_id": sid,
                "parts": [_part_descriptor(p) for p in session.parts]}

    @app.get("/api/sessions/{sid}", dependencies=[Depends(auth)])
    def session_state(sid: str):
        rec = get_record(sid)
        with rec.lock:
            return {"session_id": sid,
                    "parts": [_part_descriptor(p) for p in rec.session.parts],
                    "mesh_version": rec.mesh_version,
                    "completed_version": rec.completed_version,
                    "dirty": rec.dirty,
                    "undo_depth": len(rec.session.undo_stack),
                    "redo_depth": len(rec.session.redo_stack)}

    @app.get("/api/sessions/{sid}/parts", dependencies=[Depends(auth)])
    def list_parts(sid: str):
        rec = get_record(sid)
        with rec.lock:
            return {"parts": [_part_descriptor(p) for p in rec.session.parts]}

    @app.delete("/api/sessions/{sid}", dependencies=[Depends(auth)])
    def drop_session(sid: str):
        with registry_lock:
            records.pop(sid, None)
        return {"ok": True}

    def _mutate(rec: _Record, request_id: Optional[str], fn) -> dict:
        with rec.lock:
            cached = rec.replay(request_id)
            if cached:
                return cached
            try:
                fn()
            except KeyError as e:
                raise HTTPException(status_code=404, detail=str(e))
            except ValueError as e:
                raise HTTPException(status_code=400, detail=str(e))
            rec.dirty = True
            return rec.remember(request_id, {
                "ok": True,
                "parts": [_part_descriptor(p) for p in rec.session.parts],
                "mesh_version": rec.mesh_version})

    @app.post("/api/sessions/{sid}/transform", dependencies=[Depends(auth)])
    def transform_parts(sid: str, body: TransformPartsBody):
        rec = get_record(sid)
        t = body.transform.to_affine()
        return _mutate(rec, body.request_id,
                       lambda: engine.apply_transform(rec.session, body.part_keys, t))

    @app.post("/api/sessions/{sid}/toggle", dependencies=[Depends(auth)])
    def toggle_parts(sid: str, body: ToggleBody):
        rec = get_record(sid)
        return _mutate(rec, body.request_id,
                       lambda: engine.set_enabled(rec.session, body.part_keys, body.enabled))

    @app.post("/api/sessions/{sid}/delete", dependencies=[Depends(auth)])
    def delete_parts(sid: str, body: PartIdsBody):
        rec = get_record(sid)
        return _mutate(rec, body.request_id,
                       lambda: engine.delete_parts(rec.session, body.part_keys))

    @app.post("/api/sessions/{sid}/mix", dependencies=[Depends(auth)])
    def mix_parts(sid: str, body: MixBody):
        rec = get_record(sid)
        donor = get_record(body.from_session)
        with donor.lock:
            return _mutate(rec, body.request_id,
                           lambda: engine.mix_parts(rec.session, donor.session, body.part_keys))

    @app.post("/api/sessions/{sid}/undo", dependencies=[Depends(auth)])
    def undo(sid: str, body: UndoBody):
        rec = get_record(sid)
        return _mutate(rec, body.request_id, lambda: rec.session.undo())

    @app.post("/api/sessions/{sid}/redo", dependencies=[Depends(auth)])
    def redo(sid: str, body: UndoBody):
        rec = get_record(sid)
        return _mutate(rec, body.request_id, lambda: rec.session.redo())

    @app.post("/api/sessions/{sid}/extract", dependencies=[Depends(auth)])
    def extract(sid: str, body: ExtractBody):
        rec = get_record(sid)
        return submit_extract(rec, body)

    @app.post("/api/sessions/{sid}/interpolate", dependencies=[Depends(auth)])
    def interpolate(sid: str, body: InterpolateBody):
        rec = get_record(sid)
        partner = get_record(body.with_session)
        resp = submit_extract(rec, body, partner=partner, alpha=body.alpha)
        with rec.lock, partner.lock:
            keys_a = [p.key for p in rec.session.parts if p.enabled]
            keys_b = [p.key for p in partner.session.parts if p.enabled]
        sym = set(keys_a) ^ set(keys_b)
        return {**resp,
                "keys": [list(k) for k in keys_a + keys_b],
                "changed_keys": sorted([list(k) for k in sym])}

    @app.get("/api/sessions/{sid}/mesh", dependencies=[Depends(auth)])
    def mesh_frame(sid: str, after: int = Query(0, ge=0),
                   wait_ms: int = Query(0, ge=0, le=60000)):
        """Latest completed frame, long-polling until newer than `after`."""
        rec = get_record(sid)
        deadline = wait_ms / 1000.0
        with rec.cond:
            if rec.completed_version <= after and deadline > 0:
                rec.cond.wait_for(lambda: rec.completed_version > after, timeout=deadline)
            if rec.frame is None or rec.completed_version <= after:
                return Response(status_code=204)
            headers = {
                "X-Mesh-Version": str(rec.completed_version),
                "X-Part-Keys": ";".join(f"{k[0]}:{k[1]}" for k in rec.frame_keys),
            }
            return Response(content=rec.frame, media_type="application/octet-stream",
                            headers=headers)

    return app


def serve(checkpoint: Union[str, Path], host: str = "127.0.0.1", port: int = 8764,
          token: Optional[str] = None) -> None:
    import uvicorn
    app = create_app(checkpoint, token=token)
    uvicorn.run(app, host=host, port=port, log_level="warning")
