"""Binary shard storage for prepared training data.

One shard file per shape: a small JSON header followed by raw little-endian
arrays (float32 points, bit-packed occupancy). A dataset directory holds the
shards plus manifest.json with per-shard sha256 checksums; reads verify them.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .sampling import SampleBatch

MAGIC = b"PGSHRD1\n"
MANIFEST_VERSION = 1


class CorruptShardError(RuntimeError):
    pass


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def encode_shard(batch: SampleBatch, shape_id: int) -> bytes:
    vol = np.ascontiguousarray(batch.volume_points, dtype="<f4")
    surf = np.ascontiguousarray(batch.surface_points, dtype="<f4")
    occ = np.packbits(batch.surface_labels.astype(np.uint8))
    header = json.dumps({
        "shape_id": shape_id,
        "n_vol": int(len(vol)),
        "n_surf": int(len(surf)),
        "occ_bytes": int(occ.nbytes),
    }).encode()
    return b"".join([
        MAGIC,
        struct.pack("<I", len(header)),
        header,
        vol.tobytes(),
        surf.tobytes(),
        occ.tobytes(),
    ])


def decode_shard(blob: bytes) -> tuple[SampleBatch, int]:
    if blob[:len(MAGIC)] != MAGIC:
        raise CorruptShardError("bad shard magic")
    off = len(MAGIC)
    if len(blob) < off + 4:
        raise CorruptShardError("shard truncated in header")
    (hlen,) = struct.unpack_from("<I", blob, off)
    off += 4
    try:
        header = json.loads(blob[off:off + hlen])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptShardError(f"unreadable shard header: {exc}") from exc
    off += hlen
    n_vol, n_surf = header["n_vol"], header["n_surf"]
    need = off + n_vol * 12 + n_surf * 12 + header["occ_bytes"]
    if len(blob) < need:
        raise CorruptShardError(f"shard truncated: {len(blob)} bytes, need {need}")
    vol = np.frombuffer(blob, dtype="<f4", count=n_vol * 3, offset=off).reshape(n_vol, 3)
    off += n_vol * 12
    surf = np.frombuffer(blob, dtype="<f4", count=n_surf * 3, offset=off).reshape(n_surf, 3)
    off += n_surf * 12
    occ_packed = np.frombuffer(blob, dtype=np.uint8, count=header["occ_bytes"], offset=off)
    labels = np.unpackbits(occ_packed)[:n_surf]
    batch = SampleBatch(vol.copy(), surf.copy(), labels)
    return batch, header["shape_id"]


def write_shard(batch: SampleBatch, shape_id: int, out_dir: Union[str, Path]) -> dict:
    """Write one shard, returning its manifest entry."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    blob = encode_shard(batch, shape_id)
    name = f"shape_{shape_id:05d}.shard"
    (out_dir / name).write_bytes(blob)
    return {
        "shape_id": shape_id,
        "file": name,
        "n_vol": int(len(batch.volume_points)),
        "n_surf": int(len(batch.surface_points)),
        "occupied_fraction": float(batch.surface_labels.mean()),
        "sha256": _sha256(blob),
    }


def write_manifest(out_dir: Union[str, Path], entries: list[dict],
                   meta: Optional[dict] = None) -> Path:
    out_dir = Path(out_dir)
    manifest = {
        "version": MANIFEST_VERSION,
        "meta": meta or {},
        "shards": sorted(entries, key=lambda e: e["shape_id"]),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path


def manifest_fingerprint(manifest: dict) -> str:
    """Stable hash of the dataset identity, stored into checkpoints so a
    checkpoint can refuse to resume against different data."""
    body = json.dumps({"version": manifest["version"],
                       "shards": [(e["shape_id"], e["sha256"]) for e in manifest["shards"]]},
                      sort_keys=True).encode()
    return _sha256(body)


@dataclass
class ShardDataset:
    """Lazy reader over a prepared dataset directory."""

    root: Path
    manifest: dict

    @classmethod
    def open(cls, root: Union[str, Path]) -> "ShardDataset":
        root = Path(root)
        manifest_path = root / "manifest.json"
        if not manifest_path.exists():
            raise FileNotFoundError(f"no manifest.json under {root}")
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("version") != MANIFEST_VERSION:
            raise CorruptShardError(f"unsupported manifest version {manifest.get('version')}")
        return cls(root=root, manifest=manifest)

    def __len__(self) -> int:
        return len(self.manifest["shards"])

    @property
    def fingerprint(self) -> str:
        return manifest_fingerprint(self.manifest)

    def entry(self, index: int) -> dict:
        return self.manifest["shards"][index]

    def load(self, index: int, verify: bool = True) -> SampleBatch:
        e = self.entry(index)
        blob = (self.root / e["file"]).read_bytes()
        if verify and _sha256(blob) != e["sha256"]:
            raise CorruptShardError(f"checksum mismatch for {e['file']}")
        batch, shape_id = decode_shard(blob)
        if shape_id != e["shape_id"]:
            raise CorruptShardError(f"shard id {shape_id} != manifest id {e['shape_id']}")
        return batch
