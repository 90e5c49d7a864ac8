"""Cached desk-scale artifacts shared by the test suites and demos.

Everything here is deterministic in its seed and cached under a directory
(default .cache/ at the repo root) keyed by the config fingerprint, so the
python tests and the viewer's integration tests reuse one training run
instead of each paying for their own.
"""
from __future__ import annotations

import hashlib
import json
import os
import time
from pathlib import Path


from .model import ModelConfig, load_checkpoint
from .sampling import sample_shape_points
from .shards import ShardDataset, write_manifest, write_shard
from .toydata import make_toy_dataset, save_toy_shape
from .training import TrainConfig, train_model

DESK_MODEL = dict(code_dim=128, num_parts=8, d_model=128, d_pe=64, num_layers=2,
                  num_heads=4, decomp_hidden=256, head_hidden=256, ff_mult=2,
                  pe_scale=30.0)

DESK_TRAIN = dict(batch_shapes=20, points_vol=512, points_surf=768,
                  transforms_per_shape=8,
                  lr=2e-3, warmup_iters=200, lr_decay=0.9,
                  lr_decay_every_epochs=400, gamma=1e-4, bank_size=4096,
                  subset_min=2, seed=0, log_every=100)

TOY_COUNT = 20
TOY_SEED = 7
SHARD_N_VOL = 16384
SHARD_N_SURF = 32768   # per group; three groups per shape
TOY_SIGMAS = (0.02, 0.07)   # boundary bands matched to the toy feature scale


def cache_root() -> Path:
    root = os.environ.get("PARTGEN_CACHE", None)
    if root:
        return Path(root)
    return Path(__file__).resolve().parents[2] / ".cache"


def _fingerprint(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:12]


def toy_dataset_dir(root: Path | None = None) -> Path:
    """Builds (once) the toy meshes, analytic metadata, and training shards."""
    root = root or cache_root()
    key = _fingerprint({"count": TOY_COUNT, "seed": TOY_SEED,
                        "n_vol": SHARD_N_VOL, "n_surf": SHARD_N_SURF,
                        "sigmas": list(TOY_SIGMAS)})
    out = root / f"toydata_{key}"
    done = out / ".done"
    if done.exists():
        return out
    out.mkdir(parents=True, exist_ok=True)
    shapes = make_toy_dataset(TOY_COUNT, seed=TOY_SEED)
    entries = []
    for i, shape in enumerate(shapes):
        save_toy_shape(shape, out / "meshes", i)
        batch = sample_shape_points(shape.mesh, SHARD_N_VOL, SHARD_N_SURF,
                                    sigmas=TOY_SIGMAS,
                                    seed=TOY_SEED * 1000 + i,
                                    inside_fn=shape.contains)
        entries.append(write_shard(batch, i, out / "shards"))
    write_manifest(out / "shards", entries,
                   meta={"seed": TOY_SEED, "count": TOY_COUNT})
    done.write_text("ok")
    return out


def checkpoint_path(variant: str, epochs: int, root: Path | None = None) -> Path:
    root = root or cache_root()
    data_dir = toy_dataset_dir(root)
    key = _fingerprint({"model": DESK_MODEL, "train": DESK_TRAIN,
                        "variant": variant, "epochs": epochs,
                        "data": data_dir.name})
    return root / f"ckpt_{variant}_{key}.pt"


def quick_checkpoint(variant: str = "full", epochs: int = 700,
                     root: Path | None = None) -> Path:
    """Trains (once) the desk-scale model on the toy set and caches it."""
    root = root or cache_root()
    data_dir = toy_dataset_dir(root)
    path = checkpoint_path(variant, epochs, root)
    if path.exists():
        return path
    dataset = ShardDataset.open(data_dir / "shards")
    model_cfg = ModelConfig(variant=variant, **DESK_MODEL)
    train_cfg = TrainConfig(epochs=epochs, **DESK_TRAIN)
    started = time.time()
    trainer = train_model(dataset, model_cfg, train_cfg, quiet=True)
    trainer.save(path, variant=variant, wall_seconds=round(time.time() - started, 1))
    return path


def load_quick(variant: str = "full", epochs: int = 700):
    model, codes, meta = load_checkpoint(quick_checkpoint(variant, epochs))
    return model, codes, meta


ACCEPT_EPOCHS = 5000


def acceptance_checkpoint(variant: str = "full") -> Path:
    return quick_checkpoint(variant, epochs=ACCEPT_EPOCHS)


def load_acceptance(variant: str = "full"):
    model, codes, meta = load_checkpoint(acceptance_checkpoint(variant))
    model.eval()
    return model, codes, meta


def best_cached_checkpoint(variant: str = "full") -> Path:
    """The long acceptance run when already cached, else a short demo run.
    Never trains the long run; callers on a budget get a usable model fast."""
    path = checkpoint_path(variant, ACCEPT_EPOCHS)
    if path.exists():
        return path
    return quick_checkpoint(variant, epochs=40)
