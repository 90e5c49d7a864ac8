"""Command line entry points: data prep, training, inversion, extraction,
evaluation, and the editing service."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch


def _cmd_toy(args):
    from .toydata import make_toy_dataset, save_toy_shape
    shapes = make_toy_dataset(args.count, seed=args.seed)
    for i, s in enumerate(shapes):
        save_toy_shape(s, args.out, i)
    print(f"wrote {len(shapes)} toy shapes to {args.out}")


def _cmd_prep(args):
    from .geometry import load_mesh, normalize_to_unit_sphere
    from .sampling import sample_shape_points
    from .shards import write_manifest, write_shard
    paths = sorted(Path(args.meshes).glob(args.pattern))
    if not paths:
        sys.exit(f"no meshes matching {args.pattern} under {args.meshes}")
    sigmas = tuple(float(s) for s in args.sigmas.split(","))
    entries = []
    for i, p in enumerate(paths):
        mesh, _ = normalize_to_unit_sphere(load_mesh(p))
        batch = sample_shape_points(mesh, args.n_vol, args.n_surf, sigmas=sigmas,
                                    seed=args.seed * 100003 + i)
        entries.append(write_shard(batch, i, args.out))
        print(f"[{i + 1}/{len(paths)}] {p.name}: vol={args.n_vol} "
              f"surf={len(batch.surface_points)} occ={batch.surface_labels.mean():.3f}")
    write_manifest(args.out, entries, meta={"seed": args.seed, "sigmas": sigmas,
                                            "sources": [p.name for p in paths]})
    print(f"manifest written to {args.out}/manifest.json")


def _cmd_train(args):
    from .model import ModelConfig
    from .shards import ShardDataset
    from .training import TrainConfig, train_model
    dataset = ShardDataset.open(args.data)
    model_cfg = ModelConfig(code_dim=args.code_dim, num_parts=args.parts,
                            d_model=args.d_model, d_pe=args.d_pe,
                            num_layers=args.layers, num_heads=args.heads,
                            pe_scale=args.pe_scale, variant=args.variant)
    train_cfg = TrainConfig(epochs=args.epochs, batch_shapes=args.batch_shapes,
                            points_vol=args.points_vol, points_surf=args.points_surf,
                            lr=args.lr, seed=args.seed, out_dir=args.out,
                            warmup_iters=args.warmup,
                            transforms_per_shape=args.transforms_per_shape,
                            checkpoint_every_epochs=args.checkpoint_every)
    train_model(dataset, model_cfg, train_cfg)
    print(f"checkpoint written to {args.out}/checkpoint.pt")


def _resolve_context(args, model, codes):
    """Build a decoding context for extract/generate style commands."""
    from .inversion import fit_latent_prior
    if args.shape is not None:
        z = codes.codes[args.shape].detach()
    else:
        prior = fit_latent_prior(codes)
        gen = torch.Generator().manual_seed(args.seed)
        z = prior.sample(1, gen)[0]
    with torch.no_grad():
        parts = model.decompose(z[None])
        ctx = model.compose(parts.intrinsic, parts.gaussians.stack())
    return ctx


def _cmd_extract(args):
    from .extraction import extract_mesh, make_field, vertex_part_ids
    from .geometry import TriMesh, save_obj
    from .model import load_checkpoint
    model, codes, _ = load_checkpoint(args.checkpoint)
    ctx = _resolve_context(args, model, codes)
    field = make_field(model, ctx)
    mesh, stats = extract_mesh(field, args.resolution,
                               method="dense" if args.dense else "octree",
                               return_stats=True)
    if args.attribute and mesh.num_vertices:
        ids = vertex_part_ids(model, mesh.vertices, ctx)
        mesh = TriMesh(mesh.vertices, mesh.faces, ids)
    save_obj(mesh, args.out)
    print(f"{mesh.num_vertices} vertices, {mesh.num_faces} faces -> {args.out} "
          f"({stats.method}, {stats.eval_count}/{stats.dense_eval_count} evals)")


def _cmd_invert(args):
    from .geometry import load_mesh, normalize_to_unit_sphere
    from .inversion import fit_latent_prior, invert_mesh, save_partset
    from .model import load_checkpoint
    model, codes, _ = load_checkpoint(args.checkpoint)
    prior = fit_latent_prior(codes)
    mesh, _ = normalize_to_unit_sphere(load_mesh(args.mesh))
    code, parts, diag = invert_mesh(model, prior, mesh, seed=args.seed,
                                    iters_code=args.iters_code,
                                    iters_parts=args.iters_parts)
    save_partset(args.out, parts, meta={"source": str(args.mesh),
                                        "stage1": diag["stage1"]["best_loss"],
                                        "stage2": diag["stage2"]["final_loss"]})
    print(f"stage1 nll={diag['stage1']['best_loss']:.4f} "
          f"stage2 bce={diag['stage2']['final_loss']:.4f} -> {args.out}")


def _cmd_eval(args):
    from .extraction import evaluate_grid, make_field
    from .metrics import voxel_iou
    from .model import load_checkpoint
    from .shards import ShardDataset
    from .winding import occupancy_labels
    from .geometry import load_mesh
    model, codes, _ = load_checkpoint(args.checkpoint)
    dataset = ShardDataset.open(args.data)
    n = min(len(dataset), codes.num_shapes)
    axis = np.linspace(-1, 1, args.grid)
    grid_pts = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), -1).reshape(-1, 3)
    ious = []
    for i in range(n):
        with torch.no_grad():
            parts = model.decompose(codes.codes[i][None])
            ctx = model.compose(parts.intrinsic, parts.gaussians.stack())
        pred = evaluate_grid(make_field(model, ctx), args.grid) > 0
        mesh_path = Path(args.meshes) / f"toy_{i:04d}.obj" if args.meshes else None
        if mesh_path and mesh_path.exists():
            gt = occupancy_labels(grid_pts, load_mesh(mesh_path)).reshape(pred.shape).astype(bool)
        else:
            continue
        iou = voxel_iou(pred, gt)
        ious.append(iou)
        print(f"shape {i}: IoU {iou:.4f}")
    if ious:
        print(f"mean IoU over {len(ious)} shapes: {np.mean(ious):.4f}")


def _cmd_serve(args):
    from .service import serve
    serve(args.checkpoint, host=args.host, port=args.port, token=args.token)


def _cmd_demo_ckpt(args):
    from .testsupport import quick_checkpoint
    path = quick_checkpoint(variant=args.variant, epochs=args.epochs)
    print(path)


def main(argv=None):
    p = argparse.ArgumentParser(prog="partgen")
    sub = p.add_subparsers(dest="cmd", required=True)

    t = sub.add_parser("toy", help="generate procedural multi-part toy shapes")
    t.add_argument("--out", required=True)
    t.add_argument("--count", type=int, default=20)
    t.add_argument("--seed", type=int, default=7)
    t.set_defaults(fn=_cmd_toy)

    t = sub.add_parser("prep", help="sample and label supervision points")
    t.add_argument("--meshes", required=True)
    t.add_argument("--pattern", default="*.obj")
    t.add_argument("--out", required=True)
    t.add_argument("--n-vol", type=int, dest="n_vol", default=500_000)
    t.add_argument("--n-surf", type=int, dest="n_surf", default=500_000)
    t.add_argument("--sigmas", default="0.01,0.02")
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(fn=_cmd_prep)

    t = sub.add_parser("train", help="train the auto-decoder")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, default=2000)
    t.add_argument("--batch-shapes", type=int, default=18)
    t.add_argument("--points-vol", type=int, default=2000)
    t.add_argument("--points-surf", type=int, default=6000)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--warmup", type=int, default=2000)
    t.add_argument("--transforms-per-shape", type=int, default=1)
    t.add_argument("--code-dim", type=int, default=256)
    t.add_argument("--parts", type=int, default=16)
    t.add_argument("--d-model", type=int, default=512)
    t.add_argument("--d-pe", type=int, default=256)
    t.add_argument("--layers", type=int, default=4)
    t.add_argument("--heads", type=int, default=8)
    t.add_argument("--pe-scale", type=float, default=30.0)
    t.add_argument("--variant", default="full", choices=["full", "no-dis", "no-enc"])
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--checkpoint-every", type=int, default=100)
    t.set_defaults(fn=_cmd_train)

    t = sub.add_parser("extract", help="mesh a trained or sampled shape")
    t.add_argument("--checkpoint", required=True)
    t.add_argument("--shape", type=int, default=None, help="training shape index")
    t.add_argument("--seed", type=int, default=0, help="sampling seed when no --shape")
    t.add_argument("--resolution", type=int, default=64)
    t.add_argument("--dense", action="store_true")
    t.add_argument("--attribute", action="store_true")
    t.add_argument("--out", required=True)
    t.set_defaults(fn=_cmd_extract)

    t = sub.add_parser("invert", help="fit the model to an unseen mesh")
    t.add_argument("--checkpoint", required=True)
    t.add_argument("--mesh", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--iters-code", type=int, default=250)
    t.add_argument("--iters-parts", type=int, default=250)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(fn=_cmd_invert)

    t = sub.add_parser("eval", help="reconstruction IoU against toy meshes")
    t.add_argument("--checkpoint", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--meshes", default=None)
    t.add_argument("--grid", type=int, default=64)
    t.set_defaults(fn=_cmd_eval)

    t = sub.add_parser("serve", help="run the editing service")
    t.add_argument("--checkpoint", required=True)
    t.add_argument("--host", default="127.0.0.1")
    t.add_argument("--port", type=int, default=8764)
    t.add_argument("--token", default=None)
    t.set_defaults(fn=_cmd_serve)

    t = sub.add_parser("demo-ckpt", help="build or reuse the cached desk-scale checkpoint")
    t.add_argument("--variant", default="full", choices=["full", "no-dis", "no-enc"])
    t.add_argument("--epochs", type=int, default=700)
    t.set_defaults(fn=_cmd_demo_ckpt)

    args = p.parse_args(argv)
    args.fn(args)


if __name__ == "__main__":
    main()
