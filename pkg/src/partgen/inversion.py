"""Fitting the trained model to unseen shapes.

Stage 1 searches shape-code space: codes drawn from a Gaussian prior fitted
to the training codes are optimized to make the decoded mixture explain the
shape's interior points. Stage 2 abandons the code and optimizes the part
embeddings directly against occupancy labels, with every network weight
frozen; this is what makes the fit faithful enough to edit.
"""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import torch

from .gmm import decode_gaussians, gmm_nll
from .model import PartAwareNet, PartSet, ShapeCodeTable
from .training import occupancy_bce

PARTSET_VERSION = 1


@dataclass
class LatentPrior:
    mean: torch.Tensor   # (d,)
    cov: torch.Tensor    # (d, d)
    chol: torch.Tensor   # (d, d) lower

    def sample(self, n: int, generator: Optional[torch.Generator] = None) -> torch.Tensor:
        eps = torch.randn(n, self.mean.shape[0], generator=generator,
                          dtype=self.mean.dtype)
        return self.mean + eps @ self.chol.T


def fit_latent_prior(codes: Union[ShapeCodeTable, torch.Tensor],
                     ridge: float = 1e-6) -> LatentPrior:
    """Empirical mean/covariance of the training codes, ridge-stabilized."""
    z = codes.codes.detach() if isinstance(codes, ShapeCodeTable) else codes.detach()
    mean = z.mean(dim=0)
    centered = z - mean
    denom = max(z.shape[0] - 1, 1)
    cov = centered.T @ centered / denom + ridge * torch.eye(z.shape[1], dtype=z.dtype)
    try:
        chol = torch.linalg.cholesky(cov)
    except Exception:
        # fall back to an eigen square root when the ridge was not enough
        vals, vecs = torch.linalg.eigh(cov)
        chol = vecs @ torch.diag(vals.clamp_min(1e-8).sqrt())
    return LatentPrior(mean=mean, cov=cov, chol=chol)


@contextmanager
def frozen(module: torch.nn.Module):
    state = [p.requires_grad for p in module.parameters()]
    for p in module.parameters():
        p.requires_grad_(False)
    try:
        yield
    finally:
        for p, s in zip(module.parameters(), state):
            p.requires_grad_(s)


def invert_code(model: PartAwareNet, prior: LatentPrior,
                interior_points: torch.Tensor, iters: int = 250,
                lr: float = 1e-3, restarts: int = 3, seed: int = 0):
    """Stage 1: find a shape code whose decoded mixture covers the interior
    points. Runs up to `restarts` independent initializations and keeps the
    best final loss. Returns (code (d,), diagnostics)."""
    gen = torch.Generator().manual_seed(seed)
    pts = interior_points[None] if interior_points.dim() == 2 else interior_points
    best_z, best_loss, trace = None, float("inf"), []
    with frozen(model):
        for r in range(max(1, restarts)):
            z = prior.sample(1, gen).clone().requires_grad_(True)
            opt = torch.optim.Adam([z], lr=lr)
            loss = None
            for _ in range(iters):
                parts = model.decompose(z)
                loss = gmm_nll(pts, parts.gaussians)
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
            final = loss.item()
            trace.append(final)
            if final < best_loss:
                best_loss, best_z = final, z.detach().clone()
    return best_z.squeeze(0), {"restart_losses": trace, "best_loss": best_loss}


def invert_parts(model: PartAwareNet, code: torch.Tensor,
                 surface_points: torch.Tensor, labels: torch.Tensor,
                 iters: int = 250, lr: float = 1e-4) -> tuple[PartSet, dict]:
    """Stage 2: optimize the part embeddings directly under frozen weights.

    The intrinsic/Gaussian heads keep mapping the evolving embeddings, so the
    result stays a coherent PartSet the editor can use.
    """
    pts = surface_points[None] if surface_points.dim() == 2 else surface_points
    y = labels[None] if labels.dim() == 1 else labels
    with frozen(model):
        with torch.no_grad():
            z_b = model.decompose(code[None]).z_b.detach().clone()
        z_b.requires_grad_(True)
        opt = torch.optim.Adam([z_b], lr=lr)
        history = []
        loss = None
        for _ in range(iters):
            s = model.decomposition.to_intrinsic(z_b)
            raw = model.decomposition.to_raw_gaussian(z_b)
            g = decode_gaussians(raw)
            ctx = model.compose(s, g.stack())
            logits = model.occupancy(pts, ctx)
            loss = occupancy_bce(logits, y)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            history.append(loss.item())
        z_b = z_b.detach()
        with torch.no_grad():
            s = model.decomposition.to_intrinsic(z_b)
            raw = model.decomposition.to_raw_gaussian(z_b)
            parts = PartSet(z_b=z_b, intrinsic=s, raw_gaussians=raw,
                            gaussians=decode_gaussians(raw))
    return parts, {"final_loss": history[-1] if history else None, "history": history}


def invert_mesh(model: PartAwareNet, prior: LatentPrior, mesh,
                n_vol: int = 1024, n_surf: int = 1024, seed: int = 0,
                iters_code: int = 250, iters_parts: int = 250,
                lr_code: float = 1e-3, lr_parts: float = 1e-4,
                restarts: int = 3):
    """Sample supervision points from a normalized mesh and run both stages.
    Returns (code, part_set, diagnostics)."""
    from .sampling import sample_shape_points
    batch = sample_shape_points(mesh, n_vol, n_surf, seed=seed)
    vol = torch.from_numpy(batch.volume_points)
    surf = torch.from_numpy(batch.surface_points)
    y = torch.from_numpy(batch.surface_labels)
    code, d1 = invert_code(model, prior, vol, iters=iters_code, lr=lr_code,
                           restarts=restarts, seed=seed)
    parts, d2 = invert_parts(model, code, surf, y, iters=iters_parts, lr=lr_parts)
    return code, parts, {"stage1": d1, "stage2": d2}


# ---------------------------------------------------------------------------
# part-set files


def save_partset(path: Union[str, Path], parts: PartSet,
                 meta: Optional[dict] = None) -> None:
    torch.save({
        "format_version": PARTSET_VERSION,
        "z_b": parts.z_b.detach().cpu(),
        "intrinsic": parts.intrinsic.detach().cpu(),
        "raw_gaussians": parts.raw_gaussians.detach().cpu(),
        "meta": meta or {},
    }, Path(path))


def load_partset(path: Union[str, Path],
                 model: Optional[PartAwareNet] = None) -> tuple[PartSet, dict]:
    """When a model is given, the intrinsic/raw heads are recomputed from the
    stored embeddings (authoritative); otherwise the stored values are used."""
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("format_version") != PARTSET_VERSION:
        raise ValueError(f"unsupported part-set version {payload.get('format_version')}")
    z_b = payload["z_b"]
    if model is not None:
        with torch.no_grad():
            s = model.decomposition.to_intrinsic(z_b)
            raw = model.decomposition.to_raw_gaussian(z_b)
    else:
        s, raw = payload["intrinsic"], payload["raw_gaussians"]
    parts = PartSet(z_b=z_b, intrinsic=s, raw_gaussians=raw,
                    gaussians=decode_gaussians(raw))
    return parts, payload.get("meta", {})
