"""Part-aware occupancy networks.

Pipeline: a shape code z_a is decomposed into m part embeddings; each part
yields an intrinsic vector s_j and raw Gaussian parameters g_j. Decoded
(optionally user-transformed) Gaussians are re-injected into the part
embeddings, a mixing encoder lets parts exchange information, and a
cross-attention decoder predicts occupancy logits for query points. The
decoder has no self-attention over points, so cost is linear in the number
of queries and each point's logit is independent of the others.
"""
from __future__ import annotations

import math
import os
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import torch
import torch.nn as nn

from .gmm import (AffineTransform, GaussianParams, RAW_WIDTH, decode_gaussians,
                  transform_gaussian)

CHECKPOINT_VERSION = 1
VARIANTS = ("full", "no-dis", "no-enc")


@dataclass
class ModelConfig:
    code_dim: int = 256
    num_parts: int = 16
    d_model: int = 512
    d_pe: int = 256
    num_layers: int = 4
    num_heads: int = 8
    decomp_hidden: int = 1024
    head_hidden: int = 512
    ff_mult: int = 4
    pe_scale: float = 30.0
    variant: str = "full"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.d_model % self.num_heads or self.d_pe % self.num_heads:
            raise ValueError("d_model and d_pe must be divisible by num_heads")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class PartSet:
    """Per-part quantities for a batch of shapes (leading dim b, parts m)."""

    z_b: torch.Tensor            # (b, m, d_model) part embeddings
    intrinsic: torch.Tensor      # (b, m, d_model) s_j
    raw_gaussians: torch.Tensor  # (b, m, 16)
    gaussians: GaussianParams    # decoded

    def detach(self) -> "PartSet":
        return PartSet(self.z_b.detach(), self.intrinsic.detach(),
                       self.raw_gaussians.detach(), self.gaussians.detach())


class ShapeCodeTable(nn.Module):
    """Learnable per-shape codes, one row per training shape."""

    def __init__(self, num_shapes: int, code_dim: int):
        super().__init__()
        self.codes = nn.Parameter(torch.randn(num_shapes, code_dim) / code_dim)

    def forward(self, idx: torch.Tensor) -> torch.Tensor:
        return self.codes[idx]

    @property
    def num_shapes(self) -> int:
        return self.codes.shape[0]


def _mlp(dims: Sequence[int]) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i in range(len(dims) - 1):
        layers.append(nn.Linear(dims[i], dims[i + 1]))
        if i < len(dims) - 2:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


class Decomposition(nn.Module):
    """z_a -> m part embeddings -> (intrinsic s_j, raw gaussian g_j)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.m = cfg.num_parts
        self.d = cfg.d_model
        self.split = nn.Linear(cfg.code_dim, cfg.num_parts * cfg.d_model)
        self.shared = _mlp([cfg.d_model, cfg.decomp_hidden, cfg.d_model])
        self.to_intrinsic = nn.Linear(cfg.d_model, cfg.d_model)
        self.to_raw_gaussian = nn.Linear(cfg.d_model, RAW_WIDTH)

    def forward(self, z_a: torch.Tensor) -> PartSet:
        z_b = self.shared(self.split(z_a).reshape(*z_a.shape[:-1], self.m, self.d))
        s = self.to_intrinsic(z_b)
        raw = self.to_raw_gaussian(z_b)
        return PartSet(z_b=z_b, intrinsic=s, raw_gaussians=raw,
                       gaussians=decode_gaussians(raw))


class ExtrinsicInjection(nn.Module):
    """z_hat_b = s_j + W_u g_hat_j + b_u, with g_hat in the packed layout."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.proj = nn.Linear(RAW_WIDTH, cfg.d_model)

    def forward(self, intrinsic: torch.Tensor, g_hat: torch.Tensor) -> torch.Tensor:
        return intrinsic + self.proj(g_hat)


class SineEncoding(nn.Module):
    """x -> sin(a (W x + b)). One dense random projection, sine squashed."""

    def __init__(self, d_out: int, scale: float = 30.0):
        super().__init__()
        self.lin = nn.Linear(3, d_out)
        self.scale = scale
        bound = 1.0 / math.sqrt(3.0)
        nn.init.uniform_(self.lin.weight, -bound, bound)
        nn.init.uniform_(self.lin.bias, -bound, bound)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sin(self.scale * self.lin(x))


def attend(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
           key_mask: Optional[torch.Tensor], scale: float):
    """Masked scaled dot-product attention.

    q (b, h, n, dk), k (b, h, m, dk), v (b, h, m, dv); key_mask (b, m) with
    True = usable. Masking adds -inf to the scores before softmax, which
    zeroes the masked weights exactly, so masked parts contribute exact
    zeros to the mix. Returns (out (b, h, n, dv), weights (b, h, n, m)).
    """
    scores = torch.einsum("bhnd,bhmd->bhnm", q, k) * scale
    if key_mask is not None:
        if not key_mask.any(dim=-1).all():
            raise ValueError("attention requires at least one unmasked key per batch row")
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
    weights = torch.softmax(scores, dim=-1)
    out = torch.einsum("bhnm,bhmd->bhnd", weights, v)
    return out, weights


class MultiheadAttention(nn.Module):
    """Multi-head attention with independent query/context widths.

    Queries live in a d_q-wide stream, context in d_kv. Scores are computed
    in d_attn (split over heads); values are projected to d_q so the output
    keeps the query stream width.
    """

    def __init__(self, d_q: int, d_kv: int, d_attn: int, heads: int):
        super().__init__()
        if d_attn % heads or d_q % heads:
            raise ValueError("widths must divide the head count")
        self.h = heads
        self.dk = d_attn // heads
        self.dv = d_q // heads
        self.wq = nn.Linear(d_q, d_attn)
        self.wk = nn.Linear(d_kv, d_attn)
        self.wv = nn.Linear(d_kv, d_q)
        self.wo = nn.Linear(d_q, d_q)
        self.scale = 1.0 / math.sqrt(self.dk)

    def _heads(self, x: torch.Tensor, dim: int) -> torch.Tensor:
        b, n, _ = x.shape
        return x.reshape(b, n, self.h, dim).transpose(1, 2)

    def forward(self, q_in: torch.Tensor, kv: torch.Tensor,
                key_mask: Optional[torch.Tensor] = None):
        q = self._heads(self.wq(q_in), self.dk)
        k = self._heads(self.wk(kv), self.dk)
        v = self._heads(self.wv(kv), self.dv)
        out, w = attend(q, k, v, key_mask, self.scale)
        b, _, n, _ = out.shape
        return self.wo(out.transpose(1, 2).reshape(b, n, self.h * self.dv)), w


class EncoderLayer(nn.Module):
    """Pre-LN self-attention block for part mixing."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_model
        self.ln1 = nn.LayerNorm(d)
        self.attn = MultiheadAttention(d, d, d, cfg.num_heads)
        self.ln2 = nn.LayerNorm(d)
        self.ff = _mlp([d, cfg.ff_mult * d, d])

    def forward(self, x: torch.Tensor, key_mask: Optional[torch.Tensor]) -> torch.Tensor:
        h = self.ln1(x)
        a, _ = self.attn(h, h, key_mask)
        x = x + a
        return x + self.ff(self.ln2(x))


class MixingEncoder(nn.Module):
    """Self-attention over part tokens. No positional encoding is applied, so
    the map is equivariant to part permutations (up to float reduction order).
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.num_layers))

    def forward(self, x: torch.Tensor, key_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        for layer in self.layers:
            x = layer(x, key_mask)
        return x


class DecoderLayer(nn.Module):
    """Cross-attention block: point queries attend to part tokens.

    No point-to-point self-attention anywhere, so each query row is
    independent. Supports blending two contexts with weight alpha; the
    endpoints alpha in {0, 1} skip the unused branch entirely and are
    therefore bit-identical to a single-context pass.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln_q = nn.LayerNorm(cfg.d_pe)
        self.attn = MultiheadAttention(cfg.d_pe, cfg.d_model, cfg.d_model, cfg.num_heads)
        self.ln_ff = nn.LayerNorm(cfg.d_pe)
        self.ff = _mlp([cfg.d_pe, cfg.ff_mult * cfg.d_pe, cfg.d_pe])

    def forward(self, x: torch.Tensor, ctx_a: torch.Tensor,
                mask_a: Optional[torch.Tensor],
                ctx_b: Optional[torch.Tensor] = None,
                mask_b: Optional[torch.Tensor] = None,
                alpha: float = 0.0):
        q = self.ln_q(x)
        w_a = w_b = None
        if ctx_b is None or alpha == 0.0:
            out, w_a = self.attn(q, ctx_a, mask_a)
        elif alpha == 1.0:
            out, w_b = self.attn(q, ctx_b, mask_b)
        else:
            out_a, w_a = self.attn(q, ctx_a, mask_a)
            out_b, w_b = self.attn(q, ctx_b, mask_b)
            out = (1.0 - alpha) * out_a + alpha * out_b
        x = x + out
        return x + self.ff(self.ln_ff(x)), (w_a, w_b)


class OccupancyDecoder(nn.Module):
    """Sine-encoded points -> stacked cross-attention -> occupancy logit."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.pe = SineEncoding(cfg.d_pe, cfg.pe_scale)
        self.layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.num_layers))
        self.ln_out = nn.LayerNorm(cfg.d_pe)
        self.head = _mlp([cfg.d_pe, cfg.head_hidden, cfg.head_hidden, 1])

    def forward(self, points: torch.Tensor, ctx_a: torch.Tensor,
                mask_a: Optional[torch.Tensor] = None,
                ctx_b: Optional[torch.Tensor] = None,
                mask_b: Optional[torch.Tensor] = None,
                alpha: float = 0.0,
                need_weights: bool = False):
        """points (b, n, 3) -> logits (b, n). With need_weights, also returns
        per-layer attention weight pairs [(w_a, w_b), ...] of (b, h, n, m)."""
        x = self.pe(points)
        captured = []
        for layer in self.layers:
            x, w = layer(x, ctx_a, mask_a, ctx_b, mask_b, alpha)
            if need_weights:
                captured.append(w)
        logits = self.head(self.ln_out(x)).squeeze(-1)
        if need_weights:
            return logits, captured
        return logits


class PartAwareNet(nn.Module):
    """Full model: decomposition + extrinsic injection + mixing + decoder."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.decomposition = Decomposition(cfg)
        self.injection = ExtrinsicInjection(cfg)
        self.mixing = None if cfg.variant == "no-enc" else MixingEncoder(cfg)

        self.decoder = OccupancyDecoder(cfg)

    def decompose(self, z_a: torch.Tensor) -> PartSet:
        return self.decomposition(z_a)

    def compose(self, intrinsic: torch.Tensor, g_hat: torch.Tensor,
                mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Build the decoding context from intrinsics + packed gaussians."""
        z_hat = self.injection(intrinsic, g_hat)
        if self.mixing is None:
            return z_hat
        return self.mixing(z_hat, mask)

    def occupancy(self, points: torch.Tensor, ctx: torch.Tensor,
                  mask: Optional[torch.Tensor] = None, chunk: int = 0,
                  need_weights: bool = False):
        """Decode logits, optionally in fixed-size point chunks. Each point is
        processed independently; chunking only regroups the GEMM batches, so
        values agree up to float reduction order."""
        if mask is not None and not mask.any(dim=-1).all():
            raise ValueError("cannot decode with every part masked")
        if chunk and points.shape[1] > chunk:
            outs = [self.decoder(points[:, s:s + chunk], ctx, mask,
                                 need_weights=need_weights)
                    for s in range(0, points.shape[1], chunk)]
            if need_weights:
                logits = torch.cat([o[0] for o in outs], dim=1)
                weights = [
                    (torch.cat([o[1][l][0] for o in outs], dim=2), None)
                    for l in range(len(outs[0][1]))
                ]
                return logits, weights
            return torch.cat(outs, dim=1)
        return self.decoder(points, ctx, mask, need_weights=need_weights)

    def forward(self, z_a: torch.Tensor, points: torch.Tensor,
                transform: Optional[AffineTransform] = None,
                mask: Optional[torch.Tensor] = None,
                return_parts: bool = False):
        """Occupancy logits for query points under a shape code.

        The transform is applied to the decoded Gaussians only; callers who
        transform the shape must feed correspondingly transformed points.
        """
        parts = self.decompose(z_a)
        g = parts.gaussians
        if transform is not None:
            g = transform_gaussian(g, transform)
        ctx = self.compose(parts.intrinsic, g.stack(), mask)
        logits = self.occupancy(points, ctx, mask)
        if return_parts:
            return logits, parts
        return logits


# ---------------------------------------------------------------------------
# checkpoint io


def save_checkpoint(path: Union[str, Path], model: PartAwareNet,
                    codes: ShapeCodeTable, meta: Optional[dict] = None) -> None:
    """Atomic save: write to a temp file in the target dir, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": model.cfg.to_dict(),
        "num_shapes": codes.num_shapes,
        "model_state": model.state_dict(),
        "codes_state": codes.state_dict(),
        "meta": meta or {},
    }
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            torch.save(payload, f)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: Union[str, Path]):
    """Returns (model, codes, meta). Raises on unknown format versions."""
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    cfg = ModelConfig.from_dict(payload["model_config"])
    model = PartAwareNet(cfg)
    model.load_state_dict(payload["model_state"])
    codes = ShapeCodeTable(payload["num_shapes"], cfg.code_dim)
    codes.load_state_dict(payload["codes_state"])
    model.eval()
    return model, codes, payload.get("meta", {})
