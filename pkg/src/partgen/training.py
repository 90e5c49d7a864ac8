"""Auto-decoder training: codes and networks optimized jointly.

Every step runs, per shape in the batch:
  * a mixture fit term on interior points (NLL of the decoded Gaussians),
  * an occupancy pass on labeled points, with a transform drawn from a fixed
    bank applied consistently to Gaussians and points (weights stay put, so
    the decoder is forced to route geometry through the Gaussians),
  * optionally a disentanglement pass: a contiguous-along-a-random-direction
    subset of parts is kept, labels are rewritten so points assigned to
    dropped parts become empty, and the masked forward is supervised on that,
  * a squared-norm penalty on the shape codes.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import torch
import torch.nn.functional as F

from .gmm import GaussianParams, cluster_assign, gmm_nll, random_rotations
from .model import (ModelConfig, PartAwareNet, ShapeCodeTable, save_checkpoint)
from .shards import ShardDataset


@dataclass
class TrainConfig:
    epochs: int = 2000
    batch_shapes: int = 18
    points_vol: int = 2000
    points_surf: int = 6000
    lr: float = 1e-4
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    warmup_iters: int = 2000
    lr_decay: float = 0.9
    lr_decay_every_epochs: int = 500
    gamma: float = 1e-4
    bank_size: int = 100_000
    bank_translation: float = 0.3
    bank_scale: tuple = (0.7, 1.3)
    transforms_per_shape: int = 1   # pose draws per shape per step
    transform_warmup_iters: int = 0   # 0 = full pose range from step one
    subset_min: int = 2
    codes_lr_mult: float = 1.0   # auto-decoder codes often want a hotter lr
    seed: int = 0
    log_every: int = 50
    checkpoint_every_epochs: int = 0   # 0 = only final
    out_dir: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# loss terms


def occupancy_bce(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    return F.binary_cross_entropy_with_logits(logits, labels.to(logits.dtype))


def code_regularizer(z: torch.Tensor) -> torch.Tensor:
    """Mean squared L2 norm of the codes (caller scales by gamma)."""
    return (z ** 2).sum(dim=-1).mean()


def relabel_for_subset(labels: torch.Tensor, assign: torch.Tensor,
                       subset: torch.Tensor) -> torch.Tensor:
    """Rewrite labels for a masked decode: a point keeps its label only when
    its assigned component is inside the subset, otherwise it becomes empty.

    labels (b, n), assign (b, n) component ids, subset (b, m) bool.
    """
    keep = subset.gather(1, assign)
    return labels * keep.to(labels.dtype)


def select_disentangle_subset(mu: torch.Tensor, generator: torch.Generator,
                              subset_min: int = 2) -> torch.Tensor:
    """Spatially contiguous part subsets: project centers on a random
    direction, sort, take a window of random length and offset.

    mu (m, 3) -> bool (m,) with subset_min <= popcount <= m - subset_min.
    """
    m = mu.shape[0]
    hi = m - subset_min
    if hi < subset_min:
        raise ValueError(f"num_parts {m} too small for subset_min {subset_min}")
    u = torch.randn(3, generator=generator, dtype=mu.dtype, device=mu.device)
    u = u / u.norm()
    order = torch.argsort(mu @ u)
    length = int(torch.randint(subset_min, hi + 1, (1,), generator=generator))
    offset = int(torch.randint(0, m - length + 1, (1,), generator=generator))
    mask = torch.zeros(m, dtype=torch.bool, device=mu.device)
    mask[order[offset:offset + length]] = True
    return mask


# ---------------------------------------------------------------------------
# transform bank


@dataclass
class TransformBank:
    """Fixed pool of (rotation, scale, translation) triples sampled once."""

    rotations: torch.Tensor    # (k, 3, 3)
    scales: torch.Tensor       # (k,)
    translations: torch.Tensor  # (k, 3)

    @classmethod
    def build(cls, size: int, generator: torch.Generator,
              translation: float = 0.3,
              scale_range: tuple = (0.7, 1.3)) -> "TransformBank":
        r = random_rotations(size, generator)
        s = torch.empty(size).uniform_(*scale_range, generator=generator)
        t = torch.empty(size, 3).uniform_(-translation, translation, generator=generator)
        return cls(rotations=r, scales=s, translations=t)

    def __len__(self) -> int:
        return len(self.scales)

    def draw(self, n: int, generator: torch.Generator):
        idx = torch.randint(len(self), (n,), generator=generator)
        return self.rotations[idx], self.scales[idx], self.translations[idx]


def transform_points_batched(x: torch.Tensor, r: torch.Tensor, s: torch.Tensor,
                             t: torch.Tensor) -> torch.Tensor:
    """x (b, n, 3) under per-shape transforms r (b, 3, 3), s (b,), t (b, 3)."""
    return s[:, None, None] * torch.einsum("bij,bnj->bni", r, x) + t[:, None, :]


def transform_gaussians_batched(g: GaussianParams, r: torch.Tensor, s: torch.Tensor,
                                t: torch.Tensor) -> GaussianParams:
    mu = s[:, None, None] * torch.einsum("bij,bmj->bmi", r, g.mu) + t[:, None, :]
    U = g.U @ r.transpose(-1, -2)[:, None]
    lam = g.lam * (s[:, None, None] ** 2)
    return GaussianParams(pi=g.pi, mu=mu, lam=lam, U=U)


# ---------------------------------------------------------------------------
# schedule


def lr_at(cfg: TrainConfig, iteration: int, epoch: int) -> float:
    warm = min(1.0, (iteration + 1) / max(1, cfg.warmup_iters))
    decay = cfg.lr_decay ** (epoch // cfg.lr_decay_every_epochs)
    return cfg.lr * warm * decay


# ---------------------------------------------------------------------------
# trainer


class Trainer:
    def __init__(self, model: PartAwareNet, codes: ShapeCodeTable,
                 dataset: ShardDataset, cfg: TrainConfig):
        if codes.num_shapes != len(dataset):
            raise ValueError("code table size does not match dataset")
        self.model = model
        self.codes = codes
        self.cfg = cfg
        self.dataset = dataset
        self.gen = torch.Generator().manual_seed(cfg.seed)
        self.bank = TransformBank.build(cfg.bank_size, self.gen,
                                        cfg.bank_translation, cfg.bank_scale)
        self.opt = torch.optim.Adam(
            [{"params": list(model.parameters()), "lr_mult": 1.0},
             {"params": list(codes.parameters()), "lr_mult": cfg.codes_lr_mult}],
            lr=cfg.lr, betas=tuple(cfg.betas), eps=cfg.adam_eps)
        self.iteration = 0
        self.history: list[dict] = []
        self._vol, self._surf, self._lab = self._load_tensors(dataset)

    @staticmethod
    def _load_tensors(dataset: ShardDataset):
        vol, surf, lab = [], [], []
        for i in range(len(dataset)):
            b = dataset.load(i)
            vol.append(torch.from_numpy(b.volume_points))
            surf.append(torch.from_numpy(b.surface_points))
            lab.append(torch.from_numpy(b.surface_labels))
        return vol, surf, lab

    def _gather_batch(self, shape_ids: Sequence[int]):
        """Random point subsets for each shape in the batch."""
        cfg = self.cfg
        xv, xs, ys = [], [], []
        for i in shape_ids:
            iv = torch.randint(len(self._vol[i]), (cfg.points_vol,), generator=self.gen)
            isf = torch.randint(len(self._surf[i]), (cfg.points_surf,), generator=self.gen)
            xv.append(self._vol[i][iv])
            xs.append(self._surf[i][isf])
            ys.append(self._lab[i][isf])
        return torch.stack(xv), torch.stack(xs), torch.stack(ys)

    def training_step(self, shape_ids: Sequence[int]) -> dict:
        cfg = self.cfg
        self.model.train()
        x_vol, x_surf, y = self._gather_batch(shape_ids)
        idx = torch.as_tensor(list(shape_ids), dtype=torch.long)
        z = self.codes(idx)
        parts = self.model.decompose(z)

        loss_gmm = gmm_nll(x_vol, parts.gaussians)

        # k transforms per shape, shared by both decoding passes
        k = max(1, cfg.transforms_per_shape)
        rows = len(shape_ids) * k
        r, s, t = self.bank.draw(rows, self.gen)
        if cfg.transform_warmup_iters > 0:
            # pose curriculum: rows flip from identity to bank draws at a rate
            # that reaches the full distribution by transform_warmup_iters
            ramp = min(1.0, (self.iteration + 1) / cfg.transform_warmup_iters)
            keep = torch.rand(rows, generator=self.gen) < ramp
            r = torch.where(keep[:, None, None], r, torch.eye(3).expand_as(r))
            s = torch.where(keep, s, torch.ones_like(s))
            t = torch.where(keep[:, None], t, torch.zeros_like(t))
        rep = (lambda v: v) if k == 1 else \
            (lambda v: v.repeat_interleave(k, dim=0))
        g_t = transform_gaussians_batched(parts.gaussians.map(rep), r, s, t)
        x_t = transform_points_batched(rep(x_surf), r, s, t)
        y_t = rep(y)
        intrinsic = rep(parts.intrinsic)
        g_hat = g_t.stack()

        ctx = self.model.compose(intrinsic, g_hat)
        logits = self.model.occupancy(x_t, ctx)
        loss_occ = occupancy_bce(logits, y_t)

        loss_dis = torch.zeros(())
        if self.model.cfg.variant != "no-dis":
            subset = torch.stack([
                select_disentangle_subset(g_t.mu[b].detach(), self.gen, cfg.subset_min)
                for b in range(rows)])
            assign = cluster_assign(x_t, g_t.detach())
            y_minus = relabel_for_subset(y_t, assign, subset)
            ctx_sub = self.model.compose(intrinsic, g_hat, subset)
            logits_sub = self.model.occupancy(x_t, ctx_sub, subset)
            loss_dis = occupancy_bce(logits_sub, y_minus)

        loss_reg = code_regularizer(z)
        total = loss_gmm + loss_occ + loss_dis + cfg.gamma * loss_reg

        self.opt.zero_grad(set_to_none=True)
        total.backward()
        self.opt.step()
        self.iteration += 1
        return {"total": total.item(), "gmm": loss_gmm.item(), "occ": loss_occ.item(),
                "dis": loss_dis.item(), "reg": loss_reg.item()}

    def train(self, epochs: Optional[int] = None, quiet: bool = False) -> list[dict]:
        cfg = self.cfg
        epochs = cfg.epochs if epochs is None else epochs
        n = len(self.dataset)
        out_dir = Path(cfg.out_dir) if cfg.out_dir else None
        log_f = None
        if out_dir:
            out_dir.mkdir(parents=True, exist_ok=True)
            log_f = open(out_dir / "metrics.jsonl", "a")
        started = time.time()
        try:
            for epoch in range(epochs):
                order = torch.randperm(n, generator=self.gen).tolist()
                for lo in range(0, n, cfg.batch_shapes):
                    ids = order[lo:lo + cfg.batch_shapes]
                    lr = lr_at(cfg, self.iteration, epoch)
                    for group in self.opt.param_groups:
                        group["lr"] = lr * group.get("lr_mult", 1.0)
                    losses = self.training_step(ids)
                    if self.iteration % cfg.log_every == 0 or self.iteration == 1:
                        rec = {"iter": self.iteration, "epoch": epoch, "lr": lr,
                               "elapsed": round(time.time() - started, 2), **losses}
                        self.history.append(rec)
                        if log_f:
                            log_f.write(json.dumps(rec) + "\n")
                            log_f.flush()
                        if not quiet:
                            print("  ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                                            for k, v in rec.items()), flush=True)
                if out_dir and cfg.checkpoint_every_epochs and \
                        (epoch + 1) % cfg.checkpoint_every_epochs == 0:
                    self.save(out_dir / "checkpoint.pt", epoch=epoch)
            if out_dir:
                self.save(out_dir / "checkpoint.pt", epoch=epochs - 1)
        finally:
            if log_f:
                log_f.close()
        return self.history

    def save(self, path: Union[str, Path], **extra) -> None:
        meta = {"train_config": self.cfg.to_dict(),
                "dataset_fingerprint": self.dataset.fingerprint,
                "iteration": self.iteration, **extra}
        save_checkpoint(path, self.model, self.codes, meta)


def train_model(dataset: ShardDataset, model_cfg: ModelConfig, cfg: TrainConfig,
                quiet: bool = False):
    """Fresh model + codes, trained to completion. Deterministic in cfg.seed."""
    torch.manual_seed(cfg.seed)
    model = PartAwareNet(model_cfg)
    codes = ShapeCodeTable(len(dataset), model_cfg.code_dim)
    trainer = Trainer(model, codes, dataset, cfg)
    trainer.train(quiet=quiet)
    return trainer
