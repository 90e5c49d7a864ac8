"""Gaussian mixture parameterization, densities, and affine transforms.

Conventions used everywhere downstream:
  * A mixture with m components is held as pi (..., m), mu (..., m, 3),
    eigenvalues lam (..., m, 3) and row-orthonormal frames U (..., m, 3, 3).
    Rows of U are the principal axes, so Sigma = U^T diag(lam) U.
  * The packed raw layout per component is 16 wide:
    [pi_raw | mu(3) | lam_raw(3) | U_raw(9 row-major)].
  * Affine transforms are rotation R, uniform scale s > 0, translation t,
    acting as x -> s R x + t.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

RAW_WIDTH = 16
LAMBDA_FLOOR = 1e-4
_LOG_2PI = 1.8378770664093453


class GmmError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# affine transforms


@dataclass
class AffineTransform:
    """x -> s * R @ x + t with R a rotation and s a positive uniform scale."""

    rotation: torch.Tensor     # (3, 3)
    scale: torch.Tensor        # scalar
    translation: torch.Tensor  # (3,)

    def __post_init__(self):
        self.rotation = torch.as_tensor(self.rotation)
        if not self.rotation.dtype.is_floating_point:
            self.rotation = self.rotation.to(torch.get_default_dtype())
        self.scale = torch.as_tensor(self.scale, dtype=self.rotation.dtype).reshape(())
        self.translation = torch.as_tensor(self.translation, dtype=self.rotation.dtype).reshape(3)
        if not torch.isfinite(self.rotation).all() or self.scale <= 0:
            raise ValueError("transform must have finite rotation and positive scale")

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(torch.eye(3), torch.tensor(1.0), torch.zeros(3))

    def apply_points(self, x: torch.Tensor) -> torch.Tensor:
        r = self.rotation.to(x.dtype)
        return self.scale.to(x.dtype) * (x @ r.T) + self.translation.to(x.dtype)

    def compose(self, first: "AffineTransform") -> "AffineTransform":
        """Returns T with T(x) = self(first(x))."""
        return AffineTransform(
            rotation=self.rotation @ first.rotation,
            scale=self.scale * first.scale,
            translation=self.scale * (self.rotation @ first.translation) + self.translation,
        )

    def inverse(self) -> "AffineTransform":
        rt = self.rotation.T
        return AffineTransform(rt, 1.0 / self.scale, -(rt @ self.translation) / self.scale)

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "scale": float(self.scale),
                "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "AffineTransform":
        return cls(torch.tensor(d["rotation"]), torch.tensor(float(d["scale"])),
                   torch.tensor(d["translation"]))


def rotation_from_quaternion(q: torch.Tensor) -> torch.Tensor:
    """Unit-normalizes q = (w, x, y, z) and returns the (... , 3, 3) rotation."""
    q = q / q.norm(dim=-1, keepdim=True)
    w, x, y, z = q.unbind(-1)
    row0 = torch.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1)
    row1 = torch.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1)
    row2 = torch.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1)
    return torch.stack([row0, row1, row2], dim=-2)


def random_rotations(n: int, generator: torch.Generator) -> torch.Tensor:
    """Uniform rotations via normalized Gaussian quaternions."""
    q = torch.randn(n, 4, generator=generator, dtype=torch.get_default_dtype())
    return rotation_from_quaternion(q)


# ---------------------------------------------------------------------------
# mixture container


@dataclass
class GaussianParams:
    """Decoded mixture. Leading dims are free (batch, ...)."""

    pi: torch.Tensor    # (..., m)
    mu: torch.Tensor    # (..., m, 3)
    lam: torch.Tensor   # (..., m, 3)
    U: torch.Tensor     # (..., m, 3, 3), rows orthonormal

    @property
    def num_components(self) -> int:
        return self.pi.shape[-1]

    def covariance(self) -> torch.Tensor:
        """Sigma = U^T diag(lam) U, shape (..., m, 3, 3)."""
        return self.U.transpose(-1, -2) @ (self.lam.unsqueeze(-1) * self.U)

    def stack(self) -> torch.Tensor:
        """Pack decoded values back into the raw 16-wide layout (pi stays a
        probability here, not a logit; consumers treat the slot opaquely)."""
        flat_u = self.U.reshape(*self.U.shape[:-2], 9)
        return torch.cat([self.pi.unsqueeze(-1), self.mu, self.lam, flat_u], dim=-1)

    def detach(self) -> "GaussianParams":
        return GaussianParams(self.pi.detach(), self.mu.detach(),
                              self.lam.detach(), self.U.detach())

    def select(self, idx) -> "GaussianParams":
        """Index components along the m axis (no renormalization of pi)."""
        return GaussianParams(self.pi[..., idx], self.mu[..., idx, :],
                              self.lam[..., idx, :], self.U[..., idx, :, :])

    def map(self, fn) -> "GaussianParams":
        return GaussianParams(fn(self.pi), fn(self.mu), fn(self.lam), fn(self.U))


def gram_schmidt(rows: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    """Orthonormalize the rows of (..., 3, 3) matrices.

    Rows 1 and 2 are orthonormalized classically, row 3 is their cross
    product, so the result is always a proper rotation. Near-zero rows are
    handled by norm clamping (a warning is emitted since the output is then
    only approximately orthonormal).
    """
    v1, v2 = rows[..., 0, :], rows[..., 1, :]
    n1 = v1.norm(dim=-1, keepdim=True)
    u1 = v1 / n1.clamp_min(eps)
    r2 = v2 - (u1 * v2).sum(-1, keepdim=True) * u1
    n2 = r2.norm(dim=-1, keepdim=True)
    u2 = r2 / n2.clamp_min(eps)
    if bool((n1 < eps).any()) or bool((n2 < eps).any()):
        warnings.warn("gram_schmidt: near-degenerate rows, clamped norms")
    u3 = torch.cross(u1, u2, dim=-1)
    return torch.stack([u1, u2, u3], dim=-2)


def decode_gaussians(raw: torch.Tensor) -> GaussianParams:
    """Map raw (..., m, 16) network output to a valid mixture.

    Softmax over components for pi, softplus with a floor for eigenvalues,
    Gram-Schmidt for the frames. Fully differentiable.
    """
    if raw.shape[-1] != RAW_WIDTH:
        raise GmmError(f"raw gaussians must have width {RAW_WIDTH}, got {raw.shape[-1]}")
    pi = torch.softmax(raw[..., 0], dim=-1)
    mu = raw[..., 1:4]
    lam = F.softplus(raw[..., 4:7]) + LAMBDA_FLOOR
    U = gram_schmidt(raw[..., 7:16].reshape(*raw.shape[:-1], 3, 3))
    return GaussianParams(pi=pi, mu=mu, lam=lam, U=U)


# ---------------------------------------------------------------------------
# densities


def gmm_log_component_densities(points: torch.Tensor, g: GaussianParams) -> torch.Tensor:
    """log(pi_j) + log N(x | mu_j, Sigma_j) for every point/component pair.

    points (..., n, 3) against g with matching leading dims -> (..., n, m).
    Works in the eigenbasis, so Sigma is never materialized:
    (x-mu)^T Sigma^-1 (x-mu) = sum_k (u_k . (x-mu))^2 / lam_k.
    """
    diff = points.unsqueeze(-2) - g.mu.unsqueeze(-3)              # (..., n, m, 3)
    coords = torch.einsum("...mij,...nmj->...nmi", g.U, diff)     # (..., n, m, 3)
    maha = (coords ** 2 / g.lam.unsqueeze(-3)).sum(-1)            # (..., n, m)
    logdet = torch.log(g.lam).sum(-1)                             # (..., m)
    log_norm = -0.5 * (maha + logdet.unsqueeze(-2) + 3.0 * _LOG_2PI)
    return torch.log(g.pi).unsqueeze(-2) + log_norm


def gmm_nll(points: torch.Tensor, g: GaussianParams) -> torch.Tensor:
    """Mean negative log-likelihood of points under the mixture (scalar)."""
    logs = gmm_log_component_densities(points, g)
    if not torch.isfinite(logs).all():
        bad = (~torch.isfinite(logs)).reshape(-1, logs.shape[-1]).any(dim=0)
        idx = torch.nonzero(bad).flatten().tolist()
        raise GmmError(f"non-finite mixture density from component(s) {idx}")
    return -torch.logsumexp(logs, dim=-1).mean()


def cluster_assign(points: torch.Tensor, g: GaussianParams) -> torch.Tensor:
    """Hard assignment of each point to its max-responsibility component.

    Ties resolve to the lowest index. Label op: gradients are not tracked.
    """
    with torch.no_grad():
        logs = gmm_log_component_densities(points, g)
    return torch.from_numpy(np.argmax(logs.cpu().numpy(), axis=-1)).to(points.device)


def transform_gaussian(g: GaussianParams, t: AffineTransform) -> GaussianParams:
    """Push the mixture through x -> s R x + t.

    mu' = s R mu + t;  frames rotate as U' = U R^T (rows stay the principal
    axes of Sigma' = (sR) Sigma (sR)^T);  eigenvalues pick up s^2;  weights
    are unchanged. Differentiable in g.
    """
    r = t.rotation.to(g.mu.dtype)
    mu = t.scale * torch.einsum("ij,...mj->...mi", r, g.mu) + t.translation.to(g.mu.dtype)
    U = g.U @ r.T
    lam = g.lam * (t.scale ** 2)
    return GaussianParams(pi=g.pi, mu=mu, lam=lam, U=U)
