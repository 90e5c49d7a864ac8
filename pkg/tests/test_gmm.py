import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from partgen.gmm import (AffineTransform, GaussianParams, GmmError,
                         LAMBDA_FLOOR, RAW_WIDTH, cluster_assign,
                         decode_gaussians, gmm_log_component_densities,
                         gmm_nll, gram_schmidt, random_rotations,
                         rotation_from_quaternion, transform_gaussian)

torch.manual_seed(0)


def random_mixture(gen, b=(), m=5, dtype=torch.float64):
    raw = torch.randn(*b, m, RAW_WIDTH, generator=gen, dtype=dtype)
    return decode_gaussians(raw)


def rotations64(n, gen):
    # float64 from the start: .to(float64) of a float32 rotation keeps its
    # float32-sized orthonormality error
    q = torch.randn(n, 4, generator=gen, dtype=torch.float64)
    return rotation_from_quaternion(q)


def naive_log_densities(points, g):
    """Reference: materialize Sigma, use the standard full-covariance formula."""
    pts = points.numpy()
    pi = g.pi.numpy()
    mu = g.mu.numpy()
    sigma = g.covariance().numpy()
    n, m = pts.shape[0], pi.shape[0]
    out = np.empty((n, m))
    for j in range(m):
        diff = pts - mu[j]
        inv = np.linalg.inv(sigma[j])
        _, logdet = np.linalg.slogdet(sigma[j])
        maha = np.einsum("ni,ij,nj->n", diff, inv, diff)
        out[:, j] = np.log(pi[j]) - 0.5 * (maha + logdet + 3 * np.log(2 * np.pi))
    return out


# ---------------------------------------------------------------------------
# transforms


def test_identity_transform_is_noop():
    t = AffineTransform.identity()
    x = torch.randn(10, 3, dtype=torch.float64)
    torch.testing.assert_close(t.apply_points(x), x)


def test_transform_point_oracle():
    r = rotation_from_quaternion(torch.tensor([1.0, 2.0, -0.5, 0.3], dtype=torch.float64))
    t = AffineTransform(r, torch.tensor(2.0, dtype=torch.float64),
                        torch.tensor([1.0, -1.0, 0.5], dtype=torch.float64))
    x = torch.tensor([[0.3, -0.2, 0.7]], dtype=torch.float64)
    expect = 2.0 * (r @ x[0]) + torch.tensor([1.0, -1.0, 0.5], dtype=torch.float64)
    torch.testing.assert_close(t.apply_points(x)[0], expect)


def test_compose_and_inverse():
    gen = torch.Generator().manual_seed(1)
    rs = rotations64(2, gen)
    a = AffineTransform(rs[0], torch.tensor(1.7, dtype=torch.float64),
                        torch.tensor([0.1, 0.2, -0.3], dtype=torch.float64))
    b = AffineTransform(rs[1], torch.tensor(0.5, dtype=torch.float64),
                        torch.tensor([-1.0, 0.0, 2.0], dtype=torch.float64))
    x = torch.randn(20, 3, dtype=torch.float64)
    torch.testing.assert_close(a.compose(b).apply_points(x),
                               a.apply_points(b.apply_points(x)))
    inv = a.inverse()
    torch.testing.assert_close(inv.apply_points(a.apply_points(x)), x,
                               atol=1e-12, rtol=1e-12)


def test_transform_serialization_round_trip():
    gen = torch.Generator().manual_seed(2)
    t = AffineTransform(random_rotations(1, gen)[0], torch.tensor(1.3),
                        torch.tensor([0.5, 0.0, -0.25]))
    back = AffineTransform.from_dict(t.to_dict())
    torch.testing.assert_close(back.rotation, t.rotation, atol=1e-6, rtol=0)
    assert float(back.scale) == pytest.approx(float(t.scale))


def test_transform_rejects_bad_scale():
    with pytest.raises(ValueError):
        AffineTransform(torch.eye(3), torch.tensor(0.0), torch.zeros(3))


def test_rotations_are_proper():
    gen = torch.Generator().manual_seed(3)
    rs = random_rotations(64, gen)
    eye = torch.eye(3).expand(64, 3, 3)
    torch.testing.assert_close(rs @ rs.transpose(-1, -2), eye, atol=1e-5, rtol=0)
    det = torch.linalg.det(rs)
    torch.testing.assert_close(det, torch.ones(64), atol=1e-5, rtol=0)


def test_random_rotations_cover_the_group():
    # a column's mean should vanish and its second moment should be isotropic
    gen = torch.Generator().manual_seed(4)
    rs = random_rotations(20000, gen)
    v = rs[:, :, 0]
    assert v.mean(dim=0).abs().max() < 0.02
    cov = (v.T @ v) / len(v)
    torch.testing.assert_close(cov, torch.eye(3) / 3, atol=0.02, rtol=0)


# ---------------------------------------------------------------------------
# decode


def test_decode_shapes_and_constraints():
    gen = torch.Generator().manual_seed(5)
    g = random_mixture(gen, b=(2,), m=6)
    assert g.pi.shape == (2, 6)
    torch.testing.assert_close(g.pi.sum(-1), torch.ones(2, dtype=torch.float64))
    assert (g.pi > 0).all()
    assert (g.lam >= LAMBDA_FLOOR).all()
    eye = torch.eye(3, dtype=torch.float64).expand(2, 6, 3, 3)
    torch.testing.assert_close(g.U @ g.U.transpose(-1, -2), eye, atol=1e-12, rtol=0)
    torch.testing.assert_close(torch.linalg.det(g.U),
                               torch.ones(2, 6, dtype=torch.float64),
                               atol=1e-12, rtol=0)


def test_decode_rejects_wrong_width():
    with pytest.raises(GmmError):
        decode_gaussians(torch.zeros(4, RAW_WIDTH + 1))


def test_covariance_eigenstructure():
    gen = torch.Generator().manual_seed(6)
    g = random_mixture(gen, m=4)
    sigma = g.covariance()
    # eigenvalues of Sigma are exactly lam, rows of U are eigenvectors
    for j in range(4):
        for k in range(3):
            u = g.U[j, k]
            torch.testing.assert_close(sigma[j] @ u, g.lam[j, k] * u,
                                       atol=1e-12, rtol=0)


def test_gram_schmidt_preserves_first_direction():
    gen = torch.Generator().manual_seed(7)
    rows = torch.randn(32, 3, 3, generator=gen, dtype=torch.float64)
    u = gram_schmidt(rows)
    first = rows[:, 0] / rows[:, 0].norm(dim=-1, keepdim=True)
    torch.testing.assert_close(u[:, 0], first, atol=1e-12, rtol=0)


def test_gram_schmidt_warns_on_degenerate():
    rows = torch.zeros(1, 3, 3)
    rows[0, 0, 0] = 1.0  # second row zero
    with pytest.warns(UserWarning):
        gram_schmidt(rows)


def test_stack_is_inverse_of_layout():
    gen = torch.Generator().manual_seed(8)
    g = random_mixture(gen, b=(3,), m=4)
    packed = g.stack()
    assert packed.shape == (3, 4, RAW_WIDTH)
    torch.testing.assert_close(packed[..., 1:4], g.mu)
    torch.testing.assert_close(packed[..., 4:7], g.lam)
    torch.testing.assert_close(packed[..., 0], g.pi)
    torch.testing.assert_close(packed[..., 7:].reshape(3, 4, 3, 3), g.U)


# ---------------------------------------------------------------------------
# densities vs naive reference


def test_log_densities_match_naive():
    gen = torch.Generator().manual_seed(9)
    for _ in range(10):
        g = random_mixture(gen, m=5)
        pts = torch.randn(50, 3, generator=gen, dtype=torch.float64)
        ours = gmm_log_component_densities(pts, g).numpy()
        ref = naive_log_densities(pts, g)
        np.testing.assert_allclose(ours, ref, rtol=1e-8, atol=1e-10)


def test_nll_matches_naive():
    gen = torch.Generator().manual_seed(10)
    g = random_mixture(gen, m=6)
    pts = torch.randn(200, 3, generator=gen, dtype=torch.float64)
    ref = naive_log_densities(pts, g)
    expect = -np.mean(np.log(np.exp(ref - ref.max(1, keepdims=True)).sum(1)) + ref.max(1))
    assert float(gmm_nll(pts, g)) == pytest.approx(expect, rel=1e-10)


def test_nll_raises_on_nonfinite():
    gen = torch.Generator().manual_seed(11)
    g = random_mixture(gen, m=3)
    g.mu[0, 0] = float("nan")
    with pytest.raises(GmmError):
        gmm_nll(torch.randn(10, 3, dtype=torch.float64), g)


def test_cluster_assign_matches_naive_and_breaks_ties_low():
    gen = torch.Generator().manual_seed(12)
    g = random_mixture(gen, m=5)
    pts = torch.randn(100, 3, generator=gen, dtype=torch.float64)
    ref = naive_log_densities(pts, g).argmax(axis=1)
    ours = cluster_assign(pts, g).numpy()
    np.testing.assert_array_equal(ours, ref)

    # duplicate a component: the duplicate never wins
    g2 = GaussianParams(
        pi=torch.cat([g.pi[:1], g.pi[:1], g.pi[1:]], 0),
        mu=torch.cat([g.mu[:1], g.mu[:1], g.mu[1:]], 0),
        lam=torch.cat([g.lam[:1], g.lam[:1], g.lam[1:]], 0),
        U=torch.cat([g.U[:1], g.U[:1], g.U[1:]], 0))
    a = cluster_assign(pts, g2).numpy()
    assert not np.any(a == 1)


def test_assign_no_gradient():
    gen = torch.Generator().manual_seed(13)
    raw = torch.randn(4, RAW_WIDTH, generator=gen, requires_grad=True)
    g = decode_gaussians(raw)
    a = cluster_assign(torch.randn(10, 3, generator=gen), g)
    assert a.dtype == torch.int64 and not a.requires_grad


# ---------------------------------------------------------------------------
# transforming mixtures


def test_transform_gaussian_density_identity():
    # densities transform as p'(T x) = p(x) / s^3 for a similarity transform
    gen = torch.Generator().manual_seed(14)
    g = random_mixture(gen, m=4)
    t = AffineTransform(rotations64(1, gen)[0],
                        torch.tensor(1.8, dtype=torch.float64),
                        torch.tensor([0.3, -0.1, 0.2], dtype=torch.float64))
    g2 = transform_gaussian(g, t)
    x = torch.randn(64, 3, generator=gen, dtype=torch.float64)
    lhs = torch.logsumexp(gmm_log_component_densities(t.apply_points(x), g2), -1)
    rhs = torch.logsumexp(gmm_log_component_densities(x, g), -1) - 3 * torch.log(t.scale)
    torch.testing.assert_close(lhs, rhs, atol=1e-10, rtol=1e-10)


def test_transform_gaussian_matches_naive_covariance():
    gen = torch.Generator().manual_seed(15)
    g = random_mixture(gen, m=4)
    t = AffineTransform(rotations64(1, gen)[0],
                        torch.tensor(0.6, dtype=torch.float64),
                        torch.tensor([0.0, 1.0, -0.5], dtype=torch.float64))
    g2 = transform_gaussian(g, t)
    a = (t.scale * t.rotation).numpy()
    for j in range(4):
        expect_mu = a @ g.mu[j].numpy() + t.translation.numpy()
        np.testing.assert_allclose(g2.mu[j].numpy(), expect_mu, rtol=1e-12)
        expect_sigma = a @ g.covariance()[j].numpy() @ a.T
        np.testing.assert_allclose(g2.covariance()[j].numpy(), expect_sigma,
                                   rtol=1e-10, atol=1e-12)
    torch.testing.assert_close(g2.pi, g.pi)


def test_transform_then_inverse_round_trips():
    gen = torch.Generator().manual_seed(16)
    g = random_mixture(gen, m=3)
    t = AffineTransform(rotations64(1, gen)[0],
                        torch.tensor(2.5, dtype=torch.float64),
                        torch.tensor([1.0, 2.0, 3.0], dtype=torch.float64))
    back = transform_gaussian(transform_gaussian(g, t), t.inverse())
    torch.testing.assert_close(back.mu, g.mu, atol=1e-12, rtol=0)
    torch.testing.assert_close(back.lam, g.lam, atol=1e-12, rtol=0)
    torch.testing.assert_close(back.U, g.U, atol=1e-12, rtol=0)


def test_pure_translation_leaves_covariance():
    gen = torch.Generator().manual_seed(17)
    g = random_mixture(gen, m=3)
    t = AffineTransform(torch.eye(3, dtype=torch.float64),
                        torch.tensor(1.0, dtype=torch.float64),
                        torch.tensor([0.4, -0.7, 0.1], dtype=torch.float64))
    g2 = transform_gaussian(g, t)
    torch.testing.assert_close(g2.covariance(), g.covariance())
    torch.testing.assert_close(g2.mu - g.mu,
                               torch.tensor([0.4, -0.7, 0.1], dtype=torch.float64).expand(3, 3))


# ---------------------------------------------------------------------------
# property tests


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_decode_always_valid(seed):
    gen = torch.Generator().manual_seed(seed)
    raw = torch.randn(3, RAW_WIDTH, generator=gen, dtype=torch.float64) * 3
    g = decode_gaussians(raw)
    assert float(g.pi.sum()) == pytest.approx(1.0, abs=1e-9)
    assert (g.lam >= LAMBDA_FLOOR).all()
    eye = torch.eye(3, dtype=torch.float64)
    assert (g.U @ g.U.transpose(-1, -2) - eye).abs().max() < 1e-9


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1),
       scale=st.floats(0.2, 4.0))
def test_composition_associative(seed, scale):
    gen = torch.Generator().manual_seed(seed)
    rs = rotations64(3, gen)
    ts = [AffineTransform(rs[i], torch.tensor(scale, dtype=torch.float64),
                          torch.randn(3, generator=gen, dtype=torch.float64))
          for i in range(3)]
    x = torch.randn(8, 3, generator=gen, dtype=torch.float64)
    left = ts[2].compose(ts[1]).compose(ts[0])
    right = ts[2].compose(ts[1].compose(ts[0]))
    torch.testing.assert_close(left.apply_points(x), right.apply_points(x),
                               atol=1e-9, rtol=1e-9)
