import pytest
import torch

from cuti.cuti_generator import CutiGenerator, cuti_fuse, init_generator
from cuti.errors import InvalidInputError
from cuti.feature_stats import compute_style_stats


def _gen(c, w_sigma=None, w_mu=None):
    g = CutiGenerator(c).double()
    with torch.no_grad():
        if w_sigma is not None:
            g.w_sigma.copy_(torch.as_tensor(w_sigma, dtype=torch.float64))
        if w_mu is not None:
            g.w_mu.copy_(torch.as_tensor(w_mu, dtype=torch.float64))
    return g


def _standardized(n, c, seed):
    f = torch.randn(n, c, 6, 6, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)
    f = (f - f.mean((2, 3), keepdim=True)) / f.std((2, 3), unbiased=False, keepdim=True)
    return f


def test_identity_fusion_with_standard_source():
    f_s = _standardized(2, 3, 0)
    f_i = torch.randn(2, 3, 6, 6, dtype=torch.float64)
    out = cuti_fuse(f_i, f_s, _gen(3, torch.eye(3), torch.eye(3)))
    assert torch.allclose(out, f_i, atol=1e-5)


def test_identity_weights_give_affine_restyle():
    f_s = torch.randn(2, 3, 6, 6, dtype=torch.float64) * 2 + 1
    f_i = torch.randn(2, 3, 6, 6, dtype=torch.float64)
    mu, sigma = compute_style_stats(f_s)
    out = cuti_fuse(f_i, f_s, _gen(3, torch.eye(3), torch.eye(3)))
    assert torch.allclose(out, f_i * sigma[..., None, None] + mu[..., None, None], atol=1e-12)


def test_swapped_scale_matrix():
    # channel 0 has deviation 2, channel 1 deviation 3 (values +-d around zero)
    f_s = torch.tensor([[[[2.0, -2.0], [-2.0, 2.0]], [[3.0, -3.0], [-3.0, 3.0]]]], dtype=torch.float64)
    f_i = torch.ones(1, 2, 2, 2, dtype=torch.float64)
    out = cuti_fuse(f_i, f_s, _gen(2, [[0.0, 1.0], [1.0, 0.0]], torch.zeros(2, 2)))
    expected = [(3**2 + 1e-5) ** 0.5, (2**2 + 1e-5) ** 0.5]
    assert out[0, :, 0, 0].tolist() == pytest.approx(expected, abs=1e-12)


def test_init_without_perturbation():
    g = init_generator(1, perturbation=0.0)
    assert g.w_sigma.tolist() == [[1.0]] and g.w_mu.tolist() == [[0.0]]
    assert g.b_sigma.tolist() == [0.0] and g.b_mu.tolist() == [0.0]


def test_init_is_seeded():
    a, b, c = init_generator(5, 7), init_generator(5, 7), init_generator(5, 8)
    for name in ("w_sigma", "w_mu"):
        assert torch.equal(getattr(a, name), getattr(b, name))
        assert not torch.equal(getattr(a, name), getattr(c, name))


def test_near_identity_fusion_is_close_to_affine_restyle():
    g = init_generator(8, rng_seed=3).double()
    f_s = torch.randn(4, 8, 5, 5, dtype=torch.float64) * 3 + 2
    f_i = torch.randn(4, 8, 5, 5, dtype=torch.float64)
    mu, sigma = compute_style_stats(f_s)
    pure = f_i * sigma[..., None, None]
    out = cuti_fuse(f_i, f_s, g)
    stats_norm = torch.cat([mu, sigma], 1).norm(dim=1).max()
    # deviation is bounded by the perturbation size times the statistics norm
    bound = 0.05 * stats_norm * (1 + f_i.abs().max())
    assert (out - pure).abs().max() <= bound


def test_shape_checks():
    g = CutiGenerator(3)
    with pytest.raises(InvalidInputError):
        cuti_fuse(torch.zeros(2, 3, 4, 4), torch.zeros(2, 3, 4, 5), g)
    with pytest.raises(InvalidInputError):
        cuti_fuse(torch.zeros(2, 4, 4, 4), torch.zeros(2, 4, 4, 4), g)
    with pytest.raises(InvalidInputError):
        CutiGenerator(0)
