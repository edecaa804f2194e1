import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cuti.errors import InvalidInputError
from cuti.feature_stats import EPS_STAT, compute_style_stats, normalize_semantic, restyle


def test_constant_map_has_eps_deviation():
    f = torch.full((2, 3, 4, 4), 3.0, dtype=torch.float64)
    mean, dev = compute_style_stats(f)
    assert torch.allclose(mean, torch.full((2, 3), 3.0, dtype=torch.float64))
    assert torch.allclose(dev, torch.full((2, 3), math.sqrt(EPS_STAT), dtype=torch.float64))


def test_symmetric_channel():
    f = torch.tensor([[[[-1.0, 1.0], [1.0, -1.0]]]], dtype=torch.float64)
    mean, dev = compute_style_stats(f)
    assert mean.item() == 0.0
    assert dev.item() == pytest.approx(math.sqrt(1 + EPS_STAT), abs=1e-12)


def test_four_values_against_arithmetic():
    values = [1.0, 2.0, 3.0, 4.0]
    f = torch.tensor(values, dtype=torch.float64).reshape(1, 1, 2, 2)
    mu = sum(values) / 4
    var = sum((v - mu) ** 2 for v in values) / 4
    mean, dev = compute_style_stats(f)
    assert mean.item() == pytest.approx(2.5)
    assert dev.item() == pytest.approx(math.sqrt(var + EPS_STAT), abs=1e-12)
    z = normalize_semantic(f).flatten().tolist()
    assert z == pytest.approx([(v - mu) / math.sqrt(var + EPS_STAT) for v in values], abs=1e-12)


def test_numpy_input_is_accepted():
    f = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
    assert compute_style_stats(f).mean.item() == pytest.approx(7.5)


def test_constant_channel_normalizes_to_zero():
    f = torch.full((1, 2, 3, 3), -7.0, dtype=torch.float64)
    assert torch.count_nonzero(normalize_semantic(f)) == 0


def test_standardized_input_is_nearly_unchanged():
    g = torch.Generator().manual_seed(0)
    f = torch.randn(3, 4, 8, 8, generator=g, dtype=torch.float64)
    f = (f - f.mean((2, 3), keepdim=True)) / f.std((2, 3), unbiased=False, keepdim=True)
    scale = 1 / math.sqrt(1 + EPS_STAT)
    assert torch.allclose(normalize_semantic(f), f * scale, atol=1e-12)


@pytest.mark.parametrize("shape", [(3, 4, 4), (0, 2, 2, 2), (1, 1, 0, 3)])
def test_bad_shapes_rejected(shape):
    with pytest.raises(InvalidInputError):
        compute_style_stats(torch.zeros(shape))


def test_non_finite_rejected():
    f = torch.zeros(1, 1, 2, 2)
    f[0, 0, 0, 0] = float("nan")
    with pytest.raises(InvalidInputError):
        normalize_semantic(f)


maps = arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 4), st.integers(2, 6), st.integers(2, 6)),
              elements=st.floats(-50, 50, allow_nan=False, width=64))


@settings(max_examples=60, deadline=None)
@given(maps)
def test_normalized_channels_are_standard(f):
    f = torch.from_numpy(f)
    assume_spread = f.flatten(2).var(2, unbiased=False) > 1e-2
    z = normalize_semantic(f).flatten(2)
    assert (z.mean(2).abs() <= 1e-6).all()
    dev = z.std(2, unbiased=False)
    assert ((dev - 1).abs()[assume_spread] <= 1e-3).all()


def test_restyle_with_own_style_is_identity():
    g = torch.Generator().manual_seed(1)
    f = torch.randn(2, 3, 5, 5, generator=g, dtype=torch.float64) * 4 + 2
    assert torch.allclose(restyle(f, compute_style_stats(f)), f, atol=1e-10)


def test_restyle_to_unit_style_is_normalization():
    g = torch.Generator().manual_seed(2)
    f = torch.randn(2, 3, 5, 5, generator=g, dtype=torch.float64)
    unit = (torch.zeros(2, 3, dtype=torch.float64), torch.ones(2, 3, dtype=torch.float64))
    assert torch.allclose(restyle(f, unit), normalize_semantic(f), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_restyle_matches_target_stats(seed):
    g = torch.Generator().manual_seed(seed)
    content = torch.randn(2, 3, 6, 6, generator=g, dtype=torch.float64) * 3
    mean = torch.randn(2, 3, generator=g, dtype=torch.float64) * 5
    dev = torch.rand(2, 3, generator=g, dtype=torch.float64) * 4 + 0.5
    out = compute_style_stats(restyle(content, (mean, dev)), eps=0.0)
    assert torch.allclose(out.mean, mean, atol=1e-5)
    assert torch.allclose(out.dev, dev, atol=1e-5)


def test_noisy_restyle_is_seeded_and_clamps_deviation():
    g = torch.Generator().manual_seed(3)
    content = torch.randn(4, 2, 5, 5, generator=g, dtype=torch.float64)
    style = (torch.zeros(4, 2, dtype=torch.float64), torch.full((4, 2), 0.01, dtype=torch.float64))
    a = restyle(content, style, noise_scale=2.0, rng_seed=9)
    b = restyle(content, style, noise_scale=2.0, rng_seed=9)
    c = restyle(content, style, noise_scale=2.0, rng_seed=10)
    assert torch.equal(a, b) and not torch.equal(a, c)
    # with a large noise some deviations go negative and must be clamped to a flat channel
    flat = compute_style_stats(a, eps=0.0).dev < 1e-12
    assert flat.any()


def test_restyle_shape_mismatch():
    with pytest.raises(InvalidInputError):
        restyle(torch.zeros(2, 3, 4, 4), (torch.zeros(2, 2), torch.ones(2, 2)))
