"""Per-sample, per-channel style statistics and statistics-level restyling.

A feature map ``f`` of shape ``[N, C, H, W]`` splits into a *style* part (the
spatial mean and deviation of every channel of every sample) and a *semantic*
part (the map standardized by that style). Restyling swaps the style part.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import torch

from .errors import InvalidInputError

EPS_STAT = 1e-5


class StyleStats(NamedTuple):
    mean: torch.Tensor  # [N, C]
    dev: torch.Tensor  # [N, C], >= 0


def _as_feature_map(f) -> torch.Tensor:
    if isinstance(f, np.ndarray):
        f = torch.from_numpy(f)
    if not isinstance(f, torch.Tensor):
        raise InvalidInputError(f"expected an array, got {type(f).__name__}")
    if f.dim() != 4 or f.shape[0] < 1 or f.shape[1] < 1 or f.shape[2] * f.shape[3] < 1:
        raise InvalidInputError(f"feature map must be [N, C, H, W] and non-empty, got {tuple(f.shape)}")
    if not torch.isfinite(f).all():
        raise InvalidInputError("feature map contains non-finite values")
    return f


def compute_style_stats(f, eps: float = EPS_STAT) -> StyleStats:
    """Spatial mean and ``sqrt(population variance + eps)`` of each channel."""
    f = _as_feature_map(f)
    flat = f.flatten(2)
    mean = flat.mean(dim=2)
    var = flat.var(dim=2, unbiased=False)
    return StyleStats(mean, torch.sqrt(var + eps))


def normalize_semantic(f, eps: float = EPS_STAT) -> torch.Tensor:
    """Strip style: ``(f - mean) / dev`` channel-wise."""
    f = _as_feature_map(f)
    mean, dev = compute_style_stats(f, eps)
    return (f - mean[..., None, None]) / dev[..., None, None]


def restyle(content, style: StyleStats, noise_scale: float = 0.0, rng_seed: int = 0, eps: float = EPS_STAT):
    """AdaIN on statistics: give ``content`` the channel statistics in ``style``.

    With ``noise_scale > 0`` both target statistics are perturbed by
    independent ``Normal(0, noise_scale**2)`` draws per (sample, channel); the
    perturbed deviation is clamped at zero.
    """
    content = _as_feature_map(content)
    mean, dev = (torch.as_tensor(s, dtype=content.dtype) for s in style)
    n, c = content.shape[:2]
    if mean.shape != (n, c) or dev.shape != (n, c):
        raise InvalidInputError(
            f"style statistics shaped {tuple(mean.shape)}/{tuple(dev.shape)}, content needs {(n, c)}"
        )
    if noise_scale < 0:
        raise InvalidInputError("noise_scale must be non-negative")
    if noise_scale > 0:
        gen = torch.Generator().manual_seed(int(rng_seed))
        eta_dev = torch.randn((n, c), generator=gen, dtype=torch.float64).to(content.dtype)
        eta_mean = torch.randn((n, c), generator=gen, dtype=torch.float64).to(content.dtype)
        dev = dev + noise_scale * eta_dev
        mean = mean + noise_scale * eta_mean
    dev = dev.clamp(min=0.0)
    return normalize_semantic(content, eps) * dev[..., None, None] + mean[..., None, None]
