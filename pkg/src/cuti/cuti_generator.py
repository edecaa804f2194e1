"""CUTI-domain generator: fuse source style statistics into another stream.

At one insertion point the generator takes the source feature ``f_s`` and the
CUTI-stream feature ``f_i``, extracts the channel statistics of ``f_s``, passes
each statistics vector through its own learned 1x1 convolution (a C x C
channel-mixing matrix plus bias), then scales ``f_i`` by the transformed
deviation and shifts it by the transformed mean.
"""

from __future__ import annotations

import torch
from torch import nn

from .errors import InvalidInputError
from .feature_stats import compute_style_stats


class CutiGenerator(nn.Module):
    """Learnable parameters of one generator (``CutiGeneratorParams``)."""

    def __init__(self, channels: int):
        super().__init__()
        if channels < 1:
            raise InvalidInputError("channels must be at least 1")
        self.channels = channels
        self.w_sigma = nn.Parameter(torch.eye(channels))
        self.b_sigma = nn.Parameter(torch.zeros(channels))
        self.w_mu = nn.Parameter(torch.zeros(channels, channels))
        self.b_mu = nn.Parameter(torch.zeros(channels))

    def forward(self, f_i, f_s):
        return cuti_fuse(f_i, f_s, self)

    def extra_repr(self):
        return f"channels={self.channels}"


def cuti_fuse(f_i: torch.Tensor, f_s: torch.Tensor, params: CutiGenerator) -> torch.Tensor:
    """``f_i * (W_sigma @ sigma_s + b_sigma) + (W_mu @ mu_s + b_mu)``, per sample."""
    if f_i.dim() != 4 or f_i.shape != f_s.shape:
        raise InvalidInputError(f"paired features must share one [N, C, H, W] shape: {tuple(f_i.shape)} vs {tuple(f_s.shape)}")
    if f_i.shape[1] != params.w_sigma.shape[0]:
        raise InvalidInputError(f"generator has {params.w_sigma.shape[0]} channels, features have {f_i.shape[1]}")
    mu, sigma = compute_style_stats(f_s)
    scale = sigma @ params.w_sigma.T + params.b_sigma
    shift = mu @ params.w_mu.T + params.b_mu
    return f_i * scale[..., None, None] + shift[..., None, None]


def init_generator(channels: int, rng_seed: int = 0, perturbation: float = 0.01) -> CutiGenerator:
    """Near-identity generator: ``w_sigma = I + noise``, ``w_mu = noise``, zero biases."""
    gen = CutiGenerator(channels)
    rng = torch.Generator().manual_seed(int(rng_seed))
    with torch.no_grad():
        if perturbation > 0:
            gen.w_sigma.add_(perturbation * torch.randn((channels, channels), generator=rng))
            gen.w_mu.copy_(perturbation * torch.randn((channels, channels), generator=rng))
    return gen
