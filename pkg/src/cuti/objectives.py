"""Non-transferability objectives built on a label-smoothed KL primitive."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import InvalidInputError

VARIANTS = ("alternating", "L1", "L2", "L3")
PROB_FLOOR = 1e-12


@dataclass
class LossConfig:
    variant: str = "alternating"
    epsilon_y: float = 0.05
    clamp: float = 3.0
    phase_offset: int = 0
    clamp_mode: str = "batch"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidInputError(f"loss.variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 0.0 < self.epsilon_y < 0.5:
            raise InvalidInputError("loss.epsilon_y must lie in (0, 0.5)")
        if not 0.0 < self.clamp < float("inf"):
            raise InvalidInputError("loss.clamp must be positive and finite")
        if self.clamp_mode not in ("batch", "sample"):
            raise InvalidInputError("loss.clamp_mode must be 'batch' or 'sample'")
        if self.phase_offset not in (0, 1):
            raise InvalidInputError("loss.phase_offset must be 0 or 1")

    def phase(self, epoch: int) -> str:
        """``cuti`` on even epochs (0-based), ``target`` on odd; offset flips it."""
        return "cuti" if (epoch + self.phase_offset) % 2 == 0 else "target"


def smoothed_labels(y: torch.Tensor, num_classes: int, epsilon_y: float, dtype=torch.float64):
    q = torch.full((len(y), num_classes), epsilon_y / (num_classes - 1), dtype=dtype, device=y.device)
    q.scatter_(1, y.long()[:, None], 1.0 - epsilon_y)
    return q


def kl_per_sample(p: torch.Tensor, y: torch.Tensor, epsilon_y: float = 0.05, floor: float | None = PROB_FLOOR):
    """``KL(q_y || p)`` for every row, shape ``[N]``."""
    if p.dim() != 2:
        raise InvalidInputError(f"probabilities must be [N, K], got {tuple(p.shape)}")
    y = torch.as_tensor(y)
    n, k = p.shape
    if y.shape != (n,):
        raise InvalidInputError(f"{n} predictions but labels shaped {tuple(y.shape)}")
    if n and (y.min() < 0 or y.max() >= k):
        raise InvalidInputError(f"labels must lie in [0, {k})")
    q = smoothed_labels(y, k, epsilon_y, p.dtype)
    logp = torch.log(p.clamp(min=floor) if floor is not None else p)
    return (torch.xlogy(q, q) - q * logp).sum(dim=1)


def kl_to_label(p: torch.Tensor, y: torch.Tensor, epsilon_y: float = 0.05, floor: float | None = PROB_FLOOR):
    """Batch mean of ``KL(q_y || p)`` with ``q_y`` the smoothed one-hot label.

    Equals smoothed cross-entropy minus the entropy of ``q_y``. Probabilities
    below ``floor`` are raised to it before the log; ``floor=None`` disables
    that.
    """
    return kl_per_sample(p, y, epsilon_y, floor).mean()


def _clamped(p, y, config):
    if config.clamp_mode == "sample":
        return torch.clamp(kl_per_sample(p, y, config.epsilon_y), max=config.clamp).mean()
    return torch.clamp(kl_to_label(p, y, config.epsilon_y), max=config.clamp)


def cuti_loss(p_s, y_s, p_x, y_x, config: LossConfig):
    """Source fit minus the clamped divergence on the off-domain pair."""
    return kl_to_label(p_s, y_s, config.epsilon_y) - _clamped(p_x, y_x, config)


def ablation_loss(p_s, y_s, p_i, y_i, p_t, y_t, variant: str, config: LossConfig):
    """``L1`` uses the target pair, ``L2`` the CUTI pair, ``L3`` both."""
    source = kl_to_label(p_s, y_s, config.epsilon_y)
    if variant == "L1":
        return source - _clamped(p_t, y_t, config)
    if variant == "L2":
        return source - _clamped(p_i, y_i, config)
    if variant == "L3":
        return source - _clamped(p_t, y_t, config) - _clamped(p_i, y_i, config)
    raise InvalidInputError(f"unknown ablation variant {variant!r}")
