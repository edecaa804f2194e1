"""Trainers: supervised baseline, target-specified and target-free CUTI training.

Every trainer is a pure function of its inputs and ``config.seed``: model
initialization, data order and synthesis noise are all derived from it, so a
rerun on the same device reproduces parameters bit for bit.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Protocol

import numpy as np
import torch

from .backbone import BackboneSpec, ModelState, build_model
from .data import DomainDataset, LabeledBatch, content_hashes
from .errors import InvalidInputError, TrainingDivergedError
from .feature_stats import compute_style_stats, restyle
from .objectives import LossConfig, ablation_loss, cuti_loss, kl_to_label

log = logging.getLogger(__name__)

MODES = ("sl", "target_specified", "target_free")


@dataclass
class OptimizerSpec:
    method: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 0.0

    def build(self, params):
        if self.method == "sgd":
            return torch.optim.SGD(params, lr=self.lr, momentum=self.momentum, weight_decay=self.weight_decay)
        if self.method == "adam":
            return torch.optim.Adam(params, lr=self.lr, weight_decay=self.weight_decay)
        raise InvalidInputError(f"unknown optimizer {self.method!r}")


@dataclass
class SynthConfig:
    noisy_adain_fraction: float = 0.5
    noise_scale: float = 0.4
    style_source: str = "other"
    invert_prob: float = 0.5
    hue_jitter: float = 1.0
    tint_prob: float = 0.5
    contrast_range: tuple = (0.5, 3.0)
    brightness_range: tuple = (-0.3, 0.3)
    blur_prob: float = 0.5
    texture_strength: float = 0.5
    pixel_noise: float = 0.05
    max_shift: int = 2

    def __post_init__(self):
        self.contrast_range = tuple(self.contrast_range)
        self.brightness_range = tuple(self.brightness_range)
        if not 0.0 <= self.noisy_adain_fraction <= 1.0:
            raise InvalidInputError("synth.noisy_adain_fraction must lie in [0, 1]")
        for name in ("invert_prob", "blur_prob", "tint_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidInputError(f"synth.{name} must lie in [0, 1]")
        if self.noise_scale < 0 or self.pixel_noise < 0 or self.texture_strength < 0 or self.max_shift < 0:
            raise InvalidInputError("synth noise, texture and shift settings must be non-negative")
        if self.style_source not in ("other", "self"):
            raise InvalidInputError("synth.style_source must be 'other' or 'self'")


@dataclass
class TrainConfig:
    max_epochs: int = 40
    batch_size: int = 32
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    mode: str = "sl"
    synth: SynthConfig = field(default_factory=SynthConfig)
    warmup_epochs: int = 0
    log_path: str | None = None

    def __post_init__(self):
        if self.max_epochs < 1:
            raise InvalidInputError("train.max_epochs must be at least 1")
        if not 0 <= self.warmup_epochs < self.max_epochs:
            raise InvalidInputError("train.warmup_epochs must lie in [0, max_epochs)")
        if self.batch_size < 1:
            raise InvalidInputError("train.batch_size must be at least 1")
        if self.mode not in MODES:
            raise InvalidInputError(f"train.mode must be one of {MODES}, got {self.mode!r}")


# ------------------------------------------------------------------ synthesis


class Synthesizer(Protocol):
    """Pluggable source of unauthorized-looking images: ``(images, rng) -> images``."""

    def __call__(self, images: np.ndarray, rng: np.random.Generator) -> np.ndarray: ...


def _hue_rotation(angle):
    c, s = np.cos(angle), np.sin(angle)
    k = 1.0 / 3.0
    r = np.sqrt(k)
    return np.array(
        [
            [c + (1 - c) * k, k * (1 - c) - r * s, k * (1 - c) + r * s],
            [k * (1 - c) + r * s, c + k * (1 - c), k * (1 - c) - r * s],
            [k * (1 - c) - r * s, k * (1 - c) + r * s, c + k * (1 - c)],
        ]
    )


class AugmentationSynthesizer:
    """Stacked random photometric and geometric perturbations.

    Per image: optional inversion, contrast stretch about the image mean and a
    brightness shift, an optional colour tint with hue rotation, optional box
    blur, a low-frequency texture, pixel noise and a small translation.
    """

    def __init__(self, config: SynthConfig):
        self.config = config

    def __call__(self, images, rng):
        cfg = self.config
        x = images.astype(np.float64)
        n, c, h, w = x.shape
        invert = rng.random(n) < cfg.invert_prob
        x[invert] = 1.0 - x[invert]
        contrast = rng.uniform(*cfg.contrast_range, (n, 1, 1, 1))
        brightness = rng.uniform(*cfg.brightness_range, (n, 1, 1, 1))
        mean = x.mean(axis=(1, 2, 3), keepdims=True)
        x = (x - mean) * contrast + mean + brightness
        tinted = rng.random(n) < cfg.tint_prob
        if c == 3 and cfg.hue_jitter > 0 and tinted.any():
            k = int(tinted.sum())
            tint = rng.uniform(1.0 - cfg.hue_jitter, 1.0, (k, 3, 1, 1))
            angles = rng.uniform(-np.pi, np.pi, k) * cfg.hue_jitter
            rot = np.stack([_hue_rotation(a) for a in angles])
            x[tinted] = np.einsum("nij,njhw->nihw", rot, x[tinted] * tint)
        blur = rng.random(n) < cfg.blur_prob
        if blur.any():
            padded = np.pad(x[blur], ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
            x[blur] = sum(padded[:, :, i : i + h, j : j + w] for i in range(3) for j in range(3)) / 9.0
        if cfg.texture_strength > 0:
            from .data import _smooth_noise

            texture = _smooth_noise(rng, n, max(h, w))[:, :c, :h, :w]
            x = x + cfg.texture_strength * rng.uniform(0, 1, (n, 1, 1, 1)) * (texture - 0.5)
        if cfg.pixel_noise > 0:
            x = x + rng.normal(0.0, cfg.pixel_noise, x.shape)
        if cfg.max_shift > 0:
            shifts = rng.integers(-cfg.max_shift, cfg.max_shift + 1, (n, 2))
            x = np.stack([np.roll(img, tuple(s), axis=(1, 2)) for img, s in zip(x, shifts)])
        return np.clip(x, 0.0, 1.0).astype(np.float32)


def synthesize_unauthorized(
    source_batch: LabeledBatch,
    synth_config: SynthConfig,
    rng_seed: int,
    synthesizer: Synthesizer | None = None,
) -> LabeledBatch:
    """Style-randomized copies of ``source_batch`` with the content labels kept.

    A ``noisy_adain_fraction`` share of the images is restyled in pixel space
    with the (noised) channel statistics of a donor image; the rest goes
    through ``synthesizer`` (default :class:`AugmentationSynthesizer`).
    Output ``i`` is always derived from input ``i``.
    """
    n = len(source_batch)
    if n == 0:
        raise InvalidInputError("cannot synthesize from an empty batch")
    rng = np.random.default_rng(rng_seed)
    synthesizer = synthesizer or AugmentationSynthesizer(synth_config)
    images = source_batch.images
    out = np.empty_like(images)

    order = rng.permutation(n)
    n_adain = int(np.floor(synth_config.noisy_adain_fraction * n + 0.5))
    adain_idx, other_idx = np.sort(order[:n_adain]), np.sort(order[n_adain:])

    if n_adain:
        if synth_config.style_source == "self" or n == 1:
            donors = adain_idx
        else:
            donors = (adain_idx + rng.integers(1, n, n_adain)) % n
        content = torch.from_numpy(images[adain_idx]).double()
        style = compute_style_stats(torch.from_numpy(images[donors]).double())
        styled = restyle(content, style, synth_config.noise_scale, int(rng.integers(2**31)))
        out[adain_idx] = styled.clamp(0.0, 1.0).numpy().astype(np.float32)
    if len(other_idx):
        out[other_idx] = synthesizer(images[other_idx], rng)
    return LabeledBatch(out, source_batch.labels.copy(), "synthetic", source_batch.num_classes)


# ------------------------------------------------------------------- training


def _train_split(data) -> LabeledBatch:
    if isinstance(data, DomainDataset):
        return data.train
    if isinstance(data, LabeledBatch):
        return data
    raise InvalidInputError(f"expected a DomainDataset or LabeledBatch, got {type(data).__name__}")


def _tensors(batch: LabeledBatch, dtype):
    return torch.from_numpy(batch.images).to(dtype), torch.from_numpy(batch.labels)


def _offdomain_order(rng, n_off, n_needed):
    reps = -(-n_needed // n_off)
    return np.concatenate([rng.permutation(n_off) for _ in range(reps)])[:n_needed]


class _Trainer:
    def __init__(self, state: ModelState, config: TrainConfig, source: LabeledBatch):
        self.state = state
        self.config = config
        self.model = state.model
        self.dtype = next(self.model.parameters()).dtype
        self.optimizer = config.optimizer.build(self.model.parameters())
        self.rng = np.random.default_rng([config.seed, 7])
        self.source = source
        self.xs, self.ys = _tensors(source, self.dtype)
        self.log_file = open(config.log_path, "w") if config.log_path else None

    def close(self):
        if self.log_file:
            self.log_file.close()

    def _step(self, loss, epoch, step):
        if not torch.isfinite(loss):
            raise TrainingDivergedError(f"non-finite loss {loss.item()} at epoch {epoch}, step {step}")
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        self.optimizer.step()

    def _record(self, epoch, phase, loss_sum, steps, s_correct, o_correct, n_seen, started):
        record = {
            "epoch": epoch,
            "phase": phase,
            "loss": loss_sum / max(steps, 1),
            "source_acc": 100.0 * s_correct / max(n_seen, 1),
            "offdomain_acc": (100.0 * o_correct / max(n_seen, 1)) if o_correct is not None else None,
            "wall_time_s": time.perf_counter() - started,
        }
        self.state.history.append(record)
        self.state.epoch = epoch + 1
        log.info("epoch %d [%s] loss %.4f source %.1f%% offdomain %s", epoch, phase, record["loss"],
                 record["source_acc"], record["offdomain_acc"])
        if self.log_file:
            self.log_file.write(json.dumps(record) + "\n")
            self.log_file.flush()

    def run(self, offdomain_for_epoch: Callable[[int], LabeledBatch] | None):
        cfg = self.config
        bs = cfg.batch_size
        n = len(self.source)
        eps = cfg.loss.epsilon_y
        for epoch in range(cfg.max_epochs):
            started = time.perf_counter()
            self.model.train()
            order = self.rng.permutation(n)
            if offdomain_for_epoch is None or epoch < cfg.warmup_epochs:
                phase, xo, yo, o_order = "sl", None, None, None
            else:
                off = offdomain_for_epoch(epoch - cfg.warmup_epochs)
                xo, yo = _tensors(off, self.dtype)
                o_order = _offdomain_order(self.rng, len(off), n)
                if cfg.loss.variant == "alternating":
                    phase = cfg.loss.phase(epoch - cfg.warmup_epochs)
                else:
                    phase = cfg.loss.variant
            loss_sum, steps, s_correct, o_correct, seen = 0.0, 0, 0, 0, 0
            for step, start in enumerate(range(0, n, bs)):
                idx = order[start : start + bs]
                xs, ys = self.xs[idx], self.ys[idx]
                if phase == "sl":
                    ls = self.model.logits(xs)
                    loss = kl_to_label(torch.softmax(ls, 1), ys, eps)
                    lo = None
                else:
                    oidx = o_order[start : start + bs]
                    xo_b, yo_b = xo[oidx], yo[oidx]
                    loss, ls, lo = self._offdomain_loss(phase, xs, ys, xo_b, yo_b)
                    o_correct += int((lo.argmax(1) == yo_b).sum())
                self._step(loss, epoch, step)
                loss_sum += float(loss.detach())
                steps += 1
                s_correct += int((ls.argmax(1) == ys).sum())
                seen += len(idx)
            self._record(epoch, "warmup" if phase == "sl" and offdomain_for_epoch else phase,
                         loss_sum, steps, s_correct, None if phase == "sl" else o_correct, seen, started)
        self.model.eval()
        return self.state

    def _offdomain_loss(self, phase, xs, ys, xo, yo):
        cfg = self.config.loss
        model = self.model
        if phase == "cuti" or phase == "L2":
            ls, li = model.paired_logits(xs, xo)
            return cuti_loss(torch.softmax(ls, 1), ys, torch.softmax(li, 1), yo, cfg), ls, li
        if phase == "target" or phase == "L1":
            ls, lt = model.logits(xs), model.logits(xo)
            return cuti_loss(torch.softmax(ls, 1), ys, torch.softmax(lt, 1), yo, cfg), ls, lt
        if phase == "L3":
            ls, li = model.paired_logits(xs, xo)
            lt = model.logits(xo)
            ps, pi, pt = (torch.softmax(v, 1) for v in (ls, li, lt))
            return ablation_loss(ps, ys, pi, yo, pt, yo, "L3", cfg), ls, lt
        raise InvalidInputError(f"unknown phase {phase!r}")


def _init_state(backbone_spec: BackboneSpec, config: TrainConfig, with_generators: bool, dtype):
    state = build_model(backbone_spec, config.seed, with_generators=with_generators, dtype=dtype)
    state.meta["mode"] = config.mode
    return state


def _check_shapes(spec: BackboneSpec, *batches):
    for b in batches:
        if b.image_shape != spec.input_shape:
            raise InvalidInputError(f"data shaped {b.image_shape} does not match backbone input {spec.input_shape}")


def train_sl(data_source, backbone_spec: BackboneSpec, config: TrainConfig, dtype=torch.float32) -> ModelState:
    """Plain supervised training on the source split (no generators)."""
    source = _train_split(data_source)
    _check_shapes(backbone_spec, source)
    state = _init_state(backbone_spec, config, False, dtype)
    trainer = _Trainer(state, config, source)
    try:
        return trainer.run(None)
    finally:
        trainer.close()


def baseline_config(config: TrainConfig) -> TrainConfig:
    """``config`` for the supervised control: mode ``sl`` and its own log file."""
    log_path = str(Path(config.log_path).with_suffix(".sl.jsonl")) if config.log_path else None
    return replace(config, mode="sl", log_path=log_path, warmup_epochs=0)


def _warn_single_epoch(config):
    if config.max_epochs - config.warmup_epochs < 2 and config.loss.variant == "alternating":
        log.warning("only the %s phase will run", config.loss.phase(0))


def train_target_specified(
    data_source, data_target, backbone_spec: BackboneSpec, config: TrainConfig, dtype=torch.float32
) -> ModelState:
    """Alternating CUTI training with a known unauthorized domain.

    The CUTI domain starts as the labeled target training set and is
    restyled online by the generators, so even epochs (cuti phase) pair
    source batches with generator-fused target batches and odd epochs
    (target phase) pair them with raw target batches through the plain path.
    """
    source = _train_split(data_source)
    target = _train_split(data_target)
    _check_shapes(backbone_spec, source, target)
    _warn_single_epoch(config)
    state = _init_state(backbone_spec, config, True, dtype)
    overlap = len(set(content_hashes(source)) & set(content_hashes(target))) / len(target)
    state.meta["source_target_overlap"] = overlap
    if overlap > 0:
        log.warning("%.1f%% of target samples also occur in the source set", 100 * overlap)
    trainer = _Trainer(state, config, source)
    cuti_pool = target.with_tag("cuti")
    try:
        return trainer.run(lambda epoch: cuti_pool)
    finally:
        trainer.close()


def train_target_free(
    data_source,
    backbone_spec: BackboneSpec,
    config: TrainConfig,
    synthesizer: Synthesizer | None = None,
    dtype=torch.float32,
    unauthorized: Callable[[int], LabeledBatch] | None = None,
) -> ModelState:
    """CUTI training where freshly synthesized samples stand in for the target.

    ``unauthorized`` overrides the per-epoch pool builder; by default each
    epoch synthesizes a new pool from the whole source split.
    """
    source = _train_split(data_source)
    _check_shapes(backbone_spec, source)
    _warn_single_epoch(config)
    state = _init_state(backbone_spec, config, True, dtype)
    if unauthorized is None:
        def unauthorized(epoch):
            return synthesize_unauthorized(source, config.synth, config.seed * 100_003 + epoch, synthesizer)

    trainer = _Trainer(state, config, source)
    try:
        return trainer.run(unauthorized)
    finally:
        trainer.close()
