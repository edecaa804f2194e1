"""Ownership verification, applicability authorization and removal attacks."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from .backbone import BackboneSpec, ModelState
from .data import DomainDataset, LabeledBatch
from .errors import InvalidInputError
from .evaluation import ATTACK_KINDS, EvalReport, accuracy
from .objectives import kl_to_label
from .training import (
    OptimizerSpec,
    baseline_config,
    TrainConfig,
    synthesize_unauthorized,
    train_sl,
    train_target_free,
    train_target_specified,
)

log = logging.getLogger(__name__)

CORNERS = ("top_left", "top_right", "bottom_left", "bottom_right")


@dataclass
class PatchSpec:
    """Square watermark stamped over the image at a corner anchor."""

    size: int = 8
    corner: str = "bottom_right"
    offset: tuple = (0, 0)
    fill: str = "solid"
    value: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.offset = tuple(int(v) for v in self.offset)
        if self.size < 0:
            raise InvalidInputError("patch size must be non-negative")
        if self.corner not in CORNERS:
            raise InvalidInputError(f"patch corner must be one of {CORNERS}")
        if self.fill not in ("solid", "texture"):
            raise InvalidInputError("patch fill must be 'solid' or 'texture'")
        if not 0.0 <= self.value <= 1.0:
            raise InvalidInputError("patch value must lie in [0, 1]")

    def region(self, height, width):
        dy, dx = self.offset
        top = dy if self.corner.startswith("top") else height - self.size - dy
        left = dx if self.corner.endswith("left") else width - self.size - dx
        if top < 0 or left < 0 or top + self.size > height or left + self.size > width:
            raise InvalidInputError(f"{self.size}x{self.size} patch at {self.corner}+{self.offset} leaves a {height}x{width} image")
        return top, left

    def pixels(self, channels):
        if self.fill == "solid":
            return np.full((channels, self.size, self.size), self.value, dtype=np.float32)
        rng = np.random.default_rng(self.seed)
        return rng.uniform(0.0, 1.0, (channels, self.size, self.size)).astype(np.float32)


def apply_patch(images, patch: PatchSpec):
    """Copy of ``images`` (array ``[N, C, H, W]`` or LabeledBatch) with the patch stamped in."""
    if isinstance(images, LabeledBatch):
        return images.with_images(apply_patch(images.images, patch))
    images = np.asarray(images)
    if images.ndim != 4:
        raise InvalidInputError(f"images must be [N, C, H, W], got {images.shape}")
    out = images.copy()
    if patch.size == 0:
        return out
    _, c, h, w = images.shape
    top, left = patch.region(h, w)
    out[:, :, top : top + patch.size, left : left + patch.size] = patch.pixels(c)
    return out


@dataclass
class AttackSpec:
    kind: str
    epochs: int = 10
    lr: float = 1e-3
    data_fraction: float = 0.2
    batch_size: int = 32
    optimizer: str = "adam"
    seed: int = 0
    ewc_lambda: float = 1e4
    fisher_samples: int = 200
    aux_source: str = "synthetic"
    overwrite_patch: PatchSpec = field(default_factory=lambda: PatchSpec(size=6, corner="top_left", fill="texture", seed=1))
    overwrite_label: int = 0
    overwrite_fraction: float = 0.5

    def __post_init__(self):
        if isinstance(self.overwrite_patch, dict):
            self.overwrite_patch = PatchSpec(**self.overwrite_patch)
        if self.kind not in ATTACK_KINDS:
            raise InvalidInputError(f"unknown attack kind {self.kind!r}; choose from {ATTACK_KINDS}")
        if not 0.0 < self.data_fraction <= 1.0:
            raise InvalidInputError("attack data_fraction must lie in (0, 1]")
        if self.epochs < 0 or self.lr <= 0:
            raise InvalidInputError("attack needs epochs >= 0 and lr > 0")
        if self.ewc_lambda < 0:
            raise InvalidInputError("ewc_lambda must be non-negative")
        if self.aux_source != "synthetic":
            raise InvalidInputError("only the 'synthetic' auxiliary source is available")


def _ownership_cells(report, method, model, test, patch, source_name):
    report.add(method, source_name, source_name, False, accuracy(model, test))
    report.add(method, source_name, source_name, True, accuracy(model, test, patch))


def run_ownership_verification(
    source_data: DomainDataset,
    backbone_spec: BackboneSpec,
    config: TrainConfig,
    patch: PatchSpec | None = None,
    include_sl: bool = True,
    return_models: bool = False,
):
    """Train with the patched source as the unauthorized domain.

    The protected model should keep clean-source accuracy and collapse on
    patched inputs; the supervised control should be indifferent to the
    patch.
    """
    patch = patch or PatchSpec()
    train = source_data.train
    target = apply_patch(train, patch).with_tag("target")
    models = {"CUTI": train_target_specified(train, target, backbone_spec, config)}
    if include_sl:
        models["SL"] = train_sl(train, backbone_spec, baseline_config(config))
    report = EvalReport(meta={"kind": "ownership", "source": source_data.name, "seed": config.seed,
                              "patch": vars(patch) | {"offset": list(patch.offset)}})
    for name in ("SL", "CUTI"):
        if name in models:
            _ownership_cells(report, name, models[name], source_data.test, patch, source_data.name)
    report.finalize()
    return (report, models) if return_models else report


# ---------------------------------------------------------------- attacks


def _attack_subset(train: LabeledBatch, attack: AttackSpec):
    n = max(1, int(np.ceil(attack.data_fraction * len(train))))
    order = np.random.default_rng([attack.seed, 11]).permutation(len(train))[:n]
    return train.subset(np.sort(order))


def _estimate_fisher(model, batch: LabeledBatch, n_samples: int, epsilon_y: float, dtype):
    """Diagonal Fisher: mean squared per-sample gradient of the label loss."""
    params = [p for p in model.parameters() if p.requires_grad]
    fisher = [torch.zeros_like(p) for p in params]
    n = min(n_samples, len(batch))
    x = torch.from_numpy(batch.images[:n]).to(dtype)
    y = torch.from_numpy(batch.labels[:n])
    model.eval()
    for i in range(n):
        model.zero_grad(set_to_none=True)
        loss = kl_to_label(model(x[i : i + 1]), y[i : i + 1], epsilon_y)
        loss.backward()
        for f, p in zip(fisher, params):
            if p.grad is not None:
                f += p.grad.detach() ** 2 / n
    model.zero_grad(set_to_none=True)
    return fisher


def _reinit_head(model, seed):
    """Fresh weights for the output layer only."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model.classifier[-1].reset_parameters()


def run_attack(state: ModelState, attack: AttackSpec, clean_data: DomainDataset, patch: PatchSpec,
               epsilon_y: float = 0.05, synth_config=None):
    """Apply one watermark-removal attack to a copy of ``state``.

    Returns the attacked state and an ownership report holding the clean and
    patched test accuracies before (method ``CUTI``) and after (method
    ``attack.kind``) the attack.
    """
    attacked = copy.deepcopy(state)
    attacked.model.generator = None
    model = attacked.model
    dtype = next(model.parameters()).dtype
    name = clean_data.name
    report = EvalReport(meta={"kind": "ownership", "source": name, "attack": attack.kind, "seed": attack.seed})
    _ownership_cells(report, "CUTI", state, clean_data.test, patch, name)

    if attack.epochs > 0:
        subset = _attack_subset(clean_data.train, attack)
        rng = np.random.default_rng([attack.seed, 13])
        if attack.kind == "RTAL":
            _reinit_head(model, attack.seed)
        if attack.kind == "AU":
            from .training import SynthConfig

            aux = synthesize_unauthorized(subset, synth_config or SynthConfig(), attack.seed)
            with torch.no_grad():
                model.eval()
                pseudo = model.logits(torch.from_numpy(aux.images).to(dtype)).argmax(1).numpy()
            subset = LabeledBatch(aux.images, pseudo, "synthetic", aux.num_classes)
        anchor = fisher = None
        if attack.kind == "EWC":
            anchor = [p.detach().clone() for p in model.parameters()]
            fisher = _estimate_fisher(model, subset, attack.fisher_samples, epsilon_y, dtype)
        opt = OptimizerSpec(attack.optimizer, attack.lr).build(model.parameters())
        x_all = torch.from_numpy(subset.images).to(dtype)
        y_all = torch.from_numpy(subset.labels)
        model.train()
        for _ in range(attack.epochs):
            order = rng.permutation(len(subset))
            for start in range(0, len(order), attack.batch_size):
                idx = order[start : start + attack.batch_size]
                x, y = x_all[idx], y_all[idx]
                if attack.kind == "OVERWRITE":
                    marked = rng.random(len(idx)) < attack.overwrite_fraction
                    if marked.any():
                        x = x.clone()
                        x[marked] = torch.from_numpy(apply_patch(x[marked].numpy(), attack.overwrite_patch)).to(dtype)
                        y = y.clone()
                        y[torch.from_numpy(marked)] = attack.overwrite_label
                loss = kl_to_label(model(x), y, epsilon_y)
                if attack.kind == "EWC" and attack.ewc_lambda > 0:
                    penalty = sum((f * (p - a) ** 2).sum() for f, p, a in zip(fisher, model.parameters(), anchor))
                    loss = loss + attack.ewc_lambda * penalty
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
        model.eval()
        if attack.kind == "OVERWRITE":
            test = clean_data.test
            keep = test.labels != attack.overwrite_label
            hit = accuracy(attacked, LabeledBatch(test.images[keep], np.full(keep.sum(), attack.overwrite_label),
                                                  "source", test.num_classes), attack.overwrite_patch)
            report.meta["overwrite_success"] = hit
    _ownership_cells(report, attack.kind, attacked, clean_data.test, patch, name)
    report.finalize()
    return attacked, report


def parameter_displacement(a: ModelState, b: ModelState) -> float:
    """Euclidean distance between the backbone parameters of two states."""
    pa = dict(a.model.named_parameters())
    total = 0.0
    for n, p in b.model.named_parameters():
        if not n.startswith("generator."):
            total += float(((p.detach() - pa[n].detach()) ** 2).sum())
    return total ** 0.5


# ----------------------------------------------------------- authorization


def authorization_mixture(source: LabeledBatch, auth_patch: PatchSpec, synth_config, seed: int) -> LabeledBatch:
    """Unauthorized pool: clean source, synthetic samples, and patched synthetic samples."""
    synth = synthesize_unauthorized(source, synth_config, seed)
    synth_patched = apply_patch(synthesize_unauthorized(source, synth_config, seed + 1), auth_patch)
    return LabeledBatch.concat([source.with_tag("target"), synth, synth_patched], domain_tag="target")


def run_applicability_authorization(
    source_data: DomainDataset,
    backbone_spec: BackboneSpec,
    config: TrainConfig,
    auth_patch: PatchSpec | None = None,
    eval_domains=(),
    return_models: bool = False,
):
    """Train a model that only works on patched source images.

    Reports accuracy on every domain in ``[source_data, *eval_domains]``
    with and without the patch; the patched source cell is the authorized
    one.
    """
    auth_patch = auth_patch or PatchSpec()
    source = source_data.train
    authorized = apply_patch(source, auth_patch)

    def pool(epoch):
        return authorization_mixture(source, auth_patch, config.synth, config.seed * 100_003 + 2 * epoch)

    model = train_target_free(authorized, backbone_spec, config, unauthorized=pool)
    report = EvalReport(meta={"kind": "authorization", "source": source_data.name, "method": "CUTI",
                              "seed": config.seed})
    for ds in [source_data, *[d for d in eval_domains if d.name != source_data.name]]:
        for patched in (True, False):
            report.add("CUTI", source_data.name, ds.name, patched,
                       accuracy(model, ds.test, auth_patch if patched else None))
    report.finalize()
    return (report, {"CUTI": model}) if return_models else report
