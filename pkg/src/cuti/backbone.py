"""VGG-style classifier with a CUTI generator after every pooling layer."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from .cuti_generator import cuti_fuse, init_generator
from .errors import InvalidInputError

ACTIVATIONS = {"relu": nn.ReLU, "leaky_relu": nn.LeakyReLU, "tanh": nn.Tanh, "elu": nn.ELU}


@dataclass
class BlockSpec:
    out_channels: int
    n_convs: int = 2
    activation: str = "relu"


@dataclass
class BackboneSpec:
    blocks: list = field(default_factory=lambda: [BlockSpec(16), BlockSpec(32), BlockSpec(64)])
    num_classes: int = 10
    input_shape: tuple = (3, 32, 32)
    hidden: int = 128

    def __post_init__(self):
        self.blocks = [b if isinstance(b, BlockSpec) else BlockSpec(**b) for b in self.blocks]
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.validate()

    @property
    def L(self) -> int:
        return len(self.blocks)

    @property
    def block_channels(self):
        return [b.out_channels for b in self.blocks]

    @property
    def final_spatial(self):
        _, h, w = self.input_shape
        return h >> self.L, w >> self.L

    def validate(self):
        if self.L < 1:
            raise InvalidInputError("a backbone needs at least one block")
        if self.num_classes < 2:
            raise InvalidInputError("num_classes must be at least 2")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise InvalidInputError(f"input_shape must be (C, H, W), got {self.input_shape}")
        if min(self.final_spatial) < 1:
            raise InvalidInputError(f"{self.L} pooling layers shrink {self.input_shape[1:]} below 1x1")
        for b in self.blocks:
            if b.out_channels < 1 or b.n_convs < 1:
                raise InvalidInputError(f"invalid block {b}")
            if b.activation not in ACTIVATIONS:
                raise InvalidInputError(f"unknown activation {b.activation!r}")

    def to_dict(self):
        return {
            "blocks": [asdict(b) for b in self.blocks],
            "num_classes": self.num_classes,
            "input_shape": list(self.input_shape),
            "hidden": self.hidden,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class Block(nn.Module):
    """``n_convs`` 3x3 convolutions with activations, then 2x max-pooling."""

    def __init__(self, in_channels: int, spec: BlockSpec):
        super().__init__()
        chans = [in_channels] + [spec.out_channels] * spec.n_convs
        self.conv = nn.ModuleList(nn.Conv2d(a, b, 3, padding=1) for a, b in zip(chans, chans[1:]))
        self.act = ACTIVATIONS[spec.activation]()
        self.pool = nn.MaxPool2d(2)

    def forward(self, x):
        for conv in self.conv:
            x = self.act(conv(x))
        return self.pool(x)


class CutiNet(nn.Module):
    def __init__(self, spec: BackboneSpec, with_generators: bool = True, generator_seed: int = 0):
        super().__init__()
        self.spec = spec
        in_ch = spec.input_shape[0]
        blocks = []
        for b in spec.blocks:
            blocks.append(Block(in_ch, b))
            in_ch = b.out_channels
        self.block = nn.ModuleList(blocks)
        h, w = spec.final_spatial
        self.classifier = nn.Sequential(
            nn.Flatten(),
            nn.Linear(in_ch * h * w, spec.hidden),
            nn.ReLU(),
            nn.Linear(spec.hidden, spec.num_classes),
        )
        self.generator = None
        if with_generators:
            self.generator = nn.ModuleList(
                init_generator(c, generator_seed + i) for i, c in enumerate(spec.block_channels)
            )

    @property
    def has_generators(self):
        return self.generator is not None

    def _check(self, x):
        if tuple(x.shape[1:]) != self.spec.input_shape or x.dim() != 4:
            raise InvalidInputError(f"expected input [N, *{self.spec.input_shape}], got {tuple(x.shape)}")

    def logits(self, x):
        self._check(x)
        for blk in self.block:
            x = blk(x)
        return self.classifier(x)

    def forward(self, x):
        return torch.softmax(self.logits(x), dim=1)

    def paired_logits(self, x_s, x_i, bypass: bool = False):
        """Run source and CUTI streams side by side; only the CUTI stream is restyled."""
        self._check(x_s)
        self._check(x_i)
        if x_s.shape != x_i.shape:
            raise InvalidInputError("paired streams must share a shape")
        if not bypass and not self.has_generators:
            raise InvalidInputError("model has no generators (exported model?)")
        f_s, f_i = x_s, x_i
        for index, blk in enumerate(self.block):
            f_s = blk(f_s)
            f_i = blk(f_i)
            if not bypass:
                f_i = cuti_fuse(f_i, f_s, self.generator[index])
        return self.classifier(f_s), self.classifier(f_i)

    def backbone_parameters(self):
        return [p for name, p in self.named_parameters() if not name.startswith("generator.")]

    def generator_parameters(self):
        return [] if self.generator is None else list(self.generator.parameters())


@dataclass
class ModelState:
    """Trainable network plus training metadata."""

    model: CutiNet
    epoch: int = 0
    seed: int = 0
    config_hash: str = ""
    history: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def spec(self) -> BackboneSpec:
        return self.model.spec


def build_model(spec: BackboneSpec, seed: int = 0, with_generators: bool = True, dtype=torch.float32) -> ModelState:
    """Deterministically initialized model; the global torch RNG is left untouched."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = CutiNet(spec, with_generators, generator_seed=seed)
    return ModelState(model.to(dtype), seed=seed)


def _as_input(x, state):
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(x)
    dtype = next(state.model.parameters()).dtype
    return x.to(dtype)


def forward(x, state: ModelState) -> torch.Tensor:
    """Class probabilities ``[N, num_classes]`` from the source path."""
    return state.model(_as_input(x, state))


def forward_paired_cuti(x_s, x_i, state: ModelState, bypass: bool = False):
    """``(p_s, p_i)``; with ``bypass`` the generators are skipped (diagnostic)."""
    ls, li = state.model.paired_logits(_as_input(x_s, state), _as_input(x_i, state), bypass)
    return torch.softmax(ls, dim=1), torch.softmax(li, dim=1)


def export_released_model(state: ModelState) -> ModelState:
    """Copy of ``state`` without generators; the source path is unchanged."""
    released = copy.deepcopy(state)
    released.model.generator = None
    return released
