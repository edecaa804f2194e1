"""YAML experiment configuration: defaults, validation, overrides and hashing.

A config is a tree with the sections ``data``, ``backbone``, ``train``,
``loss``, ``synth``, ``protocol`` and ``output``. Values given in a file
replace the defaults below key by key, ``--set section.key=value`` overrides
replace file values, and any key not present in the defaults is rejected.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path

import yaml

from .backbone import BackboneSpec, BlockSpec
from .data import STYLES, DomainDataset, SyntheticSpec, load_idx_dataset, make_synthetic_domains, match_shape, split_and_shuffle
from .errors import ConfigError, CutiError
from .ip_protocols import AttackSpec, PatchSpec
from .objectives import LossConfig
from .training import OptimizerSpec, SynthConfig, TrainConfig

CLI_MODES = ("sl", "target_specified", "target_free", "ownership", "authorization")
DATA_DIR_ENV = "CUTI_DATA_DIR"

_PATCH = {"size": 8, "corner": "bottom_right", "offset": [0, 0], "fill": "solid", "value": 1.0, "seed": 0}

DEFAULTS = {
    "data": {
        "kind": "synthetic",
        "root": None,
        "source": "noisy",
        "target": "identity",
        "eval_domains": [],
        "split_seed": 0,
        "synthetic": {
            "n_classes": 10,
            "n_per_class": 625,
            "image_size": 32,
            "domain_styles": list(STYLES),
            "seed": 0,
            "test_fraction": 0.2,
        },
        "idx": {},
    },
    "backbone": {"channels": [16, 32, 64], "convs_per_block": 2, "activation": "relu", "hidden": 128},
    "train": {
        "mode": "sl",
        "max_epochs": 40,
        "batch_size": 32,
        "seed": 0,
        "warmup_epochs": 0,
        "baseline": True,
        "optimizer": {"method": "adam", "lr": 1e-3, "momentum": 0.9, "weight_decay": 0.0},
    },
    "loss": {"variant": "alternating", "epsilon_y": 0.05, "clamp": 3.0, "clamp_mode": "batch", "phase_offset": 0},
    "synth": {
        "noisy_adain_fraction": 0.5,
        "noise_scale": 0.4,
        "style_source": "other",
        "invert_prob": 0.5,
        "hue_jitter": 1.0,
        "tint_prob": 0.5,
        "contrast_range": [0.5, 3.0],
        "brightness_range": [-0.3, 0.3],
        "blur_prob": 0.5,
        "texture_strength": 0.5,
        "pixel_noise": 0.05,
        "max_shift": 2,
    },
    "protocol": {
        "patch": dict(_PATCH),
        "attacks": [],
        "attack": {
            "epochs": 10,
            "lr": 1e-3,
            "data_fraction": 0.2,
            "batch_size": 32,
            "optimizer": "adam",
            "seed": 0,
            "ewc_lambda": 1e4,
            "fisher_samples": 200,
            "aux_source": "synthetic",
            "overwrite_label": 0,
            "overwrite_fraction": 0.5,
            "overwrite_patch": {**_PATCH, "size": 6, "corner": "top_left", "fill": "texture", "seed": 1},
        },
    },
    "output": {"dir": "runs/default", "formats": ["json", "markdown"]},
}

# keys whose value is a free-form mapping (domain name -> files)
_OPEN_KEYS = {("data", "idx")}
# keys whose default is None but which take a string
_OPTIONAL_STR = {("data", "root")}

# Settings that make every protocol converge within ~20 epochs on the
# synthetic digits; used by the shipped configs and the acceptance suite.
DESK_PRESET = {
    "data.synthetic.n_per_class": 250,
    "train.warmup_epochs": 2,
    "loss.clamp_mode": "sample",
}


def _type_ok(default, value):
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, list):
        return isinstance(value, list)
    return True


def _merge(base: dict, update, path=()):
    if not isinstance(update, dict):
        where = ".".join(path) or "config"
        raise ConfigError(f"{where}: expected a mapping, got {type(update).__name__}")
    for key, value in update.items():
        here = (*path, str(key))
        dotted = ".".join(here)
        if key not in base:
            raise ConfigError(f"{dotted}: unknown key")
        default = base[key]
        if here in _OPEN_KEYS:
            if not isinstance(value, dict):
                raise ConfigError(f"{dotted}: expected a mapping")
            base[key] = copy.deepcopy(value)
        elif isinstance(default, dict):
            _merge(default, value, here)
        elif here in _OPTIONAL_STR:
            if value is not None and not isinstance(value, str):
                raise ConfigError(f"{dotted}: expected a string or null, got {value!r}")
            base[key] = value
        elif not _type_ok(default, value):
            raise ConfigError(f"{dotted}: expected {type(default).__name__}, got {value!r}")
        else:
            base[key] = float(value) if isinstance(default, float) else copy.deepcopy(value)
    return base


def parse_override(text: str) -> dict:
    """``"train.max_epochs=5"`` -> ``{"train": {"max_epochs": 5}}`` (value parsed as YAML)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    key, raw = text.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) < 2 or not all(parts):
        raise ConfigError(f"override key {key!r} must look like section.key")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{key}: cannot parse value {raw!r} ({exc})") from None
    tree = value
    for part in reversed(parts):
        tree = {part: tree}
    return tree


class ExperimentConfig:
    """Validated configuration tree plus builders for the library objects."""

    def __init__(self, tree: dict | None = None, overrides=()):
        resolved = _merge(copy.deepcopy(DEFAULTS), tree or {})
        for item in overrides:
            resolved = _merge(resolved, parse_override(item) if isinstance(item, str) else item)
        self.tree = resolved
        self._validate()

    @classmethod
    def from_file(cls, path, overrides=()):
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            tree = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML ({exc})") from None
        return cls(tree or {}, overrides)

    def __getitem__(self, section):
        return self.tree[section]

    @property
    def mode(self) -> str:
        return self.tree["train"]["mode"]

    def config_hash(self) -> str:
        """Stable digest of everything except the output section."""
        body = {k: v for k, v in self.tree.items() if k != "output"}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.tree, sort_keys=False)

    # ------------------------------------------------------------ builders

    def _validate(self):
        d = self.tree
        if self.mode not in CLI_MODES:
            raise ConfigError(f"train.mode: must be one of {CLI_MODES}, got {self.mode!r}")
        if d["data"]["kind"] not in ("synthetic", "idx"):
            raise ConfigError("data.kind: must be 'synthetic' or 'idx'")
        if d["data"]["kind"] == "idx":
            if not d["data"]["idx"]:
                raise ConfigError("data.idx: idx data needs at least one domain entry")
            for name, files in d["data"]["idx"].items():
                if not isinstance(files, dict) or set(files) != {"images", "labels"}:
                    raise ConfigError(f"data.idx.{name}: needs exactly the keys 'images' and 'labels'")
        names = self.domain_names()
        for key in ("source", "target"):
            if d["data"][key] not in names:
                raise ConfigError(f"data.{key}: {d['data'][key]!r} is not one of the domains {names}")
        for name in d["data"]["eval_domains"]:
            if name not in names:
                raise ConfigError(f"data.eval_domains: unknown domain {name!r}")
        for kind in d["protocol"]["attacks"]:
            if kind not in ("FTAL", "RTAL", "EWC", "AU", "OVERWRITE"):
                raise ConfigError(f"protocol.attacks: unknown attack kind {kind!r}")
        for fmt in d["output"]["formats"]:
            if fmt not in ("json", "markdown", "csv"):
                raise ConfigError(f"output.formats: unknown format {fmt!r}")
        builders = {
            "data.synthetic": lambda: self.synthetic_spec().validate(),
            "backbone": self.backbone_spec,
            "train": self.train_config,
            "protocol.patch": self.patch_spec,
            "protocol.attack": lambda: self.attack_spec("FTAL"),
        }
        for section, build in builders.items():
            try:
                build()
            except (CutiError, TypeError, ValueError) as exc:
                raise ConfigError(f"{section}: {exc}") from None

    def domain_names(self):
        d = self.tree["data"]
        if d["kind"] == "idx":
            return list(d["idx"])
        return list(d["synthetic"]["domain_styles"])

    def synthetic_spec(self) -> SyntheticSpec:
        s = self.tree["data"]["synthetic"]
        return SyntheticSpec(**{**s, "domain_styles": tuple(s["domain_styles"])})

    def input_shape(self):
        # IDX digits are grayscale; they are replicated to RGB at this size too
        size = self.tree["data"]["synthetic"]["image_size"]
        return (3, size, size)

    def num_classes(self) -> int:
        return self.tree["data"]["synthetic"]["n_classes"]

    def backbone_spec(self) -> BackboneSpec:
        b = self.tree["backbone"]
        blocks = [BlockSpec(int(c), b["convs_per_block"], b["activation"]) for c in b["channels"]]
        return BackboneSpec(blocks, self.num_classes(), self.input_shape(), b["hidden"])

    def train_config(self, log_path=None) -> TrainConfig:
        t = self.tree["train"]
        mode = {"ownership": "target_specified", "authorization": "target_free"}.get(t["mode"], t["mode"])
        return TrainConfig(
            max_epochs=t["max_epochs"],
            batch_size=t["batch_size"],
            optimizer=OptimizerSpec(**t["optimizer"]),
            seed=t["seed"],
            loss=LossConfig(**self.tree["loss"]),
            mode=mode,
            synth=SynthConfig(**self.tree["synth"]),
            warmup_epochs=t["warmup_epochs"],
            log_path=str(log_path) if log_path else None,
        )

    def patch_spec(self) -> PatchSpec:
        return PatchSpec(**self.tree["protocol"]["patch"])

    def attack_spec(self, kind: str) -> AttackSpec:
        return AttackSpec(kind=kind, **self.tree["protocol"]["attack"])

    def data_root(self) -> Path:
        root = self.tree["data"]["root"] or os.environ.get(DATA_DIR_ENV) or "."
        return Path(root)

    def load_domains(self) -> list[DomainDataset]:
        """Every configured domain, split into train and test."""
        d = self.tree["data"]
        if d["kind"] == "synthetic":
            return make_synthetic_domains(self.synthetic_spec())
        root = self.data_root()
        out = []
        for name, files in d["idx"].items():
            batch = load_idx_dataset(root / files["images"], root / files["labels"], self.num_classes())
            batch = match_shape(batch, self.input_shape())
            train, test = split_and_shuffle(batch, d["split_seed"], d["synthetic"]["test_fraction"])
            out.append(DomainDataset(name, train, test, self.num_classes()))
        return out


def desk_preset_overrides() -> list[str]:
    return [f"{k}={v}" for k, v in DESK_PRESET.items()]
