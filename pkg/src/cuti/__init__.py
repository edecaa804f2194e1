"""Compact un-transferable isolation (CUTI) training for model IP protection."""

from .backbone import BackboneSpec, BlockSpec, CutiNet, ModelState, build_model, export_released_model, forward, forward_paired_cuti
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .cuti_generator import CutiGenerator, cuti_fuse, init_generator
from .data import DomainDataset, LabeledBatch, SyntheticSpec, load_idx_dataset, make_synthetic_domains, split_and_shuffle
from .errors import ConfigError, CutiError, FormatError, InvalidInputError, ReportConsistencyError, TrainingDivergedError
from .evaluation import EvalReport, accuracy, authorization_metrics, avg_attack_drop, drop_metrics, emit_report, load_report
from .experiments import run_ablation, run_experiment
from .feature_stats import StyleStats, compute_style_stats, normalize_semantic, restyle
from .ip_protocols import AttackSpec, PatchSpec, apply_patch, run_applicability_authorization, run_attack, run_ownership_verification
from .objectives import LossConfig, ablation_loss, cuti_loss, kl_to_label
from .training import OptimizerSpec, SynthConfig, TrainConfig, synthesize_unauthorized, train_sl, train_target_free, train_target_specified

__version__ = "0.1.0"

__all__ = [
    "AttackSpec",
    "BackboneSpec",
    "BlockSpec",
    "ConfigError",
    "CutiError",
    "CutiGenerator",
    "CutiNet",
    "DomainDataset",
    "EvalReport",
    "ExperimentConfig",
    "FormatError",
    "InvalidInputError",
    "LabeledBatch",
    "LossConfig",
    "ModelState",
    "OptimizerSpec",
    "PatchSpec",
    "ReportConsistencyError",
    "StyleStats",
    "SynthConfig",
    "SyntheticSpec",
    "TrainConfig",
    "TrainingDivergedError",
    "ablation_loss",
    "accuracy",
    "apply_patch",
    "authorization_metrics",
    "avg_attack_drop",
    "build_model",
    "compute_style_stats",
    "cuti_fuse",
    "cuti_loss",
    "drop_metrics",
    "emit_report",
    "export_released_model",
    "forward",
    "forward_paired_cuti",
    "init_generator",
    "kl_to_label",
    "load_checkpoint",
    "load_idx_dataset",
    "load_report",
    "make_synthetic_domains",
    "normalize_semantic",
    "restyle",
    "run_ablation",
    "run_applicability_authorization",
    "run_attack",
    "run_experiment",
    "run_ownership_verification",
    "save_checkpoint",
    "split_and_shuffle",
    "synthesize_unauthorized",
    "train_sl",
    "train_target_free",
    "train_target_specified",
]
