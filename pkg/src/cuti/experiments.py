"""Config-driven experiment runs shared by the CLI, the demos and the tests."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

from .backbone import ModelState
from .config import ExperimentConfig
from .data import DomainDataset
from .evaluation import EvalReport, accuracy
from .ip_protocols import run_applicability_authorization, run_attack, run_ownership_verification
from .objectives import VARIANTS
from .training import baseline_config, train_sl, train_target_free, train_target_specified

log = logging.getLogger(__name__)


@dataclass
class ExperimentResult:
    models: dict = field(default_factory=dict)
    reports: list = field(default_factory=list)


def _stamp(report: EvalReport, cfg: ExperimentConfig, **extra):
    report.meta.update(config_hash=cfg.config_hash(), seed=cfg["train"]["seed"],
                       timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"), **extra)
    return report


def _domains(cfg: ExperimentConfig, domains=None):
    domains = domains if domains is not None else cfg.load_domains()
    by_name = {d.name: d for d in domains}
    wanted = cfg["data"]["eval_domains"] or list(by_name)
    return by_name, [by_name[n] for n in wanted]


def transfer_report(models: dict, method: str, source: DomainDataset, eval_domains) -> EvalReport:
    report = EvalReport(meta={"kind": "transfer", "source": source.name, "method": method, "baseline": "SL"})
    for name in ("SL", method):
        if name in models:
            for d in [source, *[e for e in eval_domains if e.name != source.name]]:
                report.add(name, source.name, d.name, False, accuracy(models[name], d.test))
    if "SL" not in models:
        report.meta["kind"] = "eval"
    return report.finalize()


def run_experiment(cfg: ExperimentConfig, out_dir=None, domains=None) -> ExperimentResult:
    """Train and evaluate whatever ``train.mode`` asks for.

    ``out_dir`` only controls where training logs go; writing checkpoints and
    reports is left to the caller.
    """
    by_name, evals = _domains(cfg, domains)
    source = by_name[cfg["data"]["source"]]
    log_path = Path(out_dir) / "train_log.jsonl" if out_dir else None
    tc = cfg.train_config(log_path)
    spec = cfg.backbone_spec()
    mode = cfg.mode
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    result = ExperimentResult()
    h = cfg.config_hash()

    if mode == "ownership":
        report, models = run_ownership_verification(source, spec, tc, cfg.patch_spec(),
                                                    include_sl=cfg["train"]["baseline"], return_models=True)
        result.models.update(models)
        result.reports.append(_stamp(report, cfg))
        for kind in cfg["protocol"]["attacks"]:
            attacked, rep = run_attack(models["CUTI"], cfg.attack_spec(kind), source, cfg.patch_spec(),
                                       tc.loss.epsilon_y, tc.synth)
            attacked.config_hash = h
            result.models[f"attacked.{kind}"] = attacked
            result.reports.append(_stamp(rep, cfg))
    elif mode == "authorization":
        report, models = run_applicability_authorization(source, spec, tc, cfg.patch_spec(), evals, return_models=True)
        result.models.update(models)
        result.reports.append(_stamp(report, cfg))
    else:
        if mode == "sl":
            result.models["SL"] = train_sl(source.train, spec, tc)
            method = "SL"
        else:
            if mode == "target_specified":
                target = by_name[cfg["data"]["target"]]
                result.models["CUTI"] = train_target_specified(source.train, target.train, spec, tc)
            else:
                result.models["CUTI"] = train_target_free(source.train, spec, tc)
            method = "CUTI"
            if cfg["train"]["baseline"]:
                result.models["SL"] = train_sl(source.train, spec, baseline_config(tc))
        result.reports.append(_stamp(transfer_report(result.models, method, source, evals), cfg))
    for state in result.models.values():
        state.config_hash = h
    return result


def run_ablation(cfg: ExperimentConfig, variants=VARIANTS, domains=None, baseline: ModelState | None = None):
    """Target-specified training once per loss variant on the same task.

    Returns an ``ablation`` report with one method per variant (plus ``SL``
    when a baseline is given) evaluated on every configured domain, and the
    trained states.
    """
    by_name, evals = _domains(cfg, domains)
    source, target = by_name[cfg["data"]["source"]], by_name[cfg["data"]["target"]]
    spec = cfg.backbone_spec()
    base = cfg.train_config()
    report = EvalReport(meta={"kind": "ablation", "source": source.name, "target": target.name})
    models = {}
    if baseline is not None:
        models["SL"] = baseline
    for variant in variants:
        tc = replace(base, loss=replace(base.loss, variant=variant))
        models[variant] = train_target_specified(source.train, target.train, spec, tc)
    for name, state in models.items():
        for d in evals:
            report.add(name, source.name, d.name, False, accuracy(state, d.test))
    return _stamp(report.finalize(), cfg), models
