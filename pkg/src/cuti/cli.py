"""``cuti`` command line: train, eval, attack, synthesize, report.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .errors import ConfigError, CutiError, ReportConsistencyError
from .evaluation import ATTACK_KINDS, REPORT_FORMAT, EvalReport, accuracy, emit_report, load_report, merge_means, to_csv, to_markdown
from .experiments import run_experiment
from .ip_protocols import run_attack
from .training import synthesize_unauthorized

log = logging.getLogger("cuti")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
_SUFFIX = {"json": ".json", "markdown": ".md", "csv": ".csv"}


class UsageError(CutiError):
    pass


def _load_config(args) -> ExperimentConfig:
    overrides = args.set or []
    if args.config:
        return ExperimentConfig.from_file(args.config, overrides)
    return ExperimentConfig({}, overrides)


def _write_reports(reports, out_dir: Path, formats):
    written = []
    for report in reports:
        stem = f"report.attack.{report.meta['attack']}" if "attack" in report.meta else "report"
        for fmt in formats:
            written.append(emit_report(report, out_dir / f"{stem}{_SUFFIX[fmt]}", fmt))
    return written


def _print_report(report: EvalReport):
    print(to_markdown([report]), end="")


# ------------------------------------------------------------------ commands


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out or cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(cfg.to_yaml())
    result = run_experiment(cfg, out)
    main = "CUTI" if "CUTI" in result.models else "SL"
    ckpt = save_checkpoint(result.models[main], out / "model.ckpt")
    if main != "SL" and "SL" in result.models:
        save_checkpoint(result.models["SL"], out / "sl.ckpt")
    for name, state in result.models.items():
        if name.startswith("attacked."):
            save_checkpoint(state, out / f"model.ckpt.{name}")
    files = _write_reports(result.reports, out, cfg["output"]["formats"])
    for report in result.reports:
        _print_report(report)
    print(f"checkpoint: {ckpt}")
    print("reports: " + ", ".join(str(f) for f in files))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    state = load_checkpoint(args.checkpoint)
    if tuple(state.spec.input_shape) != cfg.input_shape():
        raise CutiError(f"checkpoint expects inputs {state.spec.input_shape}, data provides {cfg.input_shape()}")
    domains = {d.name: d for d in cfg.load_domains()}
    names = args.dataset or list(domains)
    for n in names:
        if n not in domains:
            raise UsageError(f"unknown dataset {n!r}; available: {list(domains)}")
    patch = cfg.patch_spec()
    method = state.meta.get("mode", "model")
    report = EvalReport(meta={"kind": "eval", "source": cfg["data"]["source"], "checkpoint": str(args.checkpoint),
                              "config_hash": state.config_hash, "seed": state.seed,
                              "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds")})
    for n in names:
        for patched in ((False, True) if args.patch else (False,)):
            acc = accuracy(state, domains[n].test, patch if patched else None)
            report.add(method, cfg["data"]["source"], n, patched, acc)
            print(f"{n}{' +patch' if patched else ''}: {acc:.2f}%")
    report.finalize()
    out = Path(args.out) if args.out else Path(f"{args.checkpoint}.eval.json")
    emit_report(report, out)
    print(f"report: {out}")
    return EXIT_OK


def cmd_attack(args) -> int:
    cfg = _load_config(args)
    state = load_checkpoint(args.checkpoint)
    source = {d.name: d for d in cfg.load_domains()}[cfg["data"]["source"]]
    tc = cfg.train_config()
    attacked, report = run_attack(state, cfg.attack_spec(args.kind), source, cfg.patch_spec(), tc.loss.epsilon_y, tc.synth)
    report.meta.update(config_hash=cfg.config_hash(), checkpoint=str(args.checkpoint),
                       timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"))
    out = Path(f"{args.checkpoint}.attacked.{args.kind}")
    save_checkpoint(attacked, out)
    rep_path = emit_report(report, Path(f"{out}.report.json"))
    _print_report(report)
    print(f"checkpoint: {out}\nreport: {rep_path}")
    return EXIT_OK


def cmd_synthesize(args) -> int:
    cfg = _load_config(args)
    source = {d.name: d for d in cfg.load_domains()}[cfg["data"]["source"]]
    seed = cfg["train"]["seed"] if args.seed is None else args.seed
    batch = synthesize_unauthorized(source.train, cfg.train_config().synth, seed)
    if args.count is not None:
        batch = batch.subset(np.arange(min(args.count, len(batch))))
    out = Path(args.out)
    with open(out, "wb") as fh:
        np.savez(fh, images=batch.images, labels=batch.labels)
    print(f"wrote {len(batch)} synthetic samples from '{source.name}' to {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise UsageError(f"{run_dir} is not a directory")
    reports = []
    for path in sorted(run_dir.rglob("*.json")):
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError):
            continue
        if isinstance(doc, dict) and isinstance(doc.get("meta"), dict) and doc["meta"].get("format") == REPORT_FORMAT:
            reports.append((path, load_report(path)))
    if not reports:
        raise UsageError(f"no {REPORT_FORMAT} files under {run_dir}")
    groups = {}
    for _, r in reports:
        groups.setdefault(r.kind, []).append(r)
    if args.format == "json":
        text = json.dumps({"reports": [str(p) for p, _ in reports],
                           "means": {k: merge_means(v) for k, v in groups.items()}}, indent=2, sort_keys=True) + "\n"
    else:
        render = to_markdown if args.format == "markdown" else to_csv
        parts = []
        for kind, group in groups.items():
            parts.append((f"## {kind}\n\n" if args.format == "markdown" else f"# {kind}\n") + render(group))
        text = "\n".join(parts)
    out = Path(args.out) if args.out else run_dir / f"tables{_SUFFIX[args.format]}"
    out.write_text(text)
    print(text, end="")
    print(f"table: {out}")
    return EXIT_OK


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cuti", description="Train and verify domain-confined classifiers.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="YAML experiment config")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
        return sp

    sp = with_config(sub.add_parser("train", help="run the configured training mode"))
    sp.add_argument("--out", help="output directory (default: output.dir)")
    sp.set_defaults(func=cmd_train)

    sp = with_config(sub.add_parser("eval", help="accuracy of a checkpoint on configured domains"))
    sp.add_argument("checkpoint")
    sp.add_argument("--dataset", action="append", help="domain name (repeatable; default: all)")
    sp.add_argument("--patch", action="store_true", help="also evaluate with the configured patch stamped in")
    sp.add_argument("--out", help="report path (default: <checkpoint>.eval.json)")
    sp.set_defaults(func=cmd_eval)

    sp = with_config(sub.add_parser("attack", help="apply a watermark-removal attack to a checkpoint"))
    sp.add_argument("checkpoint")
    sp.add_argument("--kind", required=True, choices=ATTACK_KINDS)
    sp.set_defaults(func=cmd_attack)

    sp = with_config(sub.add_parser("synthesize", help="write synthetic unauthorized samples to .npz"))
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--count", type=int)
    sp.set_defaults(func=cmd_synthesize)

    sp = sub.add_parser("report", help="merge report JSON files into comparison tables")
    sp.add_argument("run_dir")
    sp.add_argument("--format", choices=("markdown", "csv", "json"), default="markdown")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ReportConsistencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (CutiError, OSError, RuntimeError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
