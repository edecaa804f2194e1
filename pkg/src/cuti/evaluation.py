"""Accuracy, degradation metrics and the ``cuti-report-1`` report format.

A report is a flat list of accuracy cells keyed by
``(method, source, eval_domain, patched)`` plus aggregates that are always
recomputable from those cells. ``meta["kind"]`` selects which aggregates
apply:

``transfer``
    SL vs protected accuracies of one source row (drop / relative drop on
    the source cell and over the other domains).
``ownership``
    clean vs patched source accuracy per method, and the mean drop over
    watermark-removal attacks.
``authorization``
    a domain x patch grid for one protected model; authorized cell vs mean
    of all other cells.
``eval`` / ``ablation``
    plain cells, no aggregates beyond per-method gaps.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch

from .errors import InvalidInputError, ReportConsistencyError

REPORT_FORMAT = "cuti-report-1"
ATTACK_KINDS = ("FTAL", "RTAL", "EWC", "AU", "OVERWRITE")


# ------------------------------------------------------------------- metrics


def predict_scores(model, images, batch_size: int = 500) -> torch.Tensor:
    """Class scores for ``images`` from a ModelState, module or plain callable."""
    from .backbone import ModelState

    if isinstance(images, np.ndarray):
        images = torch.from_numpy(images)
    net = model.model if isinstance(model, ModelState) else model
    if isinstance(net, torch.nn.Module):
        was_training = net.training
        net.eval()
        dtype = next(net.parameters()).dtype
        images = images.to(dtype)
    outputs = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            outputs.append(torch.as_tensor(net(images[start : start + batch_size])))
    if isinstance(net, torch.nn.Module) and was_training:
        net.train()
    return torch.cat(outputs)


def accuracy(model, split, patch=None) -> float:
    """Percentage of argmax-correct predictions on ``split`` (optionally patched)."""
    if len(split) == 0:
        raise InvalidInputError("cannot measure accuracy on an empty split")
    images = split.images
    if patch is not None:
        from .ip_protocols import apply_patch

        images = apply_patch(images, patch)
    scores = predict_scores(model, images)
    if split.num_classes and scores.shape[1] != split.num_classes:
        raise InvalidInputError(f"model predicts {scores.shape[1]} classes, split has {split.num_classes}")
    correct = (scores.argmax(dim=1).numpy() == split.labels).sum()
    return 100.0 * float(correct) / len(split)


class DropMetrics(NamedTuple):
    mean_drop: float
    mean_relative_drop: float
    excluded: tuple = ()


def drop_metrics(sl_acc, method_acc) -> DropMetrics:
    """Mean of ``sl - method`` and mean of the per-entry ratios ``(sl - method) / sl``.

    Entries with ``sl == 0`` have no relative drop; they are left out of the
    second mean and listed in ``excluded``.
    """
    sl = np.asarray(sl_acc, dtype=np.float64)
    m = np.asarray(method_acc, dtype=np.float64)
    if sl.shape != m.shape or sl.ndim != 1 or len(sl) == 0:
        raise InvalidInputError("accuracy lists must be aligned and non-empty")
    diff = sl - m
    ok = sl != 0
    excluded = tuple(int(i) for i in np.flatnonzero(~ok))
    rel = float(np.mean(diff[ok] / sl[ok] * 100.0)) if ok.any() else math.nan
    return DropMetrics(float(diff.mean()), rel, excluded)


def avg_attack_drop(rows) -> float:
    """Mean of ``clean - patched`` over ``(patched, clean)`` pairs."""
    rows = list(rows)
    if not rows:
        raise InvalidInputError("no attack rows given")
    return float(np.mean([clean - patched for patched, clean in rows]))


class AuthorizationMetrics(NamedTuple):
    authorized: float
    other: float
    drop: float
    relative_drop: float


def authorization_metrics(authorized_acc: float, other_acc) -> AuthorizationMetrics:
    """Authorized cell vs the mean of every other cell of the grid."""
    other = float(np.mean(other_acc))
    drop = authorized_acc - other
    rel = drop / authorized_acc * 100.0 if authorized_acc else math.nan
    return AuthorizationMetrics(float(authorized_acc), other, drop, rel)


# -------------------------------------------------------------------- reports


@dataclass(frozen=True)
class Cell:
    method: str
    source: str
    eval_domain: str
    patched: bool
    accuracy: float


@dataclass
class EvalReport:
    cells: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def kind(self):
        return self.meta.get("kind", "eval")

    def add(self, method, source, eval_domain, patched, acc):
        if not 0.0 <= acc <= 100.0:
            raise InvalidInputError(f"accuracy {acc} outside [0, 100]")
        self.cells.append(Cell(method, source, eval_domain, bool(patched), float(acc)))
        return self

    def get(self, method, eval_domain, patched=False, source=None):
        for c in self.cells:
            if c.method == method and c.eval_domain == eval_domain and c.patched == bool(patched):
                if source is None or c.source == source:
                    return c.accuracy
        raise KeyError((method, eval_domain, patched))

    def methods(self):
        return list(dict.fromkeys(c.method for c in self.cells))

    def domains(self):
        return list(dict.fromkeys(c.eval_domain for c in self.cells))

    def finalize(self):
        self.aggregates = compute_aggregates(self)
        return self

    def to_dict(self):
        meta = dict(self.meta)
        meta["format"] = REPORT_FORMAT
        return {"meta": meta, "cells": [asdict(c) for c in self.cells], "aggregates": self.aggregates}

    @classmethod
    def from_dict(cls, d, check=True):
        if set(d) != {"meta", "cells", "aggregates"}:
            raise ReportConsistencyError(f"report must have keys meta/cells/aggregates, got {sorted(d)}")
        if d["meta"].get("format") != REPORT_FORMAT:
            raise ReportConsistencyError(f"unsupported report format {d['meta'].get('format')!r}")
        report = cls([Cell(**c) for c in d["cells"]], dict(d["aggregates"]), dict(d["meta"]))
        if check:
            check_consistency(report)
        return report


def compute_aggregates(report: EvalReport) -> dict:
    kind = report.kind
    if kind == "transfer":
        source = report.meta["source"]
        sl, method = report.meta.get("baseline", "SL"), report.meta["method"]
        others = [d for d in report.domains() if d != source]
        s = drop_metrics([report.get(sl, source)], [report.get(method, source)])
        out = {"source_drop": s.mean_drop, "source_relative_drop": s.mean_relative_drop}
        if others:
            t = drop_metrics([report.get(sl, d) for d in others], [report.get(method, d) for d in others])
            out.update(target_drop=t.mean_drop, target_relative_drop=t.mean_relative_drop)
        return out
    if kind == "ownership":
        source = report.meta["source"]
        out = {}
        attack_rows = []
        for m in report.methods():
            clean, patched = report.get(m, source, False), report.get(m, source, True)
            out[f"gap.{m}"] = clean - patched
            if m in ATTACK_KINDS:
                attack_rows.append((patched, clean))
        if attack_rows:
            out["avg_attack_drop"] = avg_attack_drop(attack_rows)
        return out
    if kind == "authorization":
        source, method = report.meta["source"], report.meta["method"]
        cells = [c for c in report.cells if c.method == method]
        auth = [c.accuracy for c in cells if c.eval_domain == source and c.patched]
        if len(auth) != 1:
            raise ReportConsistencyError("authorization report needs exactly one authorized cell")
        other = [c.accuracy for c in cells if not (c.eval_domain == source and c.patched)]
        return authorization_metrics(auth[0], other)._asdict()
    out = {}
    for m in report.methods():
        pairs = {c.patched: c.accuracy for c in report.cells if c.method == m}
        if True in pairs and False in pairs:
            out[f"gap.{m}"] = pairs[False] - pairs[True]
    return out


def _close(a, b, tol=1e-9):
    if isinstance(a, float) and math.isnan(a):
        return isinstance(b, float) and math.isnan(b)
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def check_consistency(report: EvalReport, source_name=None):
    where = f"{source_name}: " if source_name else ""
    for c in report.cells:
        if not 0.0 <= c.accuracy <= 100.0:
            raise ReportConsistencyError(f"{where}accuracy {c.accuracy} outside [0, 100]")
    expected = compute_aggregates(report)
    if set(expected) != set(report.aggregates):
        raise ReportConsistencyError(f"{where}aggregate keys {sorted(report.aggregates)} != {sorted(expected)}")
    for key, value in expected.items():
        if not _close(value, report.aggregates[key]):
            raise ReportConsistencyError(f"{where}aggregate {key}={report.aggregates[key]} but cells give {value}")


def round_half_up(x: float, digits: int) -> str:
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return str(Decimal(repr(float(x))).quantize(Decimal(1).scaleb(-digits), rounding=ROUND_HALF_UP))


def fmt_drop(drop: float, rel: float) -> str:
    """``61.00 (88.56%)``"""
    return f"{round_half_up(drop, 2)} ({round_half_up(rel, 2)}%)"


# -------------------------------------------------------------------- tables


def table_rows(reports):
    """Header and rows of the comparison table for a list of same-kind reports."""
    reports = list(reports)
    kind = reports[0].kind
    if any(r.kind != kind for r in reports):
        raise InvalidInputError("cannot tabulate reports of different kinds")
    if kind == "transfer":
        domains = list(dict.fromkeys(d for r in reports for d in r.domains()))
        header = ["Source/Target", *domains, "Source Drop", "Target Drop"]
        rows = []
        for r in reports:
            sl, m = r.meta.get("baseline", "SL"), r.meta["method"]
            row = [r.meta["source"]]
            for d in domains:
                try:
                    row.append(f"{round_half_up(r.get(sl, d), 1)} => {round_half_up(r.get(m, d), 1)}")
                except KeyError:
                    row.append("/")
            a = r.aggregates
            row.append(fmt_drop(a["source_drop"], a["source_relative_drop"]))
            row.append(fmt_drop(a["target_drop"], a["target_relative_drop"]) if "target_drop" in a else "/")
            rows.append(row)
        mean = merge_means(reports)
        rows.append(["Mean", *["/"] * len(domains),
                     fmt_drop(mean["source_drop"], mean["source_relative_drop"]),
                     fmt_drop(mean["target_drop"], mean["target_relative_drop"]) if "target_drop" in mean else "/"])
        return header, rows
    if kind == "ownership":
        methods = list(dict.fromkeys(m for r in reports for m in r.methods()))
        header = ["Source", *methods, "Avg Drop"]
        rows = []
        for r in reports:
            src = r.meta["source"]
            row = [src]
            for m in methods:
                try:
                    row.append(f"{round_half_up(r.get(m, src, True), 1)} / {round_half_up(r.get(m, src, False), 1)}")
                except KeyError:
                    row.append("/")
            row.append(round_half_up(r.aggregates["avg_attack_drop"], 1) if "avg_attack_drop" in r.aggregates else "/")
            rows.append(row)
        mean = merge_means(reports)
        if "avg_attack_drop" in mean:
            rows.append(["Mean", *["/"] * len(methods), round_half_up(mean["avg_attack_drop"], 1)])
        return header, rows
    if kind == "authorization":
        domains = list(dict.fromkeys(d for r in reports for d in r.domains()))
        header = ["Source with Patch", *[f"{d} (patch)" for d in domains], *[f"{d} (no patch)" for d in domains],
                  "Authorized", "Other", "Drop"]
        rows = []
        for r in reports:
            m = r.meta["method"]
            row = [r.meta["source"]]
            for patched in (True, False):
                for d in domains:
                    try:
                        row.append(round_half_up(r.get(m, d, patched), 1))
                    except KeyError:
                        row.append("/")
            a = r.aggregates
            row += [round_half_up(a["authorized"], 1), round_half_up(a["other"], 1), fmt_drop(a["drop"], a["relative_drop"])]
            rows.append(row)
        mean = merge_means(reports)
        rows.append(["Mean", *["/"] * (2 * len(domains)), round_half_up(mean["authorized"], 1),
                     round_half_up(mean["other"], 1), fmt_drop(mean["drop"], mean["relative_drop"])])
        return header, rows
    methods = list(dict.fromkeys(m for r in reports for m in r.methods()))
    domains = list(dict.fromkeys(d for r in reports for d in r.domains()))
    header = ["Method", *[f"{d}{' (patch)' if p else ''}" for p in (False, True) for d in domains]]
    rows = []
    for m in methods:
        row = [m]
        for p in (False, True):
            for d in domains:
                vals = [c.accuracy for r in reports for c in r.cells if c.method == m and c.eval_domain == d and c.patched == p]
                row.append(round_half_up(vals[0], 1) if vals else "/")
        rows.append(row)
    return header, rows


def merge_means(reports) -> dict:
    """Mean of each aggregate over the reports that carry it (a table's Mean row)."""
    keys = list(dict.fromkeys(k for r in reports for k in r.aggregates))
    return {k: float(np.mean([r.aggregates[k] for r in reports if k in r.aggregates])) for k in keys}


def to_markdown(reports) -> str:
    header, rows = table_rows(reports)
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(str(v) for v in row) + " |" for row in rows]
    return "\n".join(lines) + "\n"


def to_csv(reports) -> str:
    header, rows = table_rows(reports)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def emit_report(report, path, format: str = "json") -> Path:
    """Write ``report`` (or a list of reports, for table views) to ``path``."""
    path = Path(path)
    reports = report if isinstance(report, list) else [report]
    if format == "json":
        if len(reports) != 1:
            raise InvalidInputError("JSON output holds exactly one report")
        text = json.dumps(reports[0].to_dict(), indent=2, sort_keys=True) + "\n"
    elif format == "csv":
        text = to_csv(reports)
    elif format in ("markdown", "md"):
        text = to_markdown(reports)
    else:
        raise InvalidInputError(f"unknown report format {format!r}")
    path.write_text(text)
    return path


def load_report(path, check=True) -> EvalReport:
    try:
        return EvalReport.from_dict(json.loads(Path(path).read_text()), check=check)
    except ReportConsistencyError as exc:
        raise ReportConsistencyError(f"{path}: {exc}") from None
