import json
import math

import numpy as np
import pytest
import torch

from cuti.data import LabeledBatch
from cuti.errors import InvalidInputError, ReportConsistencyError
from cuti.evaluation import (EvalReport, accuracy, authorization_metrics, avg_attack_drop, check_consistency,
                             drop_metrics, emit_report, fmt_drop, load_report, merge_means, round_half_up,
                             table_rows, to_csv, to_markdown)
from reference_tables import (AUTHORIZATION_MT, DIGITS, OWNERSHIP_MT, TRANSFER_ROWS, authorization_report,
                              ownership_report, transfer_report)


def test_transfer_row_target_drop():
    row = TRANSFER_ROWS["MT"]
    d = drop_metrics([row[k][0] for k in ("US", "SN", "MM")], [row[k][1] for k in ("US", "SN", "MM")])
    assert d.mean_drop == pytest.approx(61.00, abs=0.005)
    assert d.mean_relative_drop == pytest.approx(88.56, abs=0.005)
    assert fmt_drop(*d[:2]) == "61.00 (88.56%)"


def test_transfer_row_source_drop():
    d = drop_metrics([99.2], [99.1])
    assert fmt_drop(*d[:2]) == "0.10 (0.10%)"


def test_relative_drop_is_mean_of_ratios():
    sl, m = [98.0, 38.2, 67.8], [6.7, 5.6, 8.7]
    ratio_of_means = (np.mean(sl) - np.mean(m)) / np.mean(sl) * 100
    assert abs(drop_metrics(sl, m).mean_relative_drop - ratio_of_means) > 1.0


def test_equal_accuracies_and_zero_baseline():
    assert drop_metrics([50.0, 60.0], [50.0, 60.0])[:2] == (0.0, 0.0)
    d = drop_metrics([0.0, 50.0], [0.0, 25.0])
    assert d.excluded == (0,) and d.mean_relative_drop == pytest.approx(50.0)
    assert math.isnan(drop_metrics([0.0], [0.0]).mean_relative_drop)
    with pytest.raises(InvalidInputError):
        drop_metrics([1.0], [1.0, 2.0])


def test_attack_drop():
    rows = [OWNERSHIP_MT[k] for k in ("FTAL", "RTAL", "EWC", "AU", "OVERWRITE")]
    assert avg_attack_drop(rows) == pytest.approx(89.94)
    assert round_half_up(avg_attack_drop(rows), 1) == "89.9"
    assert avg_attack_drop([(10.0, 90.0)] * 3) == 80.0
    assert avg_attack_drop([(55.0, 55.0), (3.0, 3.0)]) == 0.0


def test_authorization_row():
    other = list(AUTHORIZATION_MT[False].values()) + [v for k, v in AUTHORIZATION_MT[True].items() if k != "MT"]
    m = authorization_metrics(100.0, other)
    assert round_half_up(m.authorized, 1) == "100.0"
    assert round_half_up(m.other, 1) == "13.7"
    assert fmt_drop(m.drop, m.relative_drop) == "86.27 (86.27%)"


def test_mean_row_across_transfer_rows():
    mean = merge_means([transfer_report(s) for s in DIGITS])
    assert fmt_drop(mean["source_drop"], mean["source_relative_drop"]) == "0.13 (0.13%)"
    assert fmt_drop(mean["target_drop"], mean["target_relative_drop"]) == "55.94 (84.94%)"


def test_round_half_up():
    assert round_half_up(0.125, 2) == "0.13"
    assert round_half_up(2.5, 0) == "3"
    assert round_half_up(89.94, 1) == "89.9"
    assert round_half_up(-0.125, 2) == "-0.13"


def test_table_layouts():
    header, rows = table_rows([transfer_report(s) for s in DIGITS])
    assert header[0] == "Source/Target" and [r[0] for r in rows] == [*DIGITS, "Mean"]
    assert rows[0][1] == "99.2 => 99.1" and rows[0][-1] == "61.00 (88.56%)"
    assert rows[-1][-2:] == ["0.13 (0.13%)", "55.94 (84.94%)"]
    header, rows = table_rows([ownership_report()])
    assert rows[0][header.index("CUTI")] == "11.3 / 99.1" and rows[0][-1] == "89.9"
    header, rows = table_rows([authorization_report()])
    assert rows[0][-1] == "86.27 (86.27%)"
    md = to_markdown([transfer_report(s) for s in DIGITS])
    assert sum(line.startswith(f"| {s} ") for s in DIGITS for line in md.splitlines()) == 4
    assert to_csv([ownership_report()]).splitlines()[0].startswith("Source,SL,CUTI,FTAL")


def test_json_roundtrip(tmp_path):
    for report in (transfer_report("SN"), ownership_report(), authorization_report()):
        path = emit_report(report, tmp_path / "r.json")
        back = load_report(path)
        assert back.cells == report.cells and back.aggregates == report.aggregates
        assert back.meta["format"] == "cuti-report-1"
        assert set(json.loads(path.read_text())) == {"meta", "cells", "aggregates"}


def test_tampered_aggregate_detected(tmp_path):
    path = emit_report(ownership_report(), tmp_path / "r.json")
    doc = json.loads(path.read_text())
    doc["aggregates"]["avg_attack_drop"] = 12.0
    path.write_text(json.dumps(doc))
    with pytest.raises(ReportConsistencyError, match="avg_attack_drop"):
        load_report(path)
    r = authorization_report()
    r.cells.pop()
    with pytest.raises(ReportConsistencyError):
        check_consistency(r)


def test_cell_bounds():
    with pytest.raises(InvalidInputError):
        EvalReport().add("SL", "a", "a", False, 100.5)


class _Fixed(torch.nn.Module):
    def __init__(self, logits):
        super().__init__()
        self.w = torch.nn.Parameter(torch.zeros(1))
        self.logits = torch.tensor(logits)

    def forward(self, x):
        return self.logits[: len(x)] + 0 * self.w


def test_accuracy_cases():
    imgs = np.zeros((5, 1, 2, 2), dtype=np.float32)
    split = LabeledBatch(imgs, [0, 1, 2, 1, 0], num_classes=3)
    logits = [[2.0, 0, 0], [0, 1.0, 0], [0, 3.0, 0], [0, 0, 1.0], [5.0, 0, 0]]
    correct = sum(int(np.argmax(l) == y) for l, y in zip(logits, [0, 1, 2, 1, 0]))
    assert accuracy(_Fixed(logits), split) == 100.0 * correct / 5
    assert accuracy(_Fixed([[1.0, 0, 0]] * 5).eval(), LabeledBatch(imgs, [0] * 5, num_classes=3)) == 100.0
    balanced = LabeledBatch(np.zeros((20, 1, 2, 2), dtype=np.float32), np.arange(20) % 10, num_classes=10)
    const = lambda x: torch.nn.functional.one_hot(torch.zeros(len(x), dtype=torch.long), 10).float()
    assert accuracy(const, balanced) == 10.0
    with pytest.raises(InvalidInputError):
        accuracy(const, balanced.subset(np.arange(0)))
