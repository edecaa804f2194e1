import numpy as np
import pytest
import torch

from cuti.data import LabeledBatch
from cuti.errors import InvalidInputError
from cuti.ip_protocols import (AttackSpec, PatchSpec, apply_patch, authorization_mixture, parameter_displacement,
                               run_applicability_authorization, run_attack, run_ownership_verification)
from cuti.training import SynthConfig, TrainConfig, train_sl


@pytest.fixture(scope="module")
def trained(tiny_domains):
    from cuti.backbone import BackboneSpec, BlockSpec

    spec = BackboneSpec([BlockSpec(4), BlockSpec(8)], num_classes=10, input_shape=(3, 16, 16), hidden=16)
    return train_sl(tiny_domains[3].train, spec, TrainConfig(max_epochs=3, batch_size=16))


def test_patch_pixel_count(rng):
    imgs = rng.random((4, 3, 32, 32)).astype(np.float32) * 0.5
    out = apply_patch(imgs, PatchSpec(size=8))
    assert (out != imgs).sum() == 4 * 64 * 3
    assert np.all(out[:, :, 24:, 24:] == 1.0)


def test_patch_identity_idempotence_and_corners(rng):
    imgs = rng.random((2, 1, 10, 10)).astype(np.float32)
    assert np.array_equal(apply_patch(imgs, PatchSpec(size=0)), imgs)
    p = PatchSpec(size=3, corner="top_left", offset=(1, 2), fill="texture", seed=4)
    once = apply_patch(imgs, p)
    assert np.array_equal(apply_patch(once, p), once)
    assert not np.array_equal(once[:, :, 1:4, 2:5], imgs[:, :, 1:4, 2:5])
    assert np.array_equal(once[:, :, 4:, :], imgs[:, :, 4:, :])
    assert np.array_equal(imgs, apply_patch(imgs, PatchSpec(size=0)))
    batch = LabeledBatch(imgs, [0, 1])
    assert np.array_equal(apply_patch(batch, p).images, once)


@pytest.mark.parametrize("kw", [dict(size=-1), dict(corner="middle"), dict(fill="stripes"), dict(value=2.0)])
def test_patch_validation(kw):
    with pytest.raises(InvalidInputError):
        PatchSpec(**kw)


def test_patch_must_fit():
    with pytest.raises(InvalidInputError):
        apply_patch(np.zeros((1, 1, 4, 4), dtype=np.float32), PatchSpec(size=5))


def test_attack_spec_validation():
    for kw in (dict(kind="PRUNE"), dict(kind="FTAL", data_fraction=0.0), dict(kind="FTAL", epochs=-1),
               dict(kind="EWC", ewc_lambda=-1.0), dict(kind="AU", aux_source="imagenet")):
        with pytest.raises(InvalidInputError):
            AttackSpec(**kw)


@pytest.mark.parametrize("kind", ["FTAL", "RTAL", "EWC", "AU", "OVERWRITE"])
def test_zero_budget_is_identity(trained, tiny_domains, kind):
    attacked, report = run_attack(trained, AttackSpec(kind, epochs=0), tiny_domains[3], PatchSpec(size=4))
    assert parameter_displacement(trained, attacked) == 0.0
    assert report.get(kind, "noisy", False) == report.get("CUTI", "noisy", False)
    assert report.get(kind, "noisy", True) == report.get("CUTI", "noisy", True)


def test_attack_does_not_mutate_input(trained, tiny_domains):
    before = {k: v.clone() for k, v in trained.model.state_dict().items()}
    attacked, report = run_attack(trained, AttackSpec("RTAL", epochs=1), tiny_domains[3], PatchSpec(size=4))
    assert all(torch.equal(before[k], v) for k, v in trained.model.state_dict().items())
    assert parameter_displacement(trained, attacked) > 0
    assert set(report.aggregates) == {"gap.CUTI", "gap.RTAL", "avg_attack_drop"}
    assert not attacked.model.has_generators


def test_ewc_penalty_limits_displacement(trained, tiny_domains):
    patch = PatchSpec(size=4)
    moves = []
    for lam in (0.0, 1.0, 10.0, 100.0):
        attacked, _ = run_attack(trained, AttackSpec("EWC", epochs=2, ewc_lambda=lam, data_fraction=1.0),
                                 tiny_domains[3], patch)
        moves.append(parameter_displacement(trained, attacked))
    assert all(a >= b for a, b in zip(moves, moves[1:])), moves
    spec = AttackSpec("EWC", epochs=2, ewc_lambda=1e12, data_fraction=1.0)
    pinned, _ = run_attack(trained, spec, tiny_domains[3], patch)
    ref = dict(trained.model.named_parameters())
    # with Adam each step moves a parameter by about lr at most, so the anchor holds to within one step
    worst = max((p - ref[n]).abs().max().item() for n, p in pinned.model.named_parameters())
    assert worst <= spec.lr


def test_overwrite_reports_success(trained, tiny_domains):
    _, report = run_attack(trained, AttackSpec("OVERWRITE", epochs=1), tiny_domains[3], PatchSpec(size=4))
    assert 0.0 <= report.meta["overwrite_success"] <= 100.0


def test_ownership_report_schema(tiny_domains, tiny_spec):
    cfg = TrainConfig(max_epochs=2, batch_size=16)
    report, models = run_ownership_verification(tiny_domains[3], tiny_spec, cfg, PatchSpec(size=4), return_models=True)
    assert set(models) == {"CUTI", "SL"}
    assert report.kind == "ownership"
    for m in ("SL", "CUTI"):
        gap = report.get(m, "noisy", False) - report.get(m, "noisy", True)
        assert report.aggregates[f"gap.{m}"] == pytest.approx(gap)


def test_authorization_grid_shape(tiny_domains, tiny_spec):
    cfg = TrainConfig(max_epochs=2, batch_size=16)
    report = run_applicability_authorization(tiny_domains[3], tiny_spec, cfg, PatchSpec(size=4), tiny_domains)
    assert len(report.cells) == len(tiny_domains) * 2
    assert report.aggregates["authorized"] == report.get("CUTI", "noisy", True)
    others = [c.accuracy for c in report.cells if not (c.eval_domain == "noisy" and c.patched)]
    assert report.aggregates["other"] == pytest.approx(np.mean(others))


def test_authorization_mixture_composition(tiny_domains):
    src = tiny_domains[3].train
    mix = authorization_mixture(src, PatchSpec(size=4), SynthConfig(), 0)
    assert len(mix) == 3 * len(src) and mix.domain_tag == "target"
    assert np.array_equal(mix.images[: len(src)], src.images)
    assert np.all(mix.images[2 * len(src):, :, -4:, -4:] == 1.0)
