import math

import pytest
import torch

from cuti.errors import InvalidInputError
from cuti.objectives import LossConfig, ablation_loss, cuti_loss, kl_per_sample, kl_to_label, smoothed_labels


def _p(rows):
    return torch.tensor(rows, dtype=torch.float64)


def _oracle_kl(p, label, eps):
    k = len(p)
    q = [eps / (k - 1)] * k
    q[label] = 1 - eps
    return sum(qi * math.log(qi / pi) for qi, pi in zip(q, p))


def test_smoothed_label_equals_itself():
    y = torch.tensor([0, 3, 1])
    q = smoothed_labels(y, 4, 0.05)
    assert q.sum(1).tolist() == pytest.approx([1.0] * 3)
    assert kl_to_label(q, y, 0.05).item() == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("label", [0, 1])
@pytest.mark.parametrize("eps", [0.05, 0.2])
def test_uniform_two_class(label, eps):
    expected = _oracle_kl([0.5, 0.5], label, eps)
    assert kl_to_label(_p([[0.5, 0.5]]), torch.tensor([label]), eps).item() == pytest.approx(expected, abs=1e-12)


def test_hand_value():
    expected = 0.95 * math.log(0.95 / 0.7) + 0.05 * math.log(0.05 / 0.3)
    assert kl_to_label(_p([[0.7, 0.3]]), torch.tensor([0]), 0.05).item() == pytest.approx(expected, abs=1e-12)


def test_batch_mean_and_floor():
    p = _p([[0.7, 0.3], [0.0, 1.0]])
    per = kl_per_sample(p, torch.tensor([0, 0]), 0.05)
    assert per[1].item() == pytest.approx(0.95 * math.log(0.95 / 1e-12) + 0.05 * math.log(0.05), rel=1e-12)
    assert kl_to_label(p, torch.tensor([0, 0]), 0.05).item() == pytest.approx(per.mean().item())


def test_label_validation():
    with pytest.raises(InvalidInputError):
        kl_to_label(_p([[0.5, 0.5]]), torch.tensor([2]))
    with pytest.raises(InvalidInputError):
        kl_to_label(_p([[0.5, 0.5]]), torch.tensor([0, 1]))


def test_cuti_loss_zero_at_smoothed_labels():
    y = torch.tensor([0, 2, 1])
    q = smoothed_labels(y, 3, 0.05)
    assert cuti_loss(q, y, q, y, LossConfig()).item() == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("mode", ["batch", "sample"])
def test_clamp_active(mode):
    cfg = LossConfig(clamp=3.0, clamp_mode=mode)
    y = torch.tensor([0])
    q = smoothed_labels(y, 2, cfg.epsilon_y)
    far = _p([[1e-20, 1.0]])
    assert kl_to_label(far, y).item() > 10
    assert cuti_loss(q, y, far, y, cfg).item() == pytest.approx(-3.0, abs=1e-12)


def test_composed_oracle():
    cfg = LossConfig(clamp=3.0)
    a = _oracle_kl([0.7, 0.3], 0, 0.05)
    b = _oracle_kl([0.5, 0.5], 1, 0.05)
    val = cuti_loss(_p([[0.7, 0.3]]), torch.tensor([0]), _p([[0.5, 0.5]]), torch.tensor([1]), cfg)
    assert val.item() == pytest.approx(a - min(b, 3.0), abs=1e-12)


def test_sample_clamp_differs_from_batch_clamp():
    y = torch.tensor([0, 0])
    p_x = _p([[1e-30, 1.0], [0.9, 0.1]])
    q = smoothed_labels(y, 2, 0.05)
    per = [_oracle_kl([1e-12, 1.0], 0, 0.05), _oracle_kl([0.9, 0.1], 0, 0.05)]
    batch = cuti_loss(q, y, p_x, y, LossConfig(clamp=3.0, clamp_mode="batch")).item()
    sample = cuti_loss(q, y, p_x, y, LossConfig(clamp=3.0, clamp_mode="sample")).item()
    assert batch == pytest.approx(-3.0)
    assert sample == pytest.approx(-(min(per[0], 3.0) + min(per[1], 3.0)) / 2)


def test_ablation_variants():
    cfg = LossConfig(clamp=2.0)
    y = torch.tensor([1, 0])
    q = smoothed_labels(y, 3, cfg.epsilon_y)
    for v in ("L1", "L2", "L3"):
        assert ablation_loss(q, y, q, y, q, y, v, cfg).item() == pytest.approx(0.0, abs=1e-12)
    far = _p([[1.0, 1e-20, 0.0], [0.0, 1.0, 0.0]])
    s = kl_to_label(q, y).item()
    assert ablation_loss(q, y, far, y, far, y, "L3", cfg).item() == pytest.approx(s - 4.0)
    p_s, p_t = _p([[0.2, 0.5, 0.3], [0.6, 0.2, 0.2]]), _p([[0.3, 0.3, 0.4], [0.1, 0.1, 0.8]])
    assert torch.equal(ablation_loss(p_s, y, far, y, p_t, y, "L1", cfg), cuti_loss(p_s, y, p_t, y, cfg))
    assert torch.equal(ablation_loss(p_s, y, p_t, y, far, y, "L2", cfg), cuti_loss(p_s, y, p_t, y, cfg))
    with pytest.raises(InvalidInputError):
        ablation_loss(q, y, q, y, q, y, "L4", cfg)


def test_phase_schedule():
    cfg = LossConfig()
    assert [cfg.phase(e) for e in range(4)] == ["cuti", "target", "cuti", "target"]
    assert LossConfig(phase_offset=1).phase(0) == "target"


@pytest.mark.parametrize("kwargs", [dict(variant="L9"), dict(epsilon_y=0.0), dict(clamp=0.0),
                                    dict(clamp=float("inf")), dict(clamp_mode="x"), dict(phase_offset=2)])
def test_config_validation(kwargs):
    with pytest.raises(InvalidInputError):
        LossConfig(**kwargs)
