import numpy as np
import pytest
import torch

from cuti.backbone import BackboneSpec, BlockSpec
from cuti.data import SyntheticSpec, make_synthetic_domains


@pytest.fixture
def tiny_spec():
    return BackboneSpec([BlockSpec(4), BlockSpec(8)], num_classes=10, input_shape=(3, 16, 16), hidden=16)


@pytest.fixture(scope="session")
def tiny_domains():
    return make_synthetic_domains(SyntheticSpec(n_per_class=12, image_size=16, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(0)


def pytest_terminal_summary(terminalreporter):
    from acceptance_support import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
