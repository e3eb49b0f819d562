import numpy as np
import pytest
import torch

from rbsr.model import ModelConfig

torch.set_num_threads(1)

TINY = ModelConfig(channels=16, encoder_blocks=2, fusion_blocks=4, upsampler_blocks=2,
                   deform_groups=4, flow_width=8)
MICRO = ModelConfig(channels=8, encoder_blocks=1, fusion_blocks=1, upsampler_blocks=1,
                    deform_groups=2, flow_width=8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    return TINY


@pytest.fixture
def micro_cfg():
    return MICRO


def seeded_model(cfg, seed=0, randomize=False, std=0.05):
    """Build an RBSR; ``randomize`` also overwrites the zero-initialized tensors."""
    from rbsr.model import RBSR

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = RBSR(cfg)
        if randomize:
            with torch.no_grad():
                for p in model.parameters():
                    if torch.count_nonzero(p) == 0:
                        p.normal_(0.0, std)
    return model.eval()


# acceptance reporting ------------------------------------------------------------

ACCEPTANCE_LINES = []


def acceptance_line(criterion, name, passed, detail=""):
    line = f"[criterion {criterion}] {'PASS' if passed else 'FAIL'}  {name}  {detail}".rstrip()
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
