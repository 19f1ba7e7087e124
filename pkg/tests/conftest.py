import numpy as np
import pytest

from segdense.data import SynthConfig, synthesize_dataset, to_model_resolution
from segdense.model import BackboneConfig, build_model

from ._report import ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def tiny_model():
    return build_model(BackboneConfig.tiny(), branches=4, seed=0)


@pytest.fixture(scope="session")
def synth_small():
    """Four small synthetic eyes (128x96) with masks."""
    params = SynthConfig(width=128, height=96, pupil_radius=(7, 12), iris_radius=(22, 30), center_jitter=6)
    return synthesize_dataset(4, seed=3, params=params)


@pytest.fixture(scope="session")
def synth_full():
    return synthesize_dataset(8, seed=0)


@pytest.fixture(scope="session")
def synth_full_224(synth_full):
    return [to_model_resolution(s) for s in synth_full]


def random_masks(rng, n, h, w, p=0.5):
    return [(rng.random((h, w)) < p).astype(np.uint8) for _ in range(n)]
