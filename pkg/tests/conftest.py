from __future__ import annotations

import numpy as np
import pytest

from bonemill.config import ExperimentConfig, SceneConfig
from bonemill.stereo import CameraIntrinsics


@pytest.fixture
def k() -> CameraIntrinsics:
    return CameraIntrinsics()


@pytest.fixture
def scene():
    return SceneConfig().transform()


@pytest.fixture
def default_cfg() -> ExperimentConfig:
    return ExperimentConfig()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log() -> list[str]:
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
