# tests/conftest.py
from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from src.config.settings import Settings
from src.core.probability import DistortionMatrix, JointTable
from src.core.rdp_solver import ProblemSpec, SolverConfig

ROOT = Path(__file__).resolve().parent.parent
PROBLEMS = ROOT / "problems"


def binary_spec(p1: float = 0.5) -> ProblemSpec:
    """Binary source without side information (|Z| = 1), Hamming distortion."""
    return ProblemSpec(JointTable(np.array([[1.0 - p1], [p1]])), 2, DistortionMatrix.hamming(2))


def h_b(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return float(-p * np.log2(p) - (1 - p) * np.log2(1 - p))


@pytest.fixture(autouse=True)
def _fresh_settings():
    Settings.reset()
    yield
    Settings.reset()


@pytest.fixture
def problems_dir() -> Path:
    return PROBLEMS


@pytest.fixture
def uniform_binary() -> ProblemSpec:
    return binary_spec(0.5)


@pytest.fixture
def biased_binary() -> ProblemSpec:
    return binary_spec(0.3)


@pytest.fixture
def cfg() -> SolverConfig:
    return SolverConfig()
