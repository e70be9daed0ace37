"""Shared fixtures and the acceptance summary hook."""

from __future__ import annotations

import os

import numpy as np
import pytest
from hypothesis import settings

from dflow.space import FiniteSpace

settings.register_profile("default", max_examples=40, deadline=None)
settings.register_profile("thorough", max_examples=400, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def path16():
    return FiniteSpace.path(16)


@pytest.fixture
def cycle5():
    return FiniteSpace.cycle(5)
