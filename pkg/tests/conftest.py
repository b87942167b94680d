import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")

FS = 16000


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def default_scene():
    from srocomp.room import SceneConfig
    return SceneConfig()


@pytest.fixture(scope="session")
def default_rirs(default_scene):
    from srocomp.room import simulate_rirs
    return simulate_rirs(default_scene)


# One line per acceptance criterion, filled by test_acceptance.py and printed
# in the terminal summary whatever the capture mode.
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
