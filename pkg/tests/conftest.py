import numpy as np
import pytest

from clipcl.synthdata import SceneConfig, generate_dataset


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(24, SceneConfig(count_range=(0, 12)), seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def record_criterion(number, name, ok, detail=""):
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] C{number} {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1][1:])):
            terminalreporter.write_line(line)
