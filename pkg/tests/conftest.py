import numpy as np
import pytest

from lgstime.model import ModelConfig

DESK = dict(n_features=3, input_len=12, pred_len=1, hidden=8, d_model=8, heads=2, sparse_factor=2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def desk_config():
    return ModelConfig(**DESK)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report_criterion():
    def emit(number: int, title: str, passed: bool, detail: str):
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
