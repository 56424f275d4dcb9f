import os

import pytest
import torch

torch.set_num_threads(1)

ACCEPTANCE_LINES: list[str] = []

TOY_DIR = os.path.join(os.path.dirname(__file__), "..", "src", "fscx", "toys")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(12345)
