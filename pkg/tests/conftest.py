import numpy as np
import pytest

from treevimp.tree import tree_from_nested

ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, passed: bool, text: str):
    line = f"[{number}] {'PASS' if passed else 'FAIL'} {text}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture
def three_leaf_tree():
    """Root splits x0; left terminal 0 (depth 1), right splits x1 into 2 and 4."""
    return tree_from_nested(2, ("split", 0, 0.5, 0.0, ("split", 1, 0.5, 2.0, 4.0)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
