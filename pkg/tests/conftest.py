import re
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lexsparse.vocab import Vocabulary  # noqa: E402

_criteria: dict[int, list[str]] = {}
_notes: list[str] = []
_CRITERION = re.compile(r"test_acceptance\.py::test_c(\d+)_")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def report():
    """Record a measured value to print in the acceptance summary."""
    return _notes.append


@pytest.fixture
def small_vocab():
    return Vocabulary(["the", "cat", "dog", "sat", "mat", "on", "a", "zebra"])


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    m = _CRITERION.search(report.nodeid)
    if m:
        _criteria.setdefault(int(m.group(1)), []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        outcomes = _criteria[n]
        ok = all(o == "passed" for o in outcomes)
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'} ({len(outcomes)} checks)")
    for note in _notes:
        terminalreporter.write_line(f"  {note}")
