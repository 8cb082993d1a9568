import os
from pathlib import Path

import numpy as np
import pytest

_CRITERIA: list[tuple[str, str, str]] = []


@pytest.fixture
def criterion():
    """Record an acceptance criterion outcome for the end-of-run summary."""

    def record(name: str, passed: bool | None, detail: str = ""):
        status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        _CRITERIA.append((status, name, detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for status, name, detail in _CRITERIA:
        terminalreporter.write_line(f"{status} {name}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def dataset_dir(sub: str) -> Path | None:
    root = os.environ.get("DIM_DATASET_ROOT")
    if not root:
        return None
    p = Path(root) / sub
    return p if p.is_dir() else None
