import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def disk_mask(h, w, cy, cx, r):
    rows, cols = np.mgrid[0:h, 0:w]
    return (rows - cy) ** 2 + (cols - cx) ** 2 <= r * r


def dice(a, b):
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    return 2.0 * np.logical_and(a, b).sum() / (a.sum() + b.sum())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import CRITERIA
    except ImportError:
        return
    outcomes = {}
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            if "test_acceptance.py" not in rep.nodeid:
                continue
            if rep.when == "call" or key == "error":
                outcomes[rep.nodeid.split("::")[-1]] = "PASS" if key == "passed" else "FAIL"
    if not outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for name, text in CRITERIA.items():
        if name in outcomes:
            terminalreporter.write_line(f"{outcomes[name]}  criterion {text}")
