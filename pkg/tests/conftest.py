import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("suite", max_examples=50, deadline=None)
settings.load_profile("suite")

_ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def make_mask(data, spacing=(1.0, 1.0, 1.0)):
    from pvseval.nifti import BinaryMask

    affine = np.zeros((3, 4))
    affine[0, 0], affine[1, 1], affine[2, 2] = spacing
    return BinaryMask(data=np.asarray(data, dtype=bool), spacing=spacing, affine=affine)


@pytest.fixture
def mask_factory():
    return make_mask


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    module = getattr(report, "fspath", "") or report.nodeid
    if "test_acceptance" in str(module):
        _ACCEPTANCE_RESULTS.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _ACCEPTANCE_RESULTS:
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{status} {name}")
