import math
import os
import sys

import pytest

from ncstab.quantizer import ScalarUncertainty

# hypothesis profile: deterministic, modest example counts
try:
    from hypothesis import settings

    settings.register_profile("repo", max_examples=200, deadline=None, derandomize=True)
    settings.load_profile("repo")
except ImportError:  # pragma: no cover
    pass


@pytest.fixture
def fig3a():
    """Scalar uncertainty of the N=8 quantizer example (a*=3, eps=0.5)."""
    return ScalarUncertainty(3.0, 0.5, 1.0, 0.0)


@pytest.fixture
def fig2():
    return dict(a_star=2.0, b_star=1.0, p=0.05, q=0.9)


# acceptance criteria append "PASS/FAIL n: ..." lines here; they are echoed
# after the run so they survive output capturing
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
