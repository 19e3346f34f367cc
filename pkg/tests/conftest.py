from __future__ import annotations

import numpy as np
import pytest

from pushrelabel_ot import AssignmentInstance


def random_instance(n_a: int, n_b: int, seed: int, levels: int | None = None) -> AssignmentInstance:
    """Random costs in [0, 1]; ``levels`` snaps them to a coarse grid to force ties."""
    rng = np.random.default_rng(seed)
    c = rng.random((n_a, n_b))
    if levels:
        c = np.round(c * levels) / levels
    return AssignmentInstance(c)


@pytest.fixture
def rand_inst():
    return random_instance


# acceptance criteria report: test_acceptance.py fills this, the summary hook prints it
ACCEPTANCE: dict[str, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        status, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key:>3} {status:4s} {detail}")
