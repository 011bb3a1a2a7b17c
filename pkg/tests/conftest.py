import numpy as np
import pytest

from ensemble_reach.model import MatrixEnsemble, ParameterGrid, parallel_compose


def mixed3_blocks(K=21):
    g = ParameterGrid.interval(0.0, 1.0, K)
    e1 = MatrixEnsemble.from_poly(g, [[[0], [0, 0, -1]], [[1], [0]]], [[[1]], [[0]]], field_kind="real")
    e2 = MatrixEnsemble.from_poly(g, [[[1, 0, 1]]], [[[1]]], field_kind="real")
    return e1, e2


@pytest.fixture
def mixed3():
    e1, e2 = mixed3_blocks()
    return parallel_compose(e1, e2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        title, status, detail, secs = ACCEPTANCE[num]
        info = ", ".join(f"{k}={v}" for k, v in detail.items())
        terminalreporter.write_line(f"[{status}] criterion {num:2d}: {title} ({info}; {secs:.1f}s)")
