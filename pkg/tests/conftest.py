import numpy as np
import pytest

from cqitestbed.gridio import ScenarioMeta, SinrGrid


def make_grid(data, name="test", dt_ms=1.0):
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    return SinrGrid(data=data, meta=ScenarioMeta(name=name, n_rb=data.shape[1]), dt_ms=dt_ms)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Acceptance criteria record one verdict line each; they are echoed at the end
# of the run so they show up in plain `pytest -v` output.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
