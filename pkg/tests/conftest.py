import numpy as np
import pytest

from ipclab.rng import stream


@pytest.fixture
def rng(request):
    """A stream keyed by the test name, so every test is reproducible on its own."""
    return stream(12345, request.node.name)


def ks_uniform(u) -> float:
    u = np.sort(np.asarray(u))
    n = u.size
    grid = np.arange(1, n + 1) / n
    return float(max(np.max(grid - u), np.max(u - (grid - 1 / n))))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
