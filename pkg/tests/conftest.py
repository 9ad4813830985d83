import numpy as np
import pytest

from bikadeblur.imageio import write_image
from bikadeblur.synthetic import dead_leaves


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def textured():
    """256x256 RGB dead-leaves texture."""
    return dead_leaves(256, seed=3)


@pytest.fixture
def sharp_dir(tmp_path):
    d = tmp_path / "sharp"
    d.mkdir()
    for i in range(4):
        write_image(d / f"img{i}.png", dead_leaves(160, seed=10 + i))
    return d


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line per acceptance criterion.

    Call ``criterion(n, passed, detail)`` before asserting; a test that dies
    before recording is logged as FAIL.
    """
    recorded = []

    def record(n, passed, detail=""):
        line = f"criterion {n:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        recorded.append(line)
        _LINES.append(line)

    yield record
    if not recorded:
        line = f"{request.node.name}: FAIL  (raised before recording a result)"
        print(line)
        _LINES.append(line)


_LINES = []


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
