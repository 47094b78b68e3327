import numpy as np
import pytest

from safeadapt.games import GridDuel, biased_rps, rps


@pytest.fixture(scope="session")
def grid():
    return GridDuel()


@pytest.fixture(scope="session")
def small_grid():
    return GridDuel(size=3, horizon=6, ego_start=(0, 1), oppo_start=(2, 1), target=(2, 1))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["rps", "biased_rps"])
def matrix_game(request):
    return {"rps": rps, "biased_rps": biased_rps}[request.param]()


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        ok, detail, seconds = mod.RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  "
                                    f"({seconds:.1f}s)  {detail}")
