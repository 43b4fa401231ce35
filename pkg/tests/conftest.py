import numpy as np
import pytest

from ranslice.config import default_config


@pytest.fixture(scope="session")
def cfg():
    return default_config()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running experiment")


def pytest_terminal_summary(terminalreporter):
    from criteria import RESULTS
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS, key=lambda k: (int(k.split()[0].rstrip("abcd")), k)):
        ok, detail = RESULTS[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
