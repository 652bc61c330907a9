import numpy as np
import pytest

from styletrans.network import ModelParams
from styletrans.verify import toy_config, toy_images


ACCEPTANCE_LINES = []


def record_criterion(num, name, passed, detail=""):
    status = "PASS" if passed else "FAIL"
    extra = f"  ({detail})" if detail else ""
    line = f"[{status}] criterion {num:2d}: {name}{extra}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def toy_cfg():
    return toy_config()


@pytest.fixture
def toy_params(toy_cfg):
    return ModelParams.initialize(toy_cfg, seed=0, dtype=np.float32)


@pytest.fixture
def toy_pair():
    return toy_images(32)
