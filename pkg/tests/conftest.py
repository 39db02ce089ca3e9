import pathlib

import pytest

from wdlab.constants import ConstantsBundle
from wdlab.kernel import build_kernel

CONFIG_DIR = pathlib.Path(__file__).resolve().parents[1] / "src" / "wdlab" / "configs"
BUNDLE_D3 = CONFIG_DIR / "bundle_d3.json"


@pytest.fixture(scope="session")
def K3():
    return build_kernel(3)


@pytest.fixture(scope="session")
def K4():
    return build_kernel(4)


@pytest.fixture(scope="session")
def bundle3():
    return ConstantsBundle.load(BUNDLE_D3)


@pytest.fixture(scope="session")
def beta_half(bundle3):
    return bundle3.beta


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
