import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sdhcsim.card import CardModel, CardTiming  # noqa: E402
from sdhcsim.cost import CostModel  # noqa: E402
from sdhcsim.driver import SDHCDriver  # noqa: E402
from sdhcsim.system import System  # noqa: E402


def make_system(regime="ideal", capacity=8192, timing=None, host_freq_hz=50e6, **kw):
    card = CardModel(capacity, timing=timing or CardTiming())
    return System(card, CostModel.for_regime(regime, host_freq_hz=host_freq_hz), **kw)


def ready_driver(regime="ideal", **kw):
    system = make_system(regime, **kw)
    driver = SDHCDriver(system)
    driver.init()
    return system, driver


@pytest.fixture
def ideal():
    return ready_driver("ideal")


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
