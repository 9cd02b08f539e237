import pytest
from acceptance_log import ACCEPTANCE_LINES

from hotet.icnn import IcnnSpec
from hotet.trainer import HotetModel


def tiny_model(d: int = 2, seed: int = 0) -> HotetModel:
    return HotetModel(d, IcnnSpec(d, (16, 16)), ctx_dim=16, blocks=1, heads=2, head_dim=4, ffn_dim=16,
                      hyper_hidden=(32,), seed=seed)


@pytest.fixture
def tiny():
    return tiny_model


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
