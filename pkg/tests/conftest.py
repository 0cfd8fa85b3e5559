import json
import pathlib

import pytest

DATA = pathlib.Path(__file__).with_name("data")


@pytest.fixture(scope="session")
def frozen():
    return json.loads((DATA / "frozen_oracles.json").read_text())


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
