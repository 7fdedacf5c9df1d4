import sys
from pathlib import Path

import pytest

from engn.model import shipped_raw, validate_scenario

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def shipped():
    def load(name, **changes):
        raw = shipped_raw(name)
        raw.update(changes)
        return validate_scenario(raw)
    return load


@pytest.fixture
def traces_dir():
    return ROOT / "traces"


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = mod.summary_lines() if mod is not None else []
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
