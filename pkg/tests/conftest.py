import random

import pytest

from uwram.machine import Machine, MachineConfig


def make_machine(w, K=None, validate=True, **kw):
    return Machine(MachineConfig(w=w, K=w if K is None else K, **kw), validate=validate)


@pytest.fixture
def rng():
    return random.Random(12345)


# One line per acceptance criterion, filled in by test_acceptance.py and
# repeated in the terminal summary so it shows without -s.
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(num: int, ok: bool, detail: str) -> bool:
    line = f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[num] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for num in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[num])
