import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

import _factories  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if _factories.ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _factories.ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
