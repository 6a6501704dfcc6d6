import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

from hypothesis import settings

settings.register_profile("default", max_examples=100, deadline=None, derandomize=True)
settings.load_profile("default")

from helpers import ACCEPTANCE_RESULTS


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        ok, text = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"AC{key:<3} {'PASS' if ok else 'FAIL'}  {text}")
