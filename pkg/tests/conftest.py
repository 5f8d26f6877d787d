import os

import pytest

_VERDICTS = []


def pytest_addoption(parser):
    parser.addoption("--skip-slow", action="store_true",
                     help="skip the desk-scale training criteria")


def pytest_collection_modifyitems(config, items):
    if not (config.getoption("--skip-slow") or os.environ.get("TTRL_SKIP_SLOW")):
        return
    skip = pytest.mark.skip(reason="desk-scale training disabled")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def verdict():
    """Record one acceptance line; printed in the terminal summary."""

    def record(number, passed, detail):
        _VERDICTS.append((number, passed, detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(_VERDICTS, key=lambda v: v[0]):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
