"""Pytest plumbing for the acceptance gate.

The acceptance tests each record one ``[criterion NN] PASS/FAIL`` verdict
line. Output capture would normally swallow those for passing tests, so the
hooks below replay every recorded line in a terminal-summary section, and
synthesize a FAIL line for any criterion test that died before reaching its
verdict (an unconverged run, a crashed experiment, ...).
"""

import re
import sys

import pytest

_errored = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when != "call" or not rep.failed:
        return
    m = re.match(r"test_criterion_(\d+)", item.name)
    if m:
        _errored[int(m.group(1))] = (
            f"[criterion {int(m.group(1)):02d}] FAIL: test errored or "
            "assertion raised; see the report above"
        )


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    mod = sys.modules.get("test_acceptance") or sys.modules.get(
        "tests.test_acceptance"
    )
    lines = dict(getattr(mod, "CRITERION_LINES", {}) or {}) if mod else {}
    for num, line in _errored.items():
        lines.setdefault(num, line)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(lines):
        terminalreporter.write_line(lines[num])
