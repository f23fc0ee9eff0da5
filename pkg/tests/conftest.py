"""Shared pytest plumbing: surface acceptance verdict lines.

The acceptance tests print one ``ACCEPTANCE n (...): PASS/FAIL`` line each.
Under pytest's default fd-level capture those prints are swallowed for
passing tests, so the module also records every line here and this hook
replays them after capture ends — the verdicts land in plain ``pytest -v``
output without needing ``-s``.
"""

VERDICT_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if not VERDICT_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in VERDICT_LINES:
        terminalreporter.write_line(line)
