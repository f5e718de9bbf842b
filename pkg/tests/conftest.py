import sys


def pytest_terminal_summary(terminalreporter):
    # surface the acceptance checklist even though pytest captures stdout
    # from passing tests
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.line(line)
