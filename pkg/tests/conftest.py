from .acceptance_log import LINES


def pytest_terminal_summary(terminalreporter):
    if not LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(LINES):
        terminalreporter.write_line(LINES[key])
