import sys


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance PASS/FAIL lines after the test run."""
    module = next((m for name, m in list(sys.modules.items()) if name.endswith("test_acceptance")), None)
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
