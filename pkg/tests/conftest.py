import sys


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance lines after the run, in criterion order."""
    module = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
