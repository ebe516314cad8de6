import pytest

# (criterion number, passed, detail) lines recorded by the acceptance suite
ACCEPTANCE_RESULTS = []


@pytest.fixture
def record():
    """Record a criterion outcome; the test still asserts on its own."""

    def _record(number, passed, detail):
        ACCEPTANCE_RESULTS.append((number, bool(passed), detail))
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})")
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
