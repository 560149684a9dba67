import pytest

from gfomkit.scalar_kit import gauss_hermite

ACCEPTANCE = {}


@pytest.fixture(scope="session")
def rule():
    return gauss_hermite(64)


@pytest.fixture
def report():
    """report(k, ok, detail) records one acceptance line, printed in the summary."""
    def _report(k, ok, detail):
        ACCEPTANCE[k] = (bool(ok), detail)
        print(f"criterion {k}: {'PASS' if ok else 'FAIL'} {detail}")
    return _report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
