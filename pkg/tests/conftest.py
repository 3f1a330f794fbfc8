import pytest

CRITERIA = {}


@pytest.fixture
def criterion(request):
    """Record the outcome of an acceptance criterion under a short label."""
    def mark(label):
        CRITERIA[request.node.nodeid] = label
    return mark


def pytest_runtest_logreport(report):
    if report.nodeid in CRITERIA and report.when == "call":
        CRITERIA[report.nodeid] = (CRITERIA[report.nodeid], report.passed, report.duration)


def pytest_terminal_summary(terminalreporter):
    rows = [v for v in CRITERIA.values() if isinstance(v, tuple)]
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, dt in sorted(rows):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}  ({dt:.1f} s)")
