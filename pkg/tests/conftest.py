import pytest

_outcomes = {}
_details = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _outcomes[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_outcomes):
        verdict = "PASS" if _outcomes[name] == "passed" else "FAIL"
        line = f"{verdict}  {name}"
        if name in _details:
            line += f"  ({_details[name]})"
        terminalreporter.write_line(line)


@pytest.fixture
def detail(request):
    """Attach a one-line measurement to the acceptance summary."""
    def record(text):
        _details[request.node.name] = text
        print(f"{request.node.name}: {text}")
    return record
