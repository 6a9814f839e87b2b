import pytest

# (criterion, passed, detail) rows filled in by test_acceptance.py
ACCEPTANCE = []


@pytest.fixture
def record_criterion():
    def record(name, passed, detail=""):
        ACCEPTANCE.append((name, bool(passed), detail))
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE:
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{status}  {name}" + (f"  ({detail})" if detail else ""))
