import pytest

# criterion number -> (passed, title, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str, str]] = {}


@pytest.fixture
def record_criterion(request):
    number, title = request.node.get_closest_marker("criterion").args
    # stays FAIL unless the test reaches record()
    ACCEPTANCE[number] = (False, title, "did not complete")

    def record(checks: dict[str, bool], detail: str = "") -> None:
        failed = [name for name, ok in checks.items() if not ok]
        note = detail if not failed else f"{detail}; failed: {', '.join(failed)}"
        ACCEPTANCE[number] = (not failed, title, note)
        assert not failed, f"criterion {number} failed checks: {failed} ({detail})"

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
