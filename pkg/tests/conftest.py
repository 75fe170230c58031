import pytest

_criteria = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    label = getattr(item.function, "criterion", None)
    if label is None or report.when != "call":
        return
    detail = "; ".join(f"{k}={v}" for k, v in report.user_properties)
    status = "PASS" if report.passed else "FAIL"
    _criteria.append(f"{status}  {label}" + (f"  [{detail}]" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for line in _criteria:
            terminalreporter.write_line(line)
