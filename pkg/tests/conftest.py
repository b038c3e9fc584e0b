import pytest

_acceptance_results = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when != "call":
        return
    if item.module.__name__ != "test_acceptance":
        return
    doc = (item.function.__doc__ or "").strip().splitlines()
    label = doc[0] if doc else item.name
    _acceptance_results[item.name] = (label, rep.passed)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance_results):
        label, passed = _acceptance_results[name]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{status}  {label}")
