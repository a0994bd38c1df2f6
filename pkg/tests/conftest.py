import pytest

from loadsim.config import ActionParams, validate_config


@pytest.fixture(scope="session")
def cfg():
    return validate_config(None)


@pytest.fixture(scope="session")
def gravel30(cfg):
    return cfg.pile("gravel-30")


@pytest.fixture(scope="session")
def aggressive():
    return ActionParams(0.8, 0.6, 0.0, 0.0, 1.0, 1.0, -10.0, 45.0)


_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            item.user_properties.append(("criterion", tuple(m.args)))


def pytest_runtest_logreport(report):
    info = dict(report.user_properties).get("criterion")
    if info is None or (report.when != "call" and report.passed):
        return
    number, title = info
    prev = _CRITERIA.get(number, (title, "PASS"))[1]
    status = "SKIP" if report.skipped else ("PASS" if report.passed else "FAIL")
    if prev != "PASS":
        status = prev
    _CRITERIA[number] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d} {status}: {title}")
