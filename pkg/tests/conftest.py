import pytest

from allopdmp.rates import AllometricParams, figure_defaults

_CRITERIA: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label, text): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    label, text = mark.args
    if rep.when == "setup" and rep.skipped:
        _CRITERIA[label] = (text, "SKIP")
    elif rep.when == "call":
        if hasattr(rep, "wasxfail"):
            status = "XFAIL (not attainable, see ledger)" if rep.skipped else "XPASS"
        else:
            status = "PASS" if rep.passed else "FAIL"
        _CRITERIA[label] = (text, status)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")

    def order(k):
        num = "".join(ch for ch in k if ch.isdigit())
        return (int(num) if num else 0, k)

    for label in sorted(_CRITERIA, key=order):
        text, status = _CRITERIA[label]
        terminalreporter.write_line(f"criterion {label:>4}: {status:<5}  {text}")


@pytest.fixture
def i1_params():
    """Equal exponents beta = delta = alpha - 1 with c_beta = 2, c_delta = 0.5."""
    return figure_defaults(beta=-0.25, c_beta=2.0, c_delta=0.5)


@pytest.fixture
def defaults():
    return AllometricParams()
