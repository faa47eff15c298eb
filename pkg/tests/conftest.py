import numpy as np
import pytest

from porogas.thermo import ComponentSpec, MixtureSpec

BAR = 1e5

CH4 = ComponentSpec("CH4", 190.56, 45.99 * BAR, 0.011, 0.01604, 1.1e-5)
C2H6 = ComponentSpec("C2H6", 305.32, 48.72 * BAR, 0.099, 0.03007, 9.4e-6)
CO2 = ComponentSpec("CO2", 304.14, 73.75 * BAR, 0.239, 0.04401, 1.5e-5)


@pytest.fixture
def binary_eos():
    return MixtureSpec((CO2, CH4), temperature=300.0).eos()


@pytest.fixture
def ternary_eos():
    return MixtureSpec((CH4, C2H6, CO2), temperature=300.0).eos()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary ---------------------------------------------------------

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.when == "call" or rep.failed:
        _CRITERIA[number] = (rep.passed, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        ok, title, detail = _CRITERIA[number]
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
