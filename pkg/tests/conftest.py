import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from feanet import _backend  # noqa: E402
from feanet.kernels import MaterialParams  # noqa: E402

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(params=_backend.available())
def backend(request):
    """Run a test once per compiled/pure-Python kernel backend."""
    prev = _backend.use(request.param)
    yield request.param
    _backend.use(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def steel():
    return MaterialParams(E=0.23e12, nu=0.289, kappa=11.82, alpha=12.92e-5)


@pytest.fixture
def inclusion_pair():
    return MaterialParams(E=0.241e12, nu=0.36), MaterialParams(E=0.2e12, nu=0.25)


_CRITERIA = []


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if call.when == "call" or (call.when == "setup" and call.excinfo is not None):
        detail = dict(item.user_properties).get("measured", "")
        ok = call.excinfo is None
        _CRITERIA.append((mark.args[0], mark.args[1], ok, detail, item.name))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num, text, ok, detail, name in sorted(_CRITERIA, key=lambda r: (r[0], r[4])):
        line = f"{'PASS' if ok else 'FAIL'} criterion {num:>2}: {text}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
