import json
import pathlib

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=150, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def frozen():
    path = pathlib.Path(__file__).with_name("frozen_oracles.json")
    return json.loads(path.read_text())


# acceptance outcomes, printed once at the end of the session
ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    def record(criterion, passed, detail):
        prev = ACCEPTANCE.get(criterion)
        if prev is not None:
            passed = passed and prev[0]
            detail = f"{prev[1]}; {detail}"
        ACCEPTANCE[criterion] = (passed, detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[criterion]
        terminalreporter.write_line(
            f"criterion {criterion}: {'PASS' if passed else 'FAIL'} | {detail}"
        )
