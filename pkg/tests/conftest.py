import sys
from functools import lru_cache
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from polca.domains import build  # noqa: E402
from polca.hierarchy import PlanOptions, polca_plan  # noqa: E402


@lru_cache(maxsize=None)
def domain(name):
    return build(name)


@lru_cache(maxsize=None)
def plan(name, mode, top_solver="exact"):
    d = domain(name)
    return polca_plan(d.model, d.graph, mode, PlanOptions(top_solver=top_solver))


@pytest.fixture(scope="session")
def get_domain():
    return domain


@pytest.fixture(scope="session")
def get_plan():
    return plan


# criterion number -> (passed, detail), filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
