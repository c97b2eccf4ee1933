from __future__ import annotations

from pathlib import Path

import pytest

from egoharness.harness import load_pack
from egoharness.store import ScenarioDatabase
from egoharness.tools import ToolCall, ToolRegistry

FIXTURES = Path(__file__).parent / "fixtures"


def call(tool_name: str, **parameters) -> ToolCall:
    return ToolCall(tool_name, parameters)


@pytest.fixture(scope="session")
def desk_pack():
    return load_pack("builtin:desk")


@pytest.fixture
def retail_db(desk_pack) -> ScenarioDatabase:
    return desk_pack.scenario("retail").database.copy()


@pytest.fixture(scope="session")
def retail_registry(desk_pack) -> ToolRegistry:
    return desk_pack.scenario("retail").registry


@pytest.fixture
def kitchen_db(desk_pack) -> ScenarioDatabase:
    return desk_pack.scenario("kitchen").database.copy()


@pytest.fixture(scope="session")
def kitchen_registry(desk_pack) -> ToolRegistry:
    return desk_pack.scenario("kitchen").registry


@pytest.fixture
def restaurant_db(desk_pack) -> ScenarioDatabase:
    return desk_pack.scenario("restaurant").database.copy()


@pytest.fixture(scope="session")
def restaurant_registry(desk_pack) -> ToolRegistry:
    return desk_pack.scenario("restaurant").registry


@pytest.fixture
def order_db(desk_pack) -> ScenarioDatabase:
    return desk_pack.scenario("order").database.copy()


@pytest.fixture(scope="session")
def order_registry(desk_pack) -> ToolRegistry:
    return desk_pack.scenario("order").registry


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        status, title = results[number]
        terminalreporter.write_line(f"criterion {number:>2} {status}  {title}")
