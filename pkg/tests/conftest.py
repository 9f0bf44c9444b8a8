from pathlib import Path

import pytest

from app.models.ledger import LedgerState, TokenId
from app.services.benchmarks import load_benchmark

FIXTURES = Path(__file__).resolve().parent / "fixtures"
TRACES = Path(__file__).resolve().parent.parent / "app" / "benchmarks" / "traces"


@pytest.fixture(scope="session")
def harvest():
    return load_benchmark("harvest")


@pytest.fixture(scope="session")
def warp():
    return load_benchmark("warp")


@pytest.fixture(scope="session")
def control():
    return load_benchmark("control")


@pytest.fixture
def harvest_world(harvest):
    """A private copy; tests may mutate it freely."""
    return harvest.fresh_world()


@pytest.fixture
def warp_world(warp):
    return warp.fresh_world()


@pytest.fixture
def ledger():
    state = LedgerState([TokenId("USDC", 6), TokenId("WETH", 18), TokenId("LP", 18)],
                        prices={"USDC": 1, "WETH": 2000})
    state.mint("alice", "USDC", 1_000 * 10**6)
    state.mint("alice", "WETH", 2 * 10**18)
    return state
