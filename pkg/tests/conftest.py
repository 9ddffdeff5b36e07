import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from ncgg.config import get_settings
from ncgg.core import Agent, GameInstance, Good, UtilityFunction
from ncgg.lab import poa_star_instance

SQRT = UtilityFunction.power(0.5)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run the acceptance-sized sweeps")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-sized sweep, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def clean_settings(monkeypatch):
    """Every test sees the repository config.toml without environment overrides."""
    for name in ('NCGG_SEED', 'NCGG_CONFIG', 'NCGG_DATABASE_URL', 'NCGG_LOG_LEVEL'):
        monkeypatch.delenv(name, raising=False)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


def complete_bipartite(n_goods, n_agents, utility=SQRT, alpha=0.0):
    goods = tuple(Good(f"p_{i}", alpha) for i in range(1, n_goods + 1))
    agents = tuple(Agent(f"a_{j}", utility) for j in range(1, n_agents + 1))
    edges = tuple((g.id, a.id) for g in goods for a in agents)
    return GameInstance(goods, agents, edges)


def single_agent(alphas, utility=SQRT, budget=1.0):
    goods = tuple(Good(f"p_{i}", a) for i, a in enumerate(alphas, start=1))
    agent = Agent("a_1", utility, budget)
    return GameInstance(goods, (agent,), tuple((g.id, agent.id) for g in goods))


@pytest.fixture
def two_by_two():
    return complete_bipartite(2, 2)


@pytest.fixture
def star4():
    return poa_star_instance(4, SQRT)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
