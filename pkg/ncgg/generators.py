"""Seeded random instance families for the command line and the experiment suites."""
import logging

import networkx as nx
import numpy as np

from ncgg.core import Agent, GameInstance, Good, UtilityFunction
from ncgg.discrete import UkpInstance, UkpItem
from ncgg.errors import ValidationError
from ncgg.waterfill import CgpInstance

logger = logging.getLogger(__name__)

POWER_RANGE = (0.5, 0.95)
LOG_RANGE = (0.5, 3.0)


def good_id(i):
    return f"p_{i}"


def agent_id(j):
    return f"a_{j}"


def random_utility(rng):
    """Draw a utility from one of the two built-in families."""
    if rng.random() < 0.5:
        return UtilityFunction.power(float(rng.uniform(*POWER_RANGE)))
    return UtilityFunction.scaled_log(float(rng.uniform(*LOG_RANGE)))


def _goods_and_agents(n_goods, n_agents, rng, utility, alpha_max):
    alphas = rng.uniform(0.0, alpha_max, size=n_goods) if alpha_max > 0 else np.zeros(n_goods)
    goods = tuple(Good(good_id(i + 1), float(a)) for i, a in enumerate(alphas))
    agents = tuple(
        Agent(agent_id(j + 1), utility if utility is not None else random_utility(rng))
        for j in range(n_agents)
    )
    return goods, agents


def _join_components(instance, mask, rng):
    """Link every component after the first to the first with one good-agent edge."""
    components = sorted(nx.connected_components(instance.graph()), key=min)
    anchor = components[0]
    for component in components[1:]:
        goods = sorted(instance.good_index[g] for kind, g in component if kind == 'good')
        agents = sorted(instance.agent_index[a] for kind, a in anchor if kind == 'agent')
        mask[goods[int(rng.integers(len(goods)))], agents[int(rng.integers(len(agents)))]] = True
        anchor = anchor | component


def random_bipartite(n_goods, n_agents, edge_prob, seed=None, utility=None, alpha_max=1.0, connected=True):
    """
    Erdos-Renyi style bipartite game.

    Each (good, agent) pair is an edge with probability edge_prob. Agents left
    without a good get one at random. When `connected` is set, goods left
    without an agent get one at random too, and the remaining components are
    joined by one extra edge each.

    Returns:
        GameInstance
    """
    if n_goods < 1 or n_agents < 1:
        raise ValidationError(f"Need at least one good and one agent, got {n_goods} goods and {n_agents} agents")
    if not 0.0 < edge_prob <= 1.0:
        raise ValidationError(f"Edge probability must lie in (0, 1], got {edge_prob}")
    if alpha_max < 0.0:
        raise ValidationError(f"alpha_max must be nonnegative, got {alpha_max}")

    rng = np.random.default_rng(seed)
    goods, agents = _goods_and_agents(n_goods, n_agents, rng, utility, alpha_max)
    mask = rng.random((n_goods, n_agents)) < edge_prob
    for j in range(n_agents):
        if not mask[:, j].any():
            mask[int(rng.integers(n_goods)), j] = True

    def build():
        return GameInstance(goods, agents, tuple((goods[i].id, agents[j].id) for i, j in zip(*np.nonzero(mask))))

    instance = build()
    if connected and not nx.is_connected(instance.graph()):
        for i in range(n_goods):
            if not mask[i].any():
                mask[i, int(rng.integers(n_agents))] = True
        _join_components(build(), mask, rng)
        instance = build()
        logger.debug("random bipartite game repaired to %d edges", len(instance.edges))
    return instance


def random_tree(size, seed=None, utility=None, alpha_max=1.0):
    """
    Random bipartite tree with `size` nodes (goods plus agents).

    Starts from one good joined to one agent; every further node picks its kind
    at random and hangs off a uniformly chosen node of the other kind.
    """
    if size < 2:
        raise ValidationError(f"A tree game needs at least 2 nodes, got {size}")

    rng = np.random.default_rng(seed)
    n_goods, n_agents = 1, 1
    edges = [(0, 0)]
    for _ in range(size - 2):
        if rng.random() < 0.5:
            edges.append((n_goods, int(rng.integers(n_agents))))
            n_goods += 1
        else:
            edges.append((int(rng.integers(n_goods)), n_agents))
            n_agents += 1

    goods, agents = _goods_and_agents(n_goods, n_agents, rng, utility, alpha_max)
    return GameInstance(goods, agents, tuple((goods[i].id, agents[j].id) for i, j in edges))


def random_cgp(n, seed=None, alpha_max=2.0):
    """Single-agent instance with n goods and a random budget."""
    if n < 1:
        raise ValidationError(f"Need at least one good, got {n}")
    rng = np.random.default_rng(seed)
    alphas = rng.uniform(0.0, alpha_max, size=n)
    return CgpInstance(tuple(float(a) for a in alphas), float(rng.uniform(0.1, 3.0)))


def random_ukp(n_items, capacity, seed=None, max_value=10):
    if n_items < 1 or capacity < 1:
        raise ValidationError(f"Need at least one item and positive capacity, got {n_items}, {capacity}")
    rng = np.random.default_rng(seed)
    items = tuple(
        UkpItem(int(rng.integers(1, max_value + 1)), int(rng.integers(1, capacity + 1)))
        for _ in range(n_items)
    )
    return UkpInstance(items, capacity)
