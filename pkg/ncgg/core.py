"""
Game data model: utility functions, goods, agents, the bipartite instance and
allocations, plus the per-good water levels and the welfare measures built on them.
"""
import math
from collections.abc import Mapping
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Optional

import networkx as nx
import numpy as np

from ncgg.errors import UnknownAgentError, ValidationError

POWER = "power"
LOG = "log"
UTILITY_KINDS = (POWER, LOG)

# Slack allowed on per-agent budget sums
BUDGET_TOL = 1e-9


def _scalar_or_array(result, like):
    return float(result) if np.ndim(like) == 0 else result


@dataclass(frozen=True)
class UtilityFunction:
    """
    Increasing, concave, differentiable utility with U(0) = 0.

    Two families are supported: power, x**p with p in (0, 1), and scaled-log,
    c * ln(1 + x) with c > 0. Evaluators accept floats or numpy arrays.
    """

    kind: str
    param: float

    def __post_init__(self):
        if self.kind not in UTILITY_KINDS:
            raise ValidationError(f"Unknown utility kind {self.kind!r}; expected one of {UTILITY_KINDS}")
        param = float(self.param)
        if not math.isfinite(param):
            raise ValidationError(f"Utility parameter must be finite, got {self.param!r}")
        if self.kind == POWER and not 0.0 < param < 1.0:
            raise ValidationError(f"Power exponent must lie in (0, 1), got {param}")
        if self.kind == LOG and param <= 0.0:
            raise ValidationError(f"Log scale must be positive, got {param}")
        object.__setattr__(self, 'param', param)

    @classmethod
    def power(cls, p):
        return cls(POWER, p)

    @classmethod
    def scaled_log(cls, c=1.0):
        return cls(LOG, c)

    @classmethod
    def parse(cls, text):
        """Parse the command-line spelling `kind:param`, e.g. `power:0.5` or `log:2`."""
        kind, sep, param = str(text).partition(':')
        if not sep:
            raise ValidationError(f"Utility must be spelled kind:param, got {text!r}")
        try:
            value = float(param)
        except ValueError:
            raise ValidationError(f"Utility parameter is not a number: {param!r}")
        return cls(kind.strip(), value)

    @property
    def spec(self):
        return f"{self.kind}:{self.param!r}"

    def value(self, x):
        x_arr = np.asarray(x, dtype=float)
        if self.kind == POWER:
            result = np.power(x_arr, self.param)
        else:
            result = self.param * np.log1p(x_arr)
        return _scalar_or_array(result, x)

    __call__ = value

    def derivative(self, x):
        x_arr = np.asarray(x, dtype=float)
        with np.errstate(divide='ignore'):
            if self.kind == POWER:
                result = self.param * np.power(x_arr, self.param - 1.0)
            else:
                result = self.param / (1.0 + x_arr)
        return _scalar_or_array(result, x)

    def inverse_value(self, y):
        y_arr = np.asarray(y, dtype=float)
        if self.kind == POWER:
            result = np.power(y_arr, 1.0 / self.param)
        else:
            result = np.expm1(y_arr / self.param)
        return _scalar_or_array(result, y)


@dataclass(frozen=True)
class Good:
    id: str
    alpha: float = 0.0


@dataclass(frozen=True)
class Agent:
    id: str
    utility: UtilityFunction
    budget: float = 1.0


@dataclass(frozen=True)
class GameInstance:
    """
    Bipartite graph of goods and agents.

    Edges are (good id, agent id) pairs and are stored in canonical order
    (by good position, then agent position) so equal games compare equal.
    """

    goods: tuple
    agents: tuple
    edges: tuple

    def __post_init__(self):
        goods = tuple(self.goods)
        agents = tuple(self.agents)

        good_ids = [g.id for g in goods]
        agent_ids = [a.id for a in agents]
        if not goods:
            raise ValidationError("A game needs at least one good")
        if not agents:
            raise ValidationError("A game needs at least one agent")
        if len(set(good_ids)) != len(good_ids):
            raise ValidationError("Duplicate good ids")
        if len(set(agent_ids)) != len(agent_ids):
            raise ValidationError("Duplicate agent ids")

        for good in goods:
            if not (math.isfinite(good.alpha) and good.alpha >= 0.0):
                raise ValidationError(f"Good {good.id!r} has invalid ground level {good.alpha!r}")
        for agent in agents:
            if not (math.isfinite(agent.budget) and agent.budget > 0.0):
                raise ValidationError(f"Agent {agent.id!r} has invalid budget {agent.budget!r}")
            if not isinstance(agent.utility, UtilityFunction):
                raise ValidationError(f"Agent {agent.id!r} needs a built-in utility function")

        good_pos = {gid: i for i, gid in enumerate(good_ids)}
        agent_pos = {aid: j for j, aid in enumerate(agent_ids)}
        seen = set()
        for edge in self.edges:
            good_id, agent_id = edge
            if good_id not in good_pos:
                raise ValidationError(f"Edge {edge!r} references unknown good {good_id!r}")
            if agent_id not in agent_pos:
                raise ValidationError(f"Edge {edge!r} references unknown agent {agent_id!r}")
            if (good_id, agent_id) in seen:
                raise ValidationError(f"Duplicate edge {edge!r}")
            seen.add((good_id, agent_id))

        covered = {agent_id for _, agent_id in seen}
        isolated = [aid for aid in agent_ids if aid not in covered]
        if isolated:
            raise ValidationError(f"Agents without an adjacent good: {', '.join(isolated)}")

        edges = tuple(sorted(seen, key=lambda e: (good_pos[e[0]], agent_pos[e[1]])))
        object.__setattr__(self, 'goods', goods)
        object.__setattr__(self, 'agents', agents)
        object.__setattr__(self, 'edges', edges)

    @property
    def n(self):
        return len(self.goods)

    @property
    def m(self):
        return len(self.agents)

    @cached_property
    def good_index(self):
        return {g.id: i for i, g in enumerate(self.goods)}

    @cached_property
    def agent_index(self):
        return {a.id: j for j, a in enumerate(self.agents)}

    @cached_property
    def edge_set(self):
        return frozenset(self.edges)

    @cached_property
    def alphas(self):
        values = np.array([g.alpha for g in self.goods], dtype=float)
        values.setflags(write=False)
        return values

    @cached_property
    def budgets(self):
        values = np.array([a.budget for a in self.agents], dtype=float)
        values.setflags(write=False)
        return values

    @cached_property
    def agent_goods(self):
        """Good positions adjacent to each agent, ascending."""
        adjacency = [[] for _ in self.agents]
        for good_id, agent_id in self.edges:
            adjacency[self.agent_index[agent_id]].append(self.good_index[good_id])
        return tuple(tuple(sorted(goods)) for goods in adjacency)

    @cached_property
    def good_agents(self):
        """Agent positions adjacent to each good, ascending."""
        adjacency = [[] for _ in self.goods]
        for good_id, agent_id in self.edges:
            adjacency[self.good_index[good_id]].append(self.agent_index[agent_id])
        return tuple(tuple(sorted(agents)) for agents in adjacency)

    def agent_position(self, agent_id):
        try:
            return self.agent_index[agent_id]
        except KeyError:
            raise UnknownAgentError(f"Unknown agent {agent_id!r}")

    def neighbors(self, agent_id):
        """Good ids adjacent to an agent."""
        j = self.agent_position(agent_id)
        return [self.goods[i].id for i in self.agent_goods[j]]

    def graph(self):
        """Bipartite networkx graph with nodes ('good', id) and ('agent', id)."""
        graph = nx.Graph()
        graph.add_nodes_from((('good', g.id) for g in self.goods), bipartite=0)
        graph.add_nodes_from((('agent', a.id) for a in self.agents), bipartite=1)
        graph.add_edges_from((('good', g), ('agent', a)) for g, a in self.edges)
        return graph

    def with_utilities(self, utilities):
        """Copy of the game with per-agent utilities replaced (sequence in agent order)."""
        utilities = list(utilities)
        if len(utilities) != self.m:
            raise ValidationError(f"Expected {self.m} utilities, got {len(utilities)}")
        agents = tuple(replace(a, utility=u) for a, u in zip(self.agents, utilities))
        return GameInstance(self.goods, agents, self.edges)

    def with_alpha(self, good_id, alpha):
        """Copy of the game with one good's ground level changed."""
        if good_id not in self.good_index:
            raise ValidationError(f"Unknown good {good_id!r}")
        goods = tuple(replace(g, alpha=float(alpha)) if g.id == good_id else g for g in self.goods)
        return GameInstance(goods, self.agents, self.edges)


class Allocation(Mapping):
    """Immutable mapping from edge (good id, agent id) to the amount x_ij >= 0."""

    def __init__(self, entries=None):
        self._entries = {}
        for (good_id, agent_id), amount in dict(entries or {}).items():
            self._entries[(good_id, agent_id)] = float(amount)

    def __getitem__(self, edge):
        return self._entries[edge]

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def __repr__(self):
        return f"Allocation({self._entries!r})"

    def amount(self, good_id, agent_id):
        return self._entries.get((good_id, agent_id), 0.0)

    def row(self, agent_id):
        """Amounts of one agent keyed by good id."""
        return {g: x for (g, a), x in self._entries.items() if a == agent_id}

    def agent_total(self, agent_id):
        return sum(self.row(agent_id).values())

    def with_row(self, agent_id, row):
        """Copy with one agent's row replaced."""
        entries = {edge: x for edge, x in self._entries.items() if edge[1] != agent_id}
        for good_id, amount in row.items():
            entries[(good_id, agent_id)] = amount
        return Allocation(entries)

    def is_complete(self, instance, tol=BUDGET_TOL):
        """True when every agent has spent its whole budget (within tol)."""
        totals = dict.fromkeys(instance.agent_index, 0.0)
        for (_, agent_id), amount in self._entries.items():
            if agent_id in totals:
                totals[agent_id] += amount
        return all(abs(totals[a.id] - a.budget) <= tol for a in instance.agents)


def validate_allocation(instance, alloc):
    """Raise ValidationError unless alloc is supported on the edges and within budgets."""
    totals = np.zeros(instance.m)
    for edge, amount in alloc.items():
        if edge not in instance.edge_set:
            raise ValidationError(f"Allocation references unknown edge {edge!r}")
        if not math.isfinite(amount) or amount < 0.0:
            raise ValidationError(f"Allocation on {edge!r} must be finite and nonnegative, got {amount!r}")
        totals[instance.agent_index[edge[1]]] += amount

    over = totals - instance.budgets
    j = int(np.argmax(over))
    if over[j] > BUDGET_TOL:
        agent = instance.agents[j]
        raise ValidationError(f"Agent {agent.id!r} allocates {totals[j]} above its budget {agent.budget}")


def water_levels(instance, alloc):
    """
    Per-good water levels: ground level plus every contribution.

    Returns:
        np.ndarray: One level per good, in good order.
    """
    validate_allocation(instance, alloc)
    levels = np.array(instance.alphas, dtype=float)
    for (good_id, _), amount in alloc.items():
        levels[instance.good_index[good_id]] += amount
    return levels


def utility_at_levels(instance, j, levels):
    """Utility of the agent at position j given precomputed levels."""
    agent = instance.agents[j]
    goods = list(instance.agent_goods[j])
    return float(np.sum(agent.utility.value(levels[goods])))


def agent_utility(instance, alloc, agent_id):
    """Sum of the agent's utility over its adjacent goods."""
    j = instance.agent_position(agent_id)
    return utility_at_levels(instance, j, water_levels(instance, alloc))


def welfare_at_levels(instance, levels):
    return sum(utility_at_levels(instance, j, levels) for j in range(instance.m))


def social_welfare(instance, alloc):
    """Sum of every agent's utility."""
    return welfare_at_levels(instance, water_levels(instance, alloc))


def potential_psi(instance, alloc, levels: Optional[np.ndarray] = None):
    """Concave potential: sum of square roots of the water levels."""
    if levels is None:
        levels = water_levels(instance, alloc)
    return float(np.sum(np.sqrt(levels)))
