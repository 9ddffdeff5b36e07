"""
K-discretized best-response Nash dynamics.

Every agent splits its budget into 2K atoms. The active agent repeatedly moves
one atom from its highest neighbouring good that carries its mass to its lowest
neighbouring good while their gap is at least two atoms. Each move strictly
lowers the sorted potential phi, so the dynamics terminate; the resulting
state is an epsilon-approximate equilibrium when K is chosen from epsilon.
"""
import bisect
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from ncgg.config import get_settings
from ncgg.core import (
    Agent, Allocation, GameInstance, Good, utility_at_levels, validate_allocation, water_levels,
)
from ncgg.errors import ValidationError
from ncgg.waterfill import _best_response_row

logger = logging.getLogger(__name__)

# Relative slack on the two-atom move threshold
GAP_RTOL = 1e-9
ALIGN_TOL = 1e-9


class Schedule(str, Enum):
    ROUND_ROBIN = "round-robin"
    UNIFORM_RANDOM = "uniform-random"
    STALE_ONLY = "stale-only"


class InitialState(str, Enum):
    ALL_ON_FIRST = "all-on-first-neighbor"
    UNIFORM_SPLIT = "uniform-split"
    RANDOM = "random"


@dataclass(frozen=True)
class DynamicsConfig:
    """
    Parameters of one dynamics run.

    `k` overrides the resolution derived from epsilon; `record_moves` keeps phi
    after every atomic move in the trace.
    """

    epsilon: float
    schedule: Schedule = Schedule.STALE_ONLY
    max_rounds: int = 200000
    initial_state: InitialState = InitialState.RANDOM
    seed: Optional[int] = None
    k: Optional[int] = None
    record_moves: bool = False

    def __post_init__(self):
        try:
            object.__setattr__(self, 'schedule', Schedule(self.schedule))
            object.__setattr__(self, 'initial_state', InitialState(self.initial_state))
        except ValueError as e:
            raise ValidationError(str(e))
        if not (self.epsilon > 0.0 and math.isfinite(self.epsilon)):
            raise ValidationError(f"epsilon must be positive, got {self.epsilon!r}")
        if self.max_rounds < 1:
            raise ValidationError(f"max_rounds must be at least 1, got {self.max_rounds!r}")
        if self.k is not None and self.k < 1:
            raise ValidationError(f"k must be at least 1, got {self.k!r}")

    @classmethod
    def from_settings(cls, settings=None, **overrides):
        """Config seeded from Settings defaults, with explicit overrides on top."""
        settings = settings or get_settings()
        values = dict(
            epsilon=settings.epsilon,
            schedule=settings.schedule,
            max_rounds=settings.max_rounds,
            initial_state=settings.initial_state,
            seed=settings.seed,
        )
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)


@dataclass(frozen=True)
class RoundRecord:
    round: int
    agent: str
    moves: int
    potential_phi: float
    potential_psi: float


@dataclass
class DynamicsTrace:
    k: int
    rounds: list = field(default_factory=list)
    converged: bool = False
    total_moves: int = 0
    move_phis: list = field(default_factory=list)


@dataclass(frozen=True)
class DynamicsResult:
    alloc: Allocation
    trace: DynamicsTrace


@dataclass(frozen=True)
class SweepResult:
    row: dict
    moves: int


@dataclass(frozen=True)
class EpsNeReport:
    ok: bool
    worst_gap: float
    worst_agent: str
    gaps: dict


def choose_k(instance, epsilon):
    """
    Resolution K = ceil(max_j budget_j / U_j^{-1}(epsilon / n)), at least 1.

    With unit budgets this is the reciprocal of the utility inverse at
    epsilon / n, e.g. (n / epsilon) ** (1 / p) for x ** p.
    """
    if not (epsilon > 0.0 and math.isfinite(epsilon)):
        raise ValidationError(f"epsilon must be positive, got {epsilon!r}")
    target = epsilon / instance.n

    k = 1
    for agent in instance.agents:
        inverse = agent.utility.inverse_value(target)
        if not (math.isfinite(inverse) and inverse > 0.0):
            raise ValidationError(f"epsilon/n = {target} is outside the range of {agent.id}'s utility")
        ratio = agent.budget / inverse
        if not math.isfinite(ratio):
            raise ValidationError(f"epsilon/n = {target} is too small for {agent.id}'s utility")
        k = max(k, math.ceil(ratio * (1.0 - 1e-12)))
    return int(k)


def phi_of_levels(levels):
    """Sorted potential: sum over ranks r (1-based, non-increasing order) of (n - r) * level."""
    ordered = np.sort(np.asarray(levels, dtype=float))[::-1]
    n = len(ordered)
    return float(np.dot(np.arange(n - 1, -1, -1, dtype=float), ordered))


def potential_phi(instance, alloc):
    return phi_of_levels(water_levels(instance, alloc))


class _AtomState:
    """
    Integer atom counts per edge with levels derived from them.

    Agents with equal budgets share atom volume, so their counts are summed
    before scaling; levels of equal-budget games are then exact multiples of
    the atom.
    """

    def __init__(self, instance, k, counts):
        self.instance = instance
        self.k = k
        self.counts = counts

        budgets = [a.budget for a in instance.agents]
        groups = sorted(set(budgets))
        self.group_of = [groups.index(b) for b in budgets]
        self.group_budget = groups
        self.atom = [b / (2 * k) for b in budgets]
        self.threshold = [(b / k) * (1.0 - GAP_RTOL) for b in budgets]

        self.column = [[0] * instance.n for _ in groups]
        for j, row in enumerate(counts):
            column = self.column[self.group_of[j]]
            for i, c in row.items():
                column[i] += c
        self.levels = [self._level(i) for i in range(instance.n)]

    @classmethod
    def initial(cls, instance, k, initial_state, rng):
        atoms = 2 * k
        counts = []
        for goods in instance.agent_goods:
            row = dict.fromkeys(goods, 0)
            if initial_state == InitialState.ALL_ON_FIRST:
                row[goods[0]] = atoms
            elif initial_state == InitialState.UNIFORM_SPLIT:
                share, residual = divmod(atoms, len(goods))
                for i in goods:
                    row[i] = share
                row[goods[0]] += residual
            else:
                drawn = rng.multinomial(atoms, [1.0 / len(goods)] * len(goods))
                for i, c in zip(goods, drawn):
                    row[i] = int(c)
            counts.append(row)
        return cls(instance, k, counts)

    @classmethod
    def from_allocation(cls, instance, alloc, k, require_complete=True):
        """Atom counts of an allocation that is a multiple of each agent's atom."""
        validate_allocation(instance, alloc)
        counts = []
        for j, agent in enumerate(instance.agents):
            atom = agent.budget / (2 * k)
            row = {}
            for i in instance.agent_goods[j]:
                amount = alloc.amount(instance.goods[i].id, agent.id)
                c = int(round(amount / atom))
                if abs(c * atom - amount) > ALIGN_TOL:
                    raise ValidationError(
                        f"Allocation of {agent.id} on {instance.goods[i].id} is not a multiple of 1/(2K) at K={k}"
                    )
                row[i] = c
            if require_complete and sum(row.values()) != 2 * k:
                raise ValidationError(f"Agent {agent.id} has not allocated its whole budget")
            counts.append(row)
        return cls(instance, k, counts)

    def _level(self, i):
        level = self.instance.alphas[i]
        for column, budget in zip(self.column, self.group_budget):
            if column[i]:
                level += column[i] * budget / (2 * self.k)
        return float(level)

    def _move(self, j, source, target):
        row = self.counts[j]
        column = self.column[self.group_of[j]]
        row[source] -= 1
        row[target] += 1
        column[source] -= 1
        column[target] += 1
        self.levels[source] = self._level(source)
        self.levels[target] = self._level(target)

    def has_move(self, j):
        goods = self.instance.agent_goods[j]
        if len(goods) < 2:
            return False
        row = self.counts[j]
        low = min(self.levels[i] for i in goods)
        high = max((self.levels[i] for i in goods if row[i] > 0), default=None)
        return high is not None and high - low >= self.threshold[j]

    def sweep(self, j, on_move=None):
        """Move atoms of agent j downhill until no two-atom gap carries its mass."""
        goods = self.instance.agent_goods[j]
        if len(goods) < 2:
            return 0
        row = self.counts[j]
        threshold = self.threshold[j]
        # pi: non-increasing level, ties by good position
        order = sorted((-self.levels[i], i) for i in goods)

        moves = 0
        while True:
            target = order[-1][1]
            source = next((i for _, i in order if row[i] > 0), None)
            if source is None or source == target:
                break
            if self.levels[source] - self.levels[target] < threshold:
                break

            old_source, old_target = self.levels[source], self.levels[target]
            self._move(j, source, target)
            order.remove((-old_source, source))
            order.remove((-old_target, target))
            bisect.insort(order, (-self.levels[source], source))
            bisect.insort(order, (-self.levels[target], target))

            moves += 1
            if on_move is not None:
                on_move()
        return moves

    def phi(self):
        return phi_of_levels(self.levels)

    def psi(self):
        return float(np.sum(np.sqrt(self.levels)))

    def row(self, j):
        atom = self.atom[j]
        return {self.instance.goods[i].id: c * atom for i, c in self.counts[j].items()}

    def to_allocation(self):
        entries = {}
        for j, agent in enumerate(self.instance.agents):
            budget = agent.budget
            for i, c in self.counts[j].items():
                entries[(self.instance.goods[i].id, agent.id)] = c * budget / (2 * self.k)
        return Allocation(entries)


def initial_allocation(instance, k, initial_state, seed=None):
    """Atom-aligned starting allocation of the given kind at resolution K."""
    state = _AtomState.initial(instance, k, InitialState(initial_state), np.random.default_rng(seed))
    return state.to_allocation()


def discrete_best_response_sweep(instance, alloc, agent_id, k):
    """
    Run one agent's atom sweep against the current allocation.

    Other agents' contributions are folded into the ground levels, so only the
    agent's own row needs to be a multiple of budget / (2K).

    Returns:
        SweepResult: The agent's new row and the number of atomic moves.
    """
    j = instance.agent_position(agent_id)
    agent = instance.agents[j]
    levels = water_levels(instance, alloc)

    goods = []
    for i in instance.agent_goods[j]:
        good = instance.goods[i]
        own = alloc.amount(good.id, agent.id)
        goods.append(Good(good.id, max(0.0, float(levels[i]) - own)))
    local = GameInstance(
        goods=tuple(goods),
        agents=(Agent(agent.id, agent.utility, agent.budget),),
        edges=tuple((g.id, agent.id) for g in goods),
    )
    own_row = Allocation({(g.id, agent.id): alloc.amount(g.id, agent.id) for g in goods})

    state = _AtomState.from_allocation(local, own_row, k, require_complete=False)
    moves = state.sweep(0)
    return SweepResult(row=state.row(0), moves=moves)


def _pick_agent(schedule, t, stale, m, rng):
    if schedule == Schedule.ROUND_ROBIN:
        return (t - 1) % m
    if schedule == Schedule.UNIFORM_RANDOM:
        return int(rng.integers(m))
    return stale[int(rng.integers(len(stale)))]


def run_dynamics(instance, config, initial=None):
    """
    Run K-discretized best-response dynamics.

    Args:
        instance (GameInstance): The game.
        config (DynamicsConfig): Epsilon, schedule, round budget, initial state and seed.
        initial (Allocation): Optional complete, atom-aligned warm start.

    Returns:
        DynamicsResult: Final allocation and the per-round trace. Running out of
        rounds is reported through trace.converged, not raised.
    """
    k = config.k or choose_k(instance, config.epsilon)
    rng = np.random.default_rng(config.seed)
    if initial is not None:
        state = _AtomState.from_allocation(instance, initial, k)
    else:
        state = _AtomState.initial(instance, k, config.initial_state, rng)

    trace = DynamicsTrace(k=k)
    on_move = None
    if config.record_moves:
        trace.move_phis.append(state.phi())
        on_move = lambda: trace.move_phis.append(state.phi())

    m = instance.m
    for t in range(1, config.max_rounds + 1):
        stale = [j for j in range(m) if state.has_move(j)]
        if not stale:
            trace.converged = True
            break
        j = _pick_agent(config.schedule, t, stale, m, rng)
        moves = state.sweep(j, on_move)
        trace.total_moves += moves
        trace.rounds.append(RoundRecord(t, instance.agents[j].id, moves, state.phi(), state.psi()))
    else:
        trace.converged = not any(state.has_move(j) for j in range(m))

    if trace.converged:
        logger.info("dynamics converged: K=%d rounds=%d moves=%d", k, len(trace.rounds), trace.total_moves)
    else:
        logger.warning("dynamics stopped after %d rounds without converging (K=%d)", config.max_rounds, k)
    return DynamicsResult(alloc=state.to_allocation(), trace=trace)


def is_eps_ne(instance, alloc, epsilon):
    """
    Additive epsilon-equilibrium check.

    Each agent's gap is the utility of its continuous best response minus its
    current utility.

    Raises:
        ValidationError: Some agent has not allocated its whole budget.
    """
    levels = water_levels(instance, alloc)
    if not alloc.is_complete(instance):
        raise ValidationError("epsilon-equilibrium check needs a complete allocation")

    gaps = {}
    for j, agent in enumerate(instance.agents):
        response = _best_response_row(instance, alloc, j, levels)
        deviated = levels.copy()
        for good_id, amount in response.items():
            deviated[instance.good_index[good_id]] += amount - alloc.amount(good_id, agent.id)
        gaps[agent.id] = utility_at_levels(instance, j, deviated) - utility_at_levels(instance, j, levels)

    worst_agent = max(gaps, key=lambda a: gaps[a])
    worst_gap = gaps[worst_agent]
    return EpsNeReport(ok=worst_gap <= epsilon, worst_gap=worst_gap, worst_agent=worst_agent, gaps=gaps)
