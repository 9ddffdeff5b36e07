"""
Game-level experiments: equilibrium finding, the uniqueness and monotonicity
suites, the star family used for price-of-anarchy lower bounds, and a
Frank-Wolfe social welfare optimizer.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

import networkx as nx
import numpy as np

from ncgg.config import get_settings
from ncgg.core import Agent, Allocation, GameInstance, Good, social_welfare, water_levels
from ncgg.dynamics import DynamicsConfig, InitialState, Schedule, choose_k, is_eps_ne, run_dynamics
from ncgg.errors import ConvergenceError, ValidationError
from ncgg.generators import random_utility

logger = logging.getLogger(__name__)

COMMON_GOOD = "p_c"
# Lower clamp on levels when evaluating derivatives for Frank-Wolfe
GRADIENT_FLOOR = 1e-12


@dataclass(frozen=True)
class UniquenessReport:
    """
    Discrepancies between equilibria found across trials.

    `k` is the base resolution the tolerance 2/k refers to; `k_run` is the
    refined resolution the trials actually ran at.
    """

    trials: int
    max_level_discrepancy: float
    max_allocation_discrepancy: float
    epsilon_used: float
    k: int
    k_run: int
    strong: bool = False
    failed_trials: tuple = ()

    @property
    def tolerance(self):
        return 2.0 / self.k + 1e-9

    @property
    def within_tolerance(self):
        if self.failed_trials:
            return False
        if self.max_level_discrepancy > self.tolerance:
            return False
        return not self.strong or self.max_allocation_discrepancy <= self.tolerance


@dataclass(frozen=True)
class MonotoneReport:
    good_id: str
    delta: float
    level_before: float
    level_after: float
    tolerance: float

    @property
    def ok(self):
        return self.level_after >= self.level_before - self.tolerance


@dataclass(frozen=True)
class PoaReport:
    """
    Welfare of an equilibrium against reference states.

    ratio_lower_bound = max(welfare_reference, welfare_fw) / welfare_ne over
    whichever references were computed; `ratio` clamps it at 1.
    """

    n: int
    welfare_ne: float
    welfare_reference: Optional[float]
    welfare_fw: Optional[float]
    ratio_lower_bound: float

    @property
    def clamped(self):
        return self.ratio_lower_bound < 1.0

    @property
    def ratio(self):
        return max(1.0, self.ratio_lower_bound)


@dataclass(frozen=True)
class FwResult:
    alloc: Allocation
    welfare: float
    best_history: tuple


def _equilibrium_run(instance, epsilon, seed=None, refine=0, k=None, max_rounds=None):
    config = DynamicsConfig(
        epsilon=epsilon,
        schedule=Schedule.STALE_ONLY,
        initial_state=InitialState.RANDOM,
        max_rounds=get_settings().max_rounds if max_rounds is None else max_rounds,
        k=k,
    )
    result = run_dynamics(instance, config)
    for step in range(refine + 1):
        if not result.trace.converged:
            raise ConvergenceError(
                f"No equilibrium within {config.max_rounds} rounds at K={result.trace.k} (seed {seed})"
            )
        if step == refine:
            break
        config = replace(config, k=2 * result.trace.k)
        result = run_dynamics(instance, config, initial=result.alloc)
    return result


def find_equilibrium(instance, epsilon, seed=None, refine=0, k=None, max_rounds=None):
    """
    Approximate pure equilibrium found by stale-only best-response dynamics.

    Args:
        instance (GameInstance): The game.
        epsilon (float): Approximation target; fixes K unless `k` is given.
        seed (int): Seed of the random initial state and the schedule.
        refine (int): Number of K-doublings, each warm-started from the
            previous equilibrium.
        k (int): Explicit base resolution.

    Returns:
        Allocation

    Raises:
        ConvergenceError: A run exhausted its round budget.
    """
    return _equilibrium_run(instance, epsilon, seed, refine, k, max_rounds).alloc


def default_refine(instance):
    """Doublings needed to bring the atom down to 1/(2K n (n + m))."""
    return max(0, math.ceil(math.log2(instance.n * (instance.n + instance.m))))


def _max_spread(rows):
    if len(rows) < 2:
        return 0.0
    stacked = np.vstack(rows)
    return float(np.max(np.ptp(stacked, axis=0))) if stacked.size else 0.0


def _uniqueness(instance, trials, epsilon, seeds, strong, refine):
    if trials < 2:
        raise ValidationError(f"A uniqueness suite needs at least 2 trials, got {trials}")
    seeds = list(range(trials)) if seeds is None else list(seeds)
    if len(seeds) < trials:
        raise ValidationError(f"Got {len(seeds)} seeds for {trials} trials")
    if refine is None:
        refine = default_refine(instance)

    variants = []
    for seed in seeds[:trials]:
        rng = np.random.default_rng(seed)
        variants.append(instance.with_utilities(random_utility(rng) for _ in instance.agents))
    k = max(choose_k(variant, epsilon) for variant in variants)

    levels, allocations, failed = [], [], []
    for variant, seed in zip(variants, seeds):
        try:
            alloc = find_equilibrium(variant, epsilon, seed=seed, refine=refine, k=k)
        except ConvergenceError as e:
            logger.warning("uniqueness trial failed: %s", e)
            failed.append(seed)
            continue
        levels.append(water_levels(variant, alloc))
        allocations.append(np.array([alloc.amount(g, a) for g, a in instance.edges]))

    report = UniquenessReport(
        trials=trials,
        max_level_discrepancy=_max_spread(levels),
        max_allocation_discrepancy=_max_spread(allocations),
        epsilon_used=epsilon,
        k=k,
        k_run=k * 2 ** refine,
        strong=strong,
        failed_trials=tuple(failed),
    )
    logger.info(
        "uniqueness suite (%s): level %.3g, allocation %.3g, tolerance %.3g",
        "strong" if strong else "weak",
        report.max_level_discrepancy,
        report.max_allocation_discrepancy,
        report.tolerance,
    )
    return report


def weak_uniqueness_check(instance, trials, epsilon, seeds=None, refine=None):
    """
    Equilibria from different seeds and independently redrawn utilities must
    share their water levels up to 2/K.
    """
    return _uniqueness(instance, trials, epsilon, seeds, strong=False, refine=refine)


def _require_forest(instance):
    if not nx.is_forest(instance.graph()):
        raise ValidationError("Underlying bipartite graph has a cycle")


def strong_uniqueness_check(instance, trials, epsilon, seeds=None, refine=None):
    """On acyclic games the per-edge allocations must agree as well."""
    _require_forest(instance)
    return _uniqueness(instance, trials, epsilon, seeds, strong=True, refine=refine)


def monotone_ne_check(instance, good_id, delta, epsilon, seed=None, refine=None):
    """
    Raise one good's ground level by delta on a tree game and compare its
    equilibrium level before and after.
    """
    _require_forest(instance)
    if not delta > 0.0:
        raise ValidationError(f"delta must be positive, got {delta!r}")
    if good_id not in instance.good_index:
        raise ValidationError(f"Unknown good {good_id!r}")
    if refine is None:
        refine = default_refine(instance)

    i = instance.good_index[good_id]
    raised = instance.with_alpha(good_id, instance.goods[i].alpha + delta)
    k = choose_k(instance, epsilon)
    before = water_levels(instance, find_equilibrium(instance, epsilon, seed, refine, k))[i]
    after = water_levels(raised, find_equilibrium(raised, epsilon, seed, refine, k))[i]
    return MonotoneReport(good_id, delta, float(before), float(after), 2.0 / k + 1e-9)


def poa_star_instance(n, utility):
    """
    Star family: a common good p_c with ground level 1 shared by n agents,
    each of which also owns a private good p_j with ground level 0.
    """
    if n < 1:
        raise ValidationError(f"Star needs at least one agent, got {n}")
    goods = (Good(COMMON_GOOD, 1.0),) + tuple(Good(f"p_{j}", 0.0) for j in range(1, n + 1))
    agents = tuple(Agent(f"a_{j}", utility) for j in range(1, n + 1))
    edges = []
    for j in range(1, n + 1):
        edges.append((COMMON_GOOD, f"a_{j}"))
        edges.append((f"p_{j}", f"a_{j}"))
    return GameInstance(goods, agents, tuple(edges))


def _star_layout(instance):
    """Common good position and each agent's private good position, or None."""
    n = instance.m
    if instance.n != n + 1 or len(instance.edges) != 2 * n:
        return None
    common = [i for i, agents in enumerate(instance.good_agents) if len(agents) == n]
    if n == 1:
        common = [i for i in common if instance.goods[i].alpha == 1.0]
    if len(common) != 1:
        return None
    c = common[0]
    if instance.goods[c].alpha != 1.0:
        return None

    private = []
    for j, goods in enumerate(instance.agent_goods):
        own = [i for i in goods if i != c]
        if len(goods) != 2 or len(own) != 1 or len(instance.good_agents[own[0]]) != 1:
            return None
        if instance.goods[own[0]].alpha != 0.0:
            return None
        private.append(own[0])

    first = instance.agents[0]
    if any(a.utility != first.utility or a.budget != first.budget for a in instance.agents):
        return None
    return c, private


def is_star(instance):
    return _star_layout(instance) is not None


def _star_or_raise(instance):
    layout = _star_layout(instance)
    if layout is None:
        raise ValidationError("Instance is not a star game")
    return layout


def all_private_allocation(instance):
    """Every agent spends its whole budget on its private good."""
    _, private = _star_or_raise(instance)
    return Allocation({
        (instance.goods[i].id, agent.id): agent.budget for agent, i in zip(instance.agents, private)
    })


def all_common_allocation(instance):
    """Every agent spends its whole budget on the common good."""
    c, _ = _star_or_raise(instance)
    return Allocation({(instance.goods[c].id, agent.id): agent.budget for agent in instance.agents})


def poa_star_row(n, utility, epsilon):
    """
    One price-of-anarchy row of the star family.

    The equilibrium is the all-private state, confirmed by a dynamics run
    warm-started there and by the epsilon-equilibrium check; the reference
    is the all-common state.
    """
    star = poa_star_instance(n, utility)
    private = all_private_allocation(star)

    result = run_dynamics(star, DynamicsConfig(epsilon=epsilon), initial=private)
    if not result.trace.converged:
        raise ConvergenceError(f"Star dynamics did not settle for n={n}")
    check = is_eps_ne(star, result.alloc, epsilon)
    if not check.ok:
        raise ConvergenceError(f"Star state is not an {epsilon}-equilibrium for n={n} (gap {check.worst_gap})")

    welfare_ne = social_welfare(star, result.alloc)
    welfare_common = social_welfare(star, all_common_allocation(star))
    report = PoaReport(
        n=n,
        welfare_ne=welfare_ne,
        welfare_reference=welfare_common,
        welfare_fw=None,
        ratio_lower_bound=welfare_common / welfare_ne,
    )
    if report.clamped:
        logger.warning("star n=%d: all-common state is no better than equilibrium, ratio clamped to 1", n)
    return report


def empirical_poa(instance, epsilon, seed=None, iterations=None):
    """
    Welfare of a found equilibrium against Frank-Wolfe (and, for star games,
    the all-common state).

    Returns:
        PoaReport
    """
    welfare_ne = social_welfare(instance, find_equilibrium(instance, epsilon, seed))
    welfare_fw = social_optimum_fw(instance, iterations).welfare
    welfare_reference = social_welfare(instance, all_common_allocation(instance)) if is_star(instance) else None

    best = max(w for w in (welfare_reference, welfare_fw) if w is not None)
    report = PoaReport(
        n=instance.m,
        welfare_ne=welfare_ne,
        welfare_reference=welfare_reference,
        welfare_fw=welfare_fw,
        ratio_lower_bound=best / welfare_ne,
    )
    logger.info("empirical PoA: ne=%.6g best=%.6g ratio=%.6g", welfare_ne, best, report.ratio_lower_bound)
    return report


class _WelfareModel:
    """Edge-vector view of a game for vectorized welfare and gradients."""

    def __init__(self, instance):
        self.instance = instance
        self.edge_good = np.array([instance.good_index[g] for g, _ in instance.edges], dtype=int)
        self.edge_agent = np.array([instance.agent_index[a] for _, a in instance.edges], dtype=int)

        # degree of each good towards the agents sharing one utility
        self.groups = []
        for utility in dict.fromkeys(a.utility for a in instance.agents):
            members = np.array([a.utility == utility for a in instance.agents])
            degree = np.bincount(self.edge_good[members[self.edge_agent]], minlength=instance.n)
            self.groups.append((utility, degree.astype(float)))

        width = max(len(goods) for goods in instance.agent_goods)
        self.choice_goods = np.full((instance.m, width), -1, dtype=int)
        self.choice_edges = np.full((instance.m, width), -1, dtype=int)
        edge_pos = {edge: e for e, edge in enumerate(instance.edges)}
        for j, goods in enumerate(instance.agent_goods):
            agent_id = instance.agents[j].id
            for slot, i in enumerate(goods):
                self.choice_goods[j, slot] = i
                self.choice_edges[j, slot] = edge_pos[(instance.goods[i].id, agent_id)]

    def levels(self, x):
        return self.instance.alphas + np.bincount(self.edge_good, weights=x, minlength=self.instance.n)

    def welfare(self, levels):
        return float(sum(np.dot(degree, utility.value(levels)) for utility, degree in self.groups))

    def gradient(self, levels):
        clamped = np.maximum(levels, GRADIENT_FLOOR)
        return sum(degree * utility.derivative(clamped) for utility, degree in self.groups)

    def vertex(self, gradient):
        """Each agent's whole budget on its neighbour with the largest gradient (lowest index on ties)."""
        scores = np.where(self.choice_goods >= 0, gradient[np.maximum(self.choice_goods, 0)], -np.inf)
        best = np.argmax(scores, axis=1)
        s = np.zeros(len(self.edge_good))
        s[self.choice_edges[np.arange(self.instance.m), best]] = self.instance.budgets
        return s

    def uniform_start(self):
        degrees = np.bincount(self.edge_agent, minlength=self.instance.m)
        return self.instance.budgets[self.edge_agent] / degrees[self.edge_agent]

    def allocation(self, x):
        return Allocation({edge: float(v) for edge, v in zip(self.instance.edges, x)})


def social_optimum_fw(instance, iterations=None):
    """
    Frank-Wolfe over the product of the agents' budget simplices.

    Args:
        instance (GameInstance): The game.
        iterations (int): Number of steps; defaults to Settings.fw_iterations.

    Returns:
        FwResult: Best iterate, its welfare and the running best welfare per step.
    """
    if iterations is None:
        iterations = get_settings().fw_iterations
    if iterations < 1:
        raise ValidationError(f"iterations must be at least 1, got {iterations}")

    model = _WelfareModel(instance)
    x = model.uniform_start()
    best_x, best_welfare = x, model.welfare(model.levels(x))
    history = []
    for t in range(iterations):
        levels = model.levels(x)
        s = model.vertex(model.gradient(levels))
        x = x + (2.0 / (t + 2.0)) * (s - x)

        welfare = model.welfare(model.levels(x))
        if welfare > best_welfare:
            best_x, best_welfare = x, welfare
        history.append(best_welfare)

    logger.debug("Frank-Wolfe: %d iterations, best welfare %.9g", iterations, best_welfare)
    return FwResult(alloc=model.allocation(best_x), welfare=best_welfare, best_history=tuple(history))


def growth_exponent(ns, ratios):
    """Slope of the least-squares line through (log n, log ratio)."""
    ns = np.asarray(ns, dtype=float)
    ratios = np.asarray(ratios, dtype=float)
    if ns.size < 2 or ns.size != ratios.size:
        raise ValidationError("Need at least two matching (n, ratio) points")
    if np.any(ns <= 0) or np.any(ratios <= 0):
        raise ValidationError("n values and ratios must be positive")
    slope, _ = np.polyfit(np.log(ns), np.log(ratios), 1)
    return float(slope)
