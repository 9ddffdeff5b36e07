"""
Discrete common goods problem (unit atoms).

Contains the exact pseudo-polynomial oracle, the reduction to the
multiple-choice knapsack problem with its profit-scaling FPTAS, and the
unbounded-knapsack gadget that embeds UKP into a discrete CGP instance.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ncgg.config import get_settings
from ncgg.errors import ResourceLimitError, ValidationError

logger = logging.getLogger(__name__)

# Value ties inside the DP tables
TIE_TOL = 1e-12

_UNREACHABLE = np.iinfo(np.int64).max // 4


@dataclass(frozen=True)
class DiscreteCgpInstance:
    """
    Allocate `units` atoms of unit volume over goods with ground levels `alphas`.

    The utility may be any non-decreasing evaluator with utility(0) = 0; the
    UKP gadget is not concave.
    """

    alphas: tuple
    units: int
    utility: Callable[[float], float]

    def __post_init__(self):
        alphas = tuple(float(a) for a in self.alphas)
        if not alphas:
            raise ValidationError("A discrete CGP needs at least one good")
        if not all(math.isfinite(a) and a >= 0.0 for a in alphas):
            raise ValidationError(f"Ground levels must be finite and nonnegative, got {alphas}")
        if int(self.units) != self.units or self.units < 0:
            raise ValidationError(f"Units must be a nonnegative integer, got {self.units!r}")
        object.__setattr__(self, 'alphas', alphas)
        object.__setattr__(self, 'units', int(self.units))

        if abs(self.utility(0)) > TIE_TOL:
            raise ValidationError("Utility must vanish at zero")
        top = int(math.ceil(max(alphas))) + self.units
        previous = 0.0
        for level in range(1, top + 1):
            current = self.utility(level)
            if current < previous - TIE_TOL:
                raise ValidationError(f"Utility decreases between levels {level - 1} and {level}")
            previous = current


@dataclass(frozen=True)
class DpResult:
    value: float
    counts: tuple


@dataclass(frozen=True)
class UkpItem:
    value: int
    weight: int


@dataclass(frozen=True)
class UkpInstance:
    """
    Unbounded knapsack instance, normalized on construction: items sorted by
    weight, one item per weight, and dominated items dropped.
    """

    items: tuple
    capacity: int

    def __post_init__(self):
        if int(self.capacity) != self.capacity or self.capacity < 1:
            raise ValidationError(f"Capacity must be a positive integer, got {self.capacity!r}")
        items = []
        for item in self.items:
            if not isinstance(item, UkpItem):
                item = UkpItem(*item)
            if item.value < 1 or item.weight < 1:
                raise ValidationError(f"Item values and weights must be positive integers, got {item}")
            items.append(UkpItem(int(item.value), int(item.weight)))

        # Heaviest-valued first within a weight, then keep strictly improving values
        items.sort(key=lambda it: (it.weight, -it.value))
        kept = []
        for item in items:
            if kept and item.value <= kept[-1].value:
                continue
            kept.append(item)
        object.__setattr__(self, 'items', tuple(kept))
        object.__setattr__(self, 'capacity', int(self.capacity))


@dataclass(frozen=True)
class MckpItem:
    weight: int
    value: float


@dataclass(frozen=True)
class MckpInstance:
    """At most one item may be picked from each class; total weight within capacity."""

    classes: tuple
    capacity: int

    def __post_init__(self):
        if int(self.capacity) != self.capacity or self.capacity < 0:
            raise ValidationError(f"Capacity must be a nonnegative integer, got {self.capacity!r}")
        classes = []
        for items in self.classes:
            normalized = []
            for item in items:
                if not isinstance(item, MckpItem):
                    item = MckpItem(*item)
                if item.weight < 0 or item.value < 0:
                    raise ValidationError(f"Item weight and value must be nonnegative, got {item}")
                if item.weight > self.capacity:
                    raise ValidationError(f"Item {item} exceeds capacity {self.capacity}")
                normalized.append(MckpItem(int(item.weight), float(item.value)))
            classes.append(tuple(normalized))
        object.__setattr__(self, 'classes', tuple(classes))
        object.__setattr__(self, 'capacity', int(self.capacity))


@dataclass(frozen=True)
class MckpSolution:
    """Selected item index per class (None when the class is skipped)."""

    value: float
    selection: tuple

    def weights(self, inst):
        return tuple(0 if k is None else inst.classes[c][k].weight for c, k in enumerate(self.selection))


@dataclass(frozen=True)
class GadgetReduction:
    cgp: DiscreteCgpInstance
    baseline: float


def exact_dp(inst, max_cells: Optional[int] = None):
    """
    Exact optimum of a discrete CGP by dynamic programming.

    Counts sum to exactly `units`; ties go to the smaller count at the
    earlier good.

    Raises:
        ResourceLimitError: n * units**2 exceeds the cell budget.
    """
    if max_cells is None:
        max_cells = get_settings().dp_cell_budget
    n, units = len(inst.alphas), inst.units
    if n * units * units > max_cells:
        raise ResourceLimitError(f"Exact DP needs {n * units * units} cells, budget is {max_cells}")

    gains = np.array(
        [[inst.utility(alpha + j) for j in range(units + 1)] for alpha in inst.alphas],
        dtype=float,
    )

    # best[i, b]: optimum of goods i.. with exactly b units
    best = np.full((n + 1, units + 1), -np.inf)
    best[n, 0] = 0.0
    for i in range(n - 1, -1, -1):
        for b in range(units + 1):
            best[i, b] = np.max(gains[i, :b + 1] + best[i + 1, b::-1])

    counts = []
    remaining = units
    for i in range(n):
        options = gains[i, :remaining + 1] + best[i + 1, remaining::-1]
        j = int(np.flatnonzero(options >= best[i, remaining] - TIE_TOL)[0])
        counts.append(j)
        remaining -= j

    logger.debug("exact dp: n=%d units=%d value=%.12g", n, units, best[0, units])
    return DpResult(value=float(best[0, units]), counts=tuple(counts))


def mckp_reduce(inst):
    """
    One class per good with items (weight j, value U(alpha_i + j)), j = 0..units.

    The zero-weight item keeps the ground-level utility when a good receives
    nothing, so MCKP and CGP optima coincide.
    """
    classes = tuple(
        tuple(MckpItem(j, float(inst.utility(alpha + j))) for j in range(inst.units + 1))
        for alpha in inst.alphas
    )
    return MckpInstance(classes=classes, capacity=inst.units)


def mckp_exact(inst):
    """Exact MCKP optimum by DP over capacity."""
    capacity = inst.capacity
    best = np.zeros(capacity + 1)
    choices = []
    for items in inst.classes:
        updated = best.copy()
        choice = np.full(capacity + 1, -1, dtype=np.int64)
        for k, item in enumerate(items):
            candidate = np.full(capacity + 1, -np.inf)
            candidate[item.weight:] = best[:capacity + 1 - item.weight] + item.value
            better = candidate > updated + TIE_TOL
            updated = np.where(better, candidate, updated)
            choice = np.where(better, k, choice)
        best = updated
        choices.append(choice)

    selection = [None] * len(inst.classes)
    b = capacity
    for c in range(len(inst.classes) - 1, -1, -1):
        k = int(choices[c][b])
        if k >= 0:
            selection[c] = k
            b -= inst.classes[c][k].weight

    value = sum(inst.classes[c][k].value for c, k in enumerate(selection) if k is not None)
    return MckpSolution(value=float(value), selection=tuple(selection))


def mckp_fptas(inst, eps):
    """
    (1 - eps)-approximate MCKP by profit scaling.

    Profits are scaled by delta = eps * P / (number of classes), P being the
    largest item value; a DP over scaled profit keeps the minimum weight of
    each reachable profit and the best feasible profit is traced back.

    Raises:
        ValidationError: eps outside (0, 1).
    """
    if not 0.0 < eps < 1.0:
        raise ValidationError(f"eps must lie in (0, 1), got {eps!r}")

    classes = [c for c in inst.classes]
    if not classes or not any(classes):
        return MckpSolution(value=0.0, selection=tuple(None for _ in classes))

    if len(classes) == 1:
        # A single class needs no scaling: pick the best item outright
        k = max(range(len(classes[0])), key=lambda idx: (classes[0][idx].value, -idx))
        return MckpSolution(value=classes[0][k].value, selection=(k,))

    top = max(item.value for items in classes for item in items)
    if top <= 0.0:
        return MckpSolution(value=0.0, selection=tuple(None for _ in classes))

    delta = eps * top / len(classes)
    scaled = [[int(math.floor(item.value / delta)) for item in items] for items in classes]
    max_profit = sum(max(profits, default=0) for profits in scaled)

    min_weight = np.full(max_profit + 1, _UNREACHABLE, dtype=np.int64)
    min_weight[0] = 0
    choices = []
    for items, profits in zip(classes, scaled):
        updated = min_weight.copy()
        choice = np.full(max_profit + 1, -1, dtype=np.int32)
        for k, (item, profit) in enumerate(zip(items, profits)):
            candidate = np.full(max_profit + 1, _UNREACHABLE, dtype=np.int64)
            candidate[profit:] = min_weight[:max_profit + 1 - profit] + item.weight
            better = candidate < updated
            updated = np.where(better, candidate, updated)
            choice = np.where(better, k, choice)
        min_weight = updated
        choices.append(choice)

    feasible = np.flatnonzero(min_weight <= inst.capacity)
    q = int(feasible[-1])

    selection = [None] * len(classes)
    for c in range(len(classes) - 1, -1, -1):
        k = int(choices[c][q])
        if k >= 0:
            selection[c] = k
            q -= scaled[c][k]

    value = sum(classes[c][k].value for c, k in enumerate(selection) if k is not None)
    logger.debug("mckp fptas: eps=%g delta=%.3g profits=%d value=%.12g", eps, delta, max_profit, value)
    return MckpSolution(value=float(value), selection=tuple(selection))


def cgp_fptas(inst, eps):
    """
    Approximate discrete CGP through its MCKP reduction.

    Item k of class i carries k units, so the selection maps straight back to
    counts; a skipped class means zero units on that good.
    """
    solution = mckp_fptas(mckp_reduce(inst), eps)
    counts = tuple(0 if k is None else k for k in solution.selection)
    value = sum(inst.utility(alpha + c) for alpha, c in zip(inst.alphas, counts))
    return DpResult(value=float(value), counts=counts)


def gadget_utility(level, inst):
    """
    Utility of the UKP gadget at an integer level.

    With bracket index mu = level // B + 1 and remainder nu = level % B, the value
    is the full-capacity value of every item below mu, plus floor(nu / w_mu) * v_mu,
    plus level / ((n**2 - n + 2) * B**2).
    """
    n, capacity = len(inst.items), inst.capacity
    if int(level) != level or not 0 <= level <= n * capacity:
        raise ValidationError(f"Gadget level must be an integer in [0, {n * capacity}], got {level!r}")
    level = int(level)

    bracket, remainder = divmod(level, capacity)
    full = sum((capacity // item.weight) * item.value for item in inst.items[:bracket])
    partial = 0
    if bracket < n:
        item = inst.items[bracket]
        partial = (remainder // item.weight) * item.value
    return full + partial + level / ((n * n - n + 2) * capacity * capacity)


class GadgetUtility:
    """Callable gadget utility bound to one UKP instance."""

    def __init__(self, inst):
        self.inst = inst

    def __call__(self, level):
        return gadget_utility(round(level), self.inst)

    def __repr__(self):
        return f"GadgetUtility({self.inst!r})"


def ukp_to_cgp(inst):
    """
    Embed a normalized UKP instance into a discrete CGP.

    Good i (0-based) sits at ground level i * B; the agent holds B unit atoms.
    The CGP optimum equals baseline + UKP optimum.
    """
    if not inst.items:
        raise ValidationError("The gadget needs at least one item")
    capacity = inst.capacity
    full_values = [(capacity // item.weight) * item.value for item in inst.items]
    baseline = sum(sum(full_values[:j]) for j in range(len(inst.items))) + 1.0 / (2 * capacity)

    cgp = DiscreteCgpInstance(
        alphas=tuple(float(i * capacity) for i in range(len(inst.items))),
        units=capacity,
        utility=GadgetUtility(inst),
    )
    return GadgetReduction(cgp=cgp, baseline=baseline)


def ukp_brute(inst, max_capacity: Optional[int] = None):
    """Exact UKP optimum by unbounded DP over capacity."""
    if max_capacity is None:
        max_capacity = get_settings().ukp_capacity_limit
    if inst.capacity > max_capacity:
        raise ResourceLimitError(f"UKP capacity {inst.capacity} exceeds the limit {max_capacity}")

    best = [0] * (inst.capacity + 1)
    for c in range(1, inst.capacity + 1):
        best[c] = best[c - 1]
        for item in inst.items:
            if item.weight <= c:
                best[c] = max(best[c], best[c - item.weight] + item.value)
    return best[inst.capacity]
