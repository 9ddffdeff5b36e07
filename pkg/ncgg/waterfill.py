"""
Continuous single-agent common goods problem.

For any increasing, concave, differentiable utility the optimal split of a
budget over goods with ground levels alpha is the same water-filling profile
x_i = max(0, w - alpha_i), with the common level w fixed by the budget.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from ncgg.core import water_levels
from ncgg.errors import ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CgpInstance:
    alphas: tuple
    budget: float = 1.0

    def __post_init__(self):
        alphas = tuple(float(a) for a in self.alphas)
        if not alphas:
            raise ValidationError("A common goods problem needs at least one good")
        if not all(math.isfinite(a) and a >= 0.0 for a in alphas):
            raise ValidationError(f"Ground levels must be finite and nonnegative, got {alphas}")
        if not (math.isfinite(self.budget) and self.budget > 0.0):
            raise ValidationError(f"Budget must be positive, got {self.budget!r}")
        object.__setattr__(self, 'alphas', alphas)
        object.__setattr__(self, 'budget', float(self.budget))


@dataclass(frozen=True)
class WaterFillSolution:
    x: tuple
    level: float


@dataclass(frozen=True)
class KktCertificate:
    """Multipliers recovered from a candidate point and its worst KKT violation."""

    nu: float
    lambdas: tuple
    max_violation: float
    tol: float

    @property
    def passed(self):
        return self.max_violation <= self.tol


def water_fill(inst):
    """
    Solve the continuous CGP by water-filling.

    Sorts ground levels ascending and sweeps prefix sums for the first k with
    (budget + sum of the k lowest levels) / k not above the next level.

    Args:
        inst (CgpInstance): Ground levels and budget.

    Returns:
        WaterFillSolution: The unique optimum and its water level.
    """
    alphas = np.asarray(inst.alphas, dtype=float)
    order = np.argsort(alphas, kind='stable')
    ordered = alphas[order]
    prefix = np.cumsum(ordered)

    n = len(ordered)
    level = (inst.budget + prefix[-1]) / n
    for k in range(1, n):
        candidate = (inst.budget + prefix[k - 1]) / k
        if candidate <= ordered[k]:
            level = candidate
            break

    x = np.maximum(0.0, level - alphas)
    return WaterFillSolution(x=tuple(float(v) for v in x), level=float(level))


def kkt_verify(inst, x, u, tol=1e-6):
    """
    Certify a candidate allocation against the KKT conditions.

    nu is the smallest marginal utility over goods carrying more than tol;
    lambda_i = nu - u'(level_i), clipped at zero. The violation is the largest of
    negativity, budget imbalance, complementary slackness and stationarity.

    Args:
        inst (CgpInstance): Problem instance.
        x (sequence): Candidate allocation, one entry per good.
        u (UtilityFunction): Utility whose optimality is certified.
        tol (float): Pass threshold.

    Returns:
        KktCertificate
    """
    x = np.asarray(x, dtype=float)
    alphas = np.asarray(inst.alphas, dtype=float)
    if x.shape != alphas.shape:
        raise ValidationError(f"Allocation has {x.size} entries for {alphas.size} goods")

    marginal = np.asarray(u.derivative(alphas + x), dtype=float)
    carrying = x > tol
    nu = float(np.min(marginal[carrying])) if carrying.any() else float(np.min(marginal))
    with np.errstate(invalid='ignore'):
        lambdas = np.maximum(0.0, nu - marginal)
        lambdas = np.where(np.isfinite(lambdas), lambdas, 0.0)

        violations = [
            float(np.max(np.maximum(0.0, -x))),
            abs(float(np.sum(x)) - inst.budget),
            float(np.max(np.abs(lambdas * x))),
            float(np.max(np.abs(marginal + lambdas - nu))),
        ]
    max_violation = max(v if not math.isnan(v) else math.inf for v in violations)

    return KktCertificate(
        nu=nu,
        lambdas=tuple(float(v) for v in lambdas),
        max_violation=max_violation,
        tol=tol,
    )


def best_response(instance, alloc, agent_id):
    """
    Continuous best response of one agent against everybody else.

    Effective ground levels are the current levels minus the agent's own
    contribution; the agent water-fills its budget over them.

    Returns:
        dict: Replacement row, good id -> amount.
    """
    j = instance.agent_position(agent_id)
    goods = instance.agent_goods[j]
    if not goods:
        raise ValidationError(f"Agent {agent_id!r} has no adjacent good")

    levels = water_levels(instance, alloc)
    return _best_response_row(instance, alloc, j, levels)


def _best_response_row(instance, alloc, j, levels):
    agent = instance.agents[j]
    goods = instance.agent_goods[j]
    ids = [instance.goods[i].id for i in goods]
    effective = [max(0.0, levels[i] - alloc.amount(gid, agent.id)) for i, gid in zip(goods, ids)]

    solution = water_fill(CgpInstance(tuple(effective), agent.budget))
    logger.debug("best response of %s: level %.6g", agent.id, solution.level)
    return dict(zip(ids, solution.x))
