import math

import numpy as np
import pytest

from conftest import SQRT, complete_bipartite, single_agent
from ncgg.core import Allocation, UtilityFunction, potential_psi, water_levels
from ncgg.dynamics import (
    DynamicsConfig, InitialState, Schedule, choose_k, discrete_best_response_sweep, initial_allocation, is_eps_ne,
    phi_of_levels, potential_phi, run_dynamics,
)
from ncgg.errors import ValidationError
from ncgg.generators import random_bipartite, random_utility
from ncgg.lab import all_common_allocation, all_private_allocation
from ncgg.waterfill import CgpInstance, water_fill


def mild_utility(rng):
    """Utilities whose resolution K stays small enough for quick suites."""
    if rng.random() < 0.5:
        return UtilityFunction.power(float(rng.uniform(0.8, 0.95)))
    return UtilityFunction.scaled_log(float(rng.uniform(0.5, 3.0)))


def assert_trace_invariants(instance, result):
    trace = result.trace
    assert trace.converged
    phis = [r.potential_phi for r in trace.rounds]
    psis = [r.potential_psi for r in trace.rounds]
    assert np.all(np.diff(phis) <= 1e-12)
    assert np.all(np.diff(psis) >= -1e-12)
    assert trace.total_moves <= 2 * trace.k * instance.m * instance.n ** 2
    assert sum(r.moves for r in trace.rounds) == trace.total_moves
    assert result.alloc.is_complete(instance)


class TestChooseK:
    def test_sqrt_four_goods(self):
        assert choose_k(single_agent([0.0] * 4), 0.25) == 256

    def test_log_four_goods(self):
        instance = single_agent([0.0] * 4, utility=UtilityFunction.scaled_log(1.0))
        assert choose_k(instance, 1.0) == math.ceil(1 / math.expm1(0.25)) == 4

    def test_large_epsilon_floors_at_one(self):
        assert choose_k(single_agent([0.0]), 100.0) == 1

    def test_takes_the_steepest_agent(self):
        instance = complete_bipartite(2, 2).with_utilities([SQRT, UtilityFunction.power(0.9)])
        assert choose_k(instance, 0.1) == 400

    def test_scales_with_budget(self):
        assert choose_k(single_agent([0.0] * 4, budget=2.0), 0.25) == 512

    @pytest.mark.parametrize("epsilon", [0.0, -1.0, float("inf")])
    def test_rejects_bad_epsilon(self, epsilon):
        with pytest.raises(ValidationError):
            choose_k(single_agent([0.0]), epsilon)

    def test_rejects_epsilon_below_utility_resolution(self):
        with pytest.raises(ValidationError):
            choose_k(single_agent([0.0], utility=UtilityFunction.power(0.1)), 1e-300)


class TestPotentialPhi:
    def test_single_good_is_zero(self):
        assert potential_phi(single_agent([2.5]), Allocation({("p_1", "a_1"): 1.0})) == 0.0

    def test_two_levels(self):
        assert potential_phi(single_agent([3.0, 1.0]), Allocation()) == 3.0
        assert potential_phi(single_agent([1.0, 3.0]), Allocation()) == 3.0

    def test_equal_levels(self):
        assert phi_of_levels([0.7, 0.7, 0.7]) == pytest.approx(3 * 0.7)


class TestSweep:
    def test_single_neighbour_makes_no_move(self):
        result = discrete_best_response_sweep(single_agent([0.0]), Allocation({("p_1", "a_1"): 1.0}), "a_1", 2)
        assert result.moves == 0
        assert result.row == {"p_1": 1.0}

    def test_mass_flows_to_the_lower_good(self):
        instance = single_agent([1.0, 0.0])
        result = discrete_best_response_sweep(instance, Allocation({("p_1", "a_1"): 1.0}), "a_1", 2)
        assert result.moves == 4
        assert result.row == {"p_1": 0.0, "p_2": 1.0}

    def test_flat_ground_splits_evenly(self):
        instance = single_agent([0.0, 0.0])
        result = discrete_best_response_sweep(instance, Allocation({("p_1", "a_1"): 1.0}), "a_1", 2)
        assert result.moves == 2
        assert result.row == {"p_1": 0.5, "p_2": 0.5}

    def test_balanced_neighbourhood_makes_no_move(self):
        instance = single_agent([0.0, 0.0])
        alloc = Allocation({("p_1", "a_1"): 0.5, ("p_2", "a_1"): 0.5})
        assert discrete_best_response_sweep(instance, alloc, "a_1", 2).moves == 0

    def test_other_agents_count_as_ground(self, two_by_two):
        alloc = Allocation({("p_1", "a_2"): 1.0, ("p_1", "a_1"): 1.0})
        result = discrete_best_response_sweep(two_by_two, alloc, "a_1", 4)
        assert result.row == {"p_1": 0.0, "p_2": 1.0}

    def test_rejects_row_off_the_atom_grid(self):
        with pytest.raises(ValidationError):
            discrete_best_response_sweep(single_agent([0.0, 0.0]), Allocation({("p_1", "a_1"): 0.3}), "a_1", 2)


class TestDynamicsConfig:
    def test_coerces_strings(self):
        config = DynamicsConfig(epsilon=0.1, schedule="round-robin", initial_state="uniform-split")
        assert config.schedule is Schedule.ROUND_ROBIN
        assert config.initial_state is InitialState.UNIFORM_SPLIT

    @pytest.mark.parametrize("kwargs", [
        {"epsilon": 0.0},
        {"epsilon": 0.1, "max_rounds": 0},
        {"epsilon": 0.1, "schedule": "fastest-first"},
        {"epsilon": 0.1, "k": 0},
    ])
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ValidationError):
            DynamicsConfig(**kwargs)

    def test_from_settings(self):
        config = DynamicsConfig.from_settings(seed=5)
        assert config.epsilon == 0.1
        assert config.schedule is Schedule.STALE_ONLY
        assert config.max_rounds == 200000
        assert config.seed == 5


class TestInitialStates:
    def test_all_on_first_neighbour(self, star4):
        alloc = initial_allocation(star4, 3, InitialState.ALL_ON_FIRST)
        assert alloc == Allocation({e: (1.0 if e[0] == "p_c" else 0.0) for e in star4.edges})

    def test_uniform_split_rounds_to_the_first_neighbour(self):
        instance = single_agent([0.0, 0.0, 0.0])
        alloc = initial_allocation(instance, 4, InitialState.UNIFORM_SPLIT)
        assert alloc.row("a_1") == {"p_1": 0.5, "p_2": 0.25, "p_3": 0.25}

    def test_random_is_seeded_and_complete(self):
        instance = random_bipartite(5, 4, 0.6, seed=2)
        first = initial_allocation(instance, 10, "random", seed=7)
        assert first == initial_allocation(instance, 10, "random", seed=7)
        assert first.is_complete(instance)


class TestRunDynamics:
    def test_single_agent_reaches_water_fill(self):
        instance = single_agent([1.0, 0.0])
        result = run_dynamics(instance, DynamicsConfig(epsilon=0.01, seed=1))
        k = result.trace.k
        assert k == 40000
        assert result.trace.converged
        assert result.alloc["p_1", "a_1"] == pytest.approx(0.0, abs=1.0 / k)
        assert result.alloc["p_2", "a_1"] == pytest.approx(1.0, abs=1.0 / k)

    def test_two_by_two_levels_are_exact(self, two_by_two):
        result = run_dynamics(two_by_two, DynamicsConfig(epsilon=0.1, seed=3, k=256))
        assert result.trace.converged
        assert water_levels(two_by_two, result.alloc).tolist() == [1.0, 1.0]

    def test_two_by_two_default_resolution(self, two_by_two):
        result = run_dynamics(two_by_two, DynamicsConfig(epsilon=0.1, seed=4))
        assert result.trace.k == 400
        assert water_levels(two_by_two, result.alloc) == pytest.approx([1.0, 1.0], abs=1e-12)

    def test_star_all_private_needs_no_move(self, star4):
        result = run_dynamics(star4, DynamicsConfig(epsilon=0.1), initial=all_private_allocation(star4))
        assert result.trace.converged
        assert result.trace.rounds == []
        assert result.trace.total_moves == 0
        assert dict(result.alloc) == pytest.approx(
            {e: (0.0 if e[0] == "p_c" else 1.0) for e in star4.edges}
        )

    def test_round_budget_exhaustion_is_reported(self, star4):
        config = DynamicsConfig(epsilon=0.1, max_rounds=1, initial_state="all-on-first-neighbor")
        result = run_dynamics(star4, config)
        assert not result.trace.converged
        assert len(result.trace.rounds) == 1

    def test_round_robin_cycles_agents(self, star4):
        config = DynamicsConfig(epsilon=0.1, schedule="round-robin", initial_state="all-on-first-neighbor")
        result = run_dynamics(star4, config)
        assert result.trace.converged
        agents = [r.agent for r in result.trace.rounds]
        assert agents[:4] == ["a_1", "a_2", "a_3", "a_4"]

    def test_stale_only_never_wastes_a_round(self):
        instance = random_bipartite(5, 5, 0.5, seed=8, utility=UtilityFunction.power(0.9))
        result = run_dynamics(instance, DynamicsConfig(epsilon=0.1, seed=2))
        assert result.trace.converged
        assert all(r.moves > 0 for r in result.trace.rounds)

    @pytest.mark.parametrize("schedule", list(Schedule))
    def test_deterministic_given_seed(self, schedule):
        instance = random_bipartite(4, 4, 0.6, seed=13, utility=UtilityFunction.scaled_log(1.0))
        config = DynamicsConfig(epsilon=0.1, schedule=schedule, seed=99)
        first, second = run_dynamics(instance, config), run_dynamics(instance, config)
        assert first.trace == second.trace
        assert first.alloc == second.alloc

    def test_warm_start_validation(self, two_by_two):
        with pytest.raises(ValidationError):
            run_dynamics(two_by_two, DynamicsConfig(epsilon=0.1, k=2), initial=Allocation({("p_1", "a_1"): 1.0}))
        off_grid = Allocation({("p_1", "a_1"): 0.3, ("p_2", "a_1"): 0.7, ("p_1", "a_2"): 1.0})
        with pytest.raises(ValidationError):
            run_dynamics(two_by_two, DynamicsConfig(epsilon=0.1, k=2), initial=off_grid)

    def test_each_move_lowers_phi(self, rng):
        for trial in range(10):
            instance = random_bipartite(
                int(rng.integers(2, 6)), int(rng.integers(1, 6)), 0.5, seed=trial, utility=mild_utility(rng)
            )
            result = run_dynamics(instance, DynamicsConfig(epsilon=0.2, seed=trial, record_moves=True))
            phis = np.array(result.trace.move_phis)
            assert len(phis) == result.trace.total_moves + 1
            assert np.all(np.diff(phis) < 0)
            assert phis[-1] == pytest.approx(potential_phi(instance, result.alloc))

    def test_rounds_record_both_potentials(self, two_by_two):
        result = run_dynamics(two_by_two, DynamicsConfig(epsilon=0.1, seed=6, initial_state="all-on-first-neighbor"))
        last = result.trace.rounds[-1]
        assert last.potential_phi == pytest.approx(potential_phi(two_by_two, result.alloc))
        assert last.potential_psi == pytest.approx(potential_psi(two_by_two, result.alloc))

    def test_single_agent_matches_water_fill(self, rng):
        for trial in range(20):
            alphas = [float(a) for a in rng.uniform(0, 1, size=int(rng.integers(1, 6)))]
            instance = single_agent(alphas)
            result = run_dynamics(instance, DynamicsConfig(epsilon=0.5, seed=trial))
            k = result.trace.k
            expected = water_fill(CgpInstance(tuple(alphas), 1.0)).x
            for i, x in enumerate(expected):
                assert result.alloc.amount(f"p_{i + 1}", "a_1") == pytest.approx(x, abs=1.0 / k + 1e-9)

    def test_random_instances_converge_to_eps_equilibria(self, rng):
        for trial in range(20):
            instance = random_bipartite(
                int(rng.integers(1, 7)), int(rng.integers(1, 7)), 0.5, seed=100 + trial, utility=mild_utility(rng)
            )
            result = run_dynamics(instance, DynamicsConfig(epsilon=0.1, seed=trial))
            assert_trace_invariants(instance, result)
            assert is_eps_ne(instance, result.alloc, 0.1).ok

    @pytest.mark.slow
    def test_acceptance_sweep(self):
        rng = np.random.default_rng(2025)
        for trial in range(100):
            n, m = int(rng.integers(1, 11)), int(rng.integers(1, 11))
            instance = random_bipartite(n, m, 0.4, seed=int(rng.integers(1 << 30)))
            result = run_dynamics(instance, DynamicsConfig(epsilon=0.05, seed=trial, record_moves=True))
            assert_trace_invariants(instance, result)
            assert np.all(np.diff(result.trace.move_phis) < 0)
            assert is_eps_ne(instance, result.alloc, 0.05).ok


class TestIsEpsNe:
    def test_star_all_private_is_exact(self, star4):
        report = is_eps_ne(star4, all_private_allocation(star4), 1e-9)
        assert report.ok
        assert report.worst_gap <= 1e-12

    def test_star_all_common_gap(self, star4):
        report = is_eps_ne(star4, all_common_allocation(star4), 0.7)
        assert not report.ok
        assert report.worst_gap == pytest.approx(1 + math.sqrt(4) - math.sqrt(5))
        assert is_eps_ne(star4, all_common_allocation(star4), 0.8).ok
        assert set(report.gaps) == {"a_1", "a_2", "a_3", "a_4"}

    def test_single_agent_at_optimum(self):
        alphas = (0.2, 0.5, 3.0)
        x = water_fill(CgpInstance(alphas, 1.0)).x
        instance = single_agent(list(alphas))
        alloc = Allocation({(f"p_{i + 1}", "a_1"): v for i, v in enumerate(x)})
        assert is_eps_ne(instance, alloc, 1e-9).ok

    def test_incomplete_allocation_rejected(self, two_by_two):
        with pytest.raises(ValidationError):
            is_eps_ne(two_by_two, Allocation({("p_1", "a_1"): 1.0}), 0.1)

    def test_worst_agent_is_reported(self, two_by_two):
        alloc = Allocation({("p_1", "a_1"): 1.0, ("p_1", "a_2"): 0.5, ("p_2", "a_2"): 0.5})
        report = is_eps_ne(two_by_two, alloc, 0.01)
        assert report.worst_agent == max(report.gaps, key=report.gaps.get)
        assert report.worst_gap > 0.01


def test_random_utilities_converge_too(rng):
    instance = random_bipartite(3, 3, 0.7, seed=21)
    instance = instance.with_utilities(random_utility(rng) for _ in instance.agents)
    result = run_dynamics(instance, DynamicsConfig(epsilon=0.5, seed=0))
    assert_trace_invariants(instance, result)
    assert is_eps_ne(instance, result.alloc, 0.5).ok
