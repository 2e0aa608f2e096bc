import os
import unittest

import numpy as np

from jadce.exact import (INFEASIBLE, NODE_LIMIT, OPTIMAL, BnbNode, MiqcpInstance,
                         activity_indicator, bnb_solve, brute_force_min_support,
                         compute_beta, least_squares_on_support,
                         node_lower_bound, satisfies_big_beta, within_beta)
from jadce.metrics import calibrate_epsilon, nmse_db
from jadce.model import InvalidArgument, generate_scenario


FULL_TESTS = os.environ.get('JADCE_FULL_TESTS') == '1'


def oracle_cases(count):
    """
    Seeded small instances: N <= 12, K <= 3, M in {1, 2}, noiseless and SNR 30.
    """
    rng = np.random.default_rng(2024)
    for case in range(count):
        n = int(rng.choice([8, 10, 12]))
        k = int(rng.integers(1, 4))
        m = int(rng.choice([1, 2]))
        pilot_len = int(rng.integers(k, k + 4))
        snr = None if case % 2 == 0 else 30.0
        yield generate_scenario(n, m, pilot_len, k, snr_db=snr, seed=case)


class TestHelpers(unittest.TestCase):

    def test_compute_beta(self):
        scenario = generate_scenario(10, 2, 4, 2, seed=0)
        beta = compute_beta(scenario.pilots, scenario.observation)
        assert np.isclose(beta, 6 / np.sqrt(2))
        with self.assertRaises(InvalidArgument):
            compute_beta(scenario.pilots, scenario.observation, epsilon=-1.0)

    def test_beta_covers_channels(self):
        inside = 0
        for seed in range(1000):
            scenario = generate_scenario(30, 2, 6, 5, seed=seed)
            beta = compute_beta(scenario.pilots, scenario.observation)
            inside += within_beta(scenario.ground_truth, beta)
        assert inside >= 990

    def test_least_squares_on_true_support(self):
        scenario = generate_scenario(12, 2, 6, 3, seed=1)
        estimate, residual = least_squares_on_support(
            scenario.pilots, scenario.observation, scenario.active_set
        )
        assert residual <= 1e-10
        assert np.allclose(estimate, scenario.ground_truth)
        with self.assertRaises(InvalidArgument):
            least_squares_on_support(scenario.pilots, scenario.observation, [12])

    def test_empty_support(self):
        scenario = generate_scenario(12, 2, 6, 3, seed=1)
        estimate, residual = least_squares_on_support(scenario.pilots, scenario.observation, [])
        assert not np.any(estimate)
        assert np.isclose(residual, np.linalg.norm(scenario.observation))

    def test_instance_validation(self):
        scenario = generate_scenario(8, 1, 4, 2, seed=0)
        with self.assertRaises(InvalidArgument):
            MiqcpInstance.from_scenario(scenario, beta=-1.0)
        with self.assertRaises(InvalidArgument):
            MiqcpInstance.from_scenario(scenario, epsilon=-0.1)
        instance = MiqcpInstance.from_scenario(scenario)
        assert np.array_equal(instance.pilots, scenario.pilots)
        assert instance.n_groups == 8


class TestBigBeta(unittest.TestCase):

    def test_indicator_matches_support(self):
        for seed in range(100):
            scenario = generate_scenario(10, 2, 4, 3, seed=seed)
            b = activity_indicator(scenario.ground_truth)
            assert np.array_equal(b, scenario.activity)

    def test_box_constraints(self):
        for seed in range(100):
            scenario = generate_scenario(10, 2, 4, 3, seed=seed)
            x = scenario.ground_truth
            beta = np.abs(np.concatenate([x.real, x.imag])).max() + 1.0
            b = activity_indicator(x)
            assert satisfies_big_beta(x, b, beta)
            if scenario.active_set:
                off = b.copy()
                off[scenario.active_set[0]] = 0
                assert not satisfies_big_beta(x, off, beta)


class TestNodeBound(unittest.TestCase):

    def test_root_with_loose_budget(self):
        scenario = generate_scenario(12, 2, 6, 3, seed=4)
        epsilon = np.linalg.norm(scenario.observation) * 1.01
        instance = MiqcpInstance.from_scenario(scenario, epsilon)
        evaluation = node_lower_bound(instance, BnbNode.root(12))
        assert evaluation.feasible
        assert evaluation.lower_bound == 0
        assert not np.any(evaluation.probe)

    def test_true_support_node(self):
        scenario = generate_scenario(12, 2, 6, 3, seed=5)
        instance = MiqcpInstance.from_scenario(scenario)
        active = scenario.active_set
        node = BnbNode(
            forced_zero=tuple(i for i in range(12) if i not in active),
            forced_one=active,
            undecided=(),
        )
        evaluation = node_lower_bound(instance, node)
        assert evaluation.feasible
        assert evaluation.lower_bound == 3
        assert np.allclose(evaluation.probe, scenario.ground_truth)

    def test_missing_active_device_is_infeasible(self):
        scenario = generate_scenario(12, 2, 8, 3, seed=6)
        instance = MiqcpInstance.from_scenario(scenario)
        active = scenario.active_set
        inactive = [i for i in range(12) if i not in active]
        undecided = tuple(sorted(inactive[:2]))
        forced_one = active[1:]
        node = BnbNode(
            forced_zero=tuple(i for i in range(12) if i not in forced_one + undecided),
            forced_one=forced_one,
            undecided=undecided,
        )
        evaluation = node_lower_bound(instance, node)
        assert not evaluation.feasible

    def test_bound_never_exceeds_optimum(self):
        for scenario in oracle_cases(20):
            epsilon = calibrate_epsilon(scenario.noise_var, scenario.pilot_len, scenario.n_antennas)
            instance = MiqcpInstance.from_scenario(scenario, epsilon)
            oracle = brute_force_min_support(instance)
            root = node_lower_bound(instance, BnbNode.root(instance.n_groups))
            assert root.lower_bound <= oracle.objective + 1e-9

    def test_subspace_bound_reaches_sparsity(self):
        scenario = generate_scenario(30, 2, 7, 5, seed=0)
        instance = MiqcpInstance.from_scenario(scenario)
        evaluation = node_lower_bound(instance, BnbNode.root(30))
        assert evaluation.feasible
        assert evaluation.lower_bound == 5
        assert evaluation.candidate == scenario.active_set

    def test_cutoff_stops_refinement(self):
        scenario = generate_scenario(30, 2, 7, 5, seed=0)
        instance = MiqcpInstance.from_scenario(scenario)
        evaluation = node_lower_bound(instance, BnbNode.root(30), cutoff=3)
        assert 2 <= evaluation.lower_bound <= 3
        assert evaluation.candidate is None

    def test_partition_is_checked(self):
        scenario = generate_scenario(6, 1, 3, 1, seed=0)
        instance = MiqcpInstance.from_scenario(scenario)
        with self.assertRaises(InvalidArgument):
            node_lower_bound(instance, BnbNode(forced_zero=(0,), forced_one=(0,), undecided=(1, 2, 3, 4, 5)))

    def test_branch(self):
        node = BnbNode.root(4)
        one, zero = node.branch(2)
        assert one.forced_one == (2,) and one.undecided == (0, 1, 3)
        assert zero.forced_zero == (2,) and zero.depth == 1


class TestBranchAndBound(unittest.TestCase):

    def test_matches_brute_force(self):
        count = 200 if FULL_TESTS else 40
        for scenario in oracle_cases(count):
            epsilon = calibrate_epsilon(scenario.noise_var, scenario.pilot_len, scenario.n_antennas)
            instance = MiqcpInstance.from_scenario(scenario, epsilon)
            oracle = brute_force_min_support(instance)
            result = bnb_solve(instance)
            assert result.status == OPTIMAL
            assert result.objective == oracle.objective
            if scenario.snr_db is None and scenario.pilot_len >= scenario.n_active + 1:
                assert result.support == oracle.support == scenario.active_set

    def test_popped_bounds_nondecreasing(self):
        scenario = generate_scenario(12, 1, 5, 3, seed=3)
        result = bnb_solve(MiqcpInstance.from_scenario(scenario))
        assert np.all(np.diff(result.popped_bounds) >= -1e-12)

    def test_node_count_guard(self):
        for seed in range(5):
            scenario = generate_scenario(12, 2, 4, 3, seed=seed)
            result = bnb_solve(MiqcpInstance.from_scenario(scenario))
            assert result.status == OPTIMAL
            assert result.nodes_explored <= 10 * 12 * 3
            assert result.support == scenario.active_set

    def test_node_count_guard_at_thirty_devices(self):
        for pilot_len in (7, 10):
            for seed in range(3):
                scenario = generate_scenario(30, 2, pilot_len, 5, seed=seed)
                result = bnb_solve(MiqcpInstance.from_scenario(scenario))
                assert result.status == OPTIMAL
                assert result.support == scenario.active_set
                assert result.nodes_explored <= 10 * 30 * 5

    @unittest.skipUnless(FULL_TESTS, 'set JADCE_FULL_TESTS=1 for full-scale runs')
    def test_node_count_guard_over_hundred_trials(self):
        for pilot_len in (7, 12):
            within = 0
            for seed in range(100):
                scenario = generate_scenario(30, 2, pilot_len, 5, seed=seed)
                result = bnb_solve(MiqcpInstance.from_scenario(scenario))
                assert result.status == OPTIMAL
                within += result.nodes_explored <= 10 * 30 * 5
            assert within >= 90

    def test_incumbent_history_improves(self):
        for scenario in oracle_cases(20):
            epsilon = calibrate_epsilon(scenario.noise_var, scenario.pilot_len, scenario.n_antennas)
            result = bnb_solve(MiqcpInstance.from_scenario(scenario, epsilon))
            nodes = [count for count, _ in result.incumbent_history]
            objectives = [objective for _, objective in result.incumbent_history]
            assert nodes == sorted(nodes)
            assert all(b < a for a, b in zip(objectives, objectives[1:]))
            if objectives:
                assert objectives[-1] == result.objective

    def test_deterministic(self):
        scenario = generate_scenario(12, 2, 5, 3, snr_db=30.0, seed=7)
        epsilon = calibrate_epsilon(scenario.noise_var, 5, 2)
        first = bnb_solve(MiqcpInstance.from_scenario(scenario, epsilon))
        second = bnb_solve(MiqcpInstance.from_scenario(scenario, epsilon))
        assert first.support == second.support
        assert first.objective == second.objective
        assert first.status == second.status
        assert first.nodes_explored == second.nodes_explored
        assert first.incumbent_history == second.incumbent_history
        assert first.popped_bounds == second.popped_bounds
        assert np.array_equal(first.estimate, second.estimate)

    def test_node_limit(self):
        scenario = generate_scenario(20, 1, 5, 4, seed=8)
        result = bnb_solve(MiqcpInstance.from_scenario(scenario), node_limit=1)
        assert result.status in (OPTIMAL, NODE_LIMIT)
        assert result.nodes_explored <= 1
        assert result.objective is not None
        assert result.lower_bound <= result.objective + 1e-9
        with self.assertRaises(InvalidArgument):
            bnb_solve(MiqcpInstance.from_scenario(scenario), node_limit=0)

    def test_zero_observation(self):
        scenario = generate_scenario(10, 2, 4, 0, seed=1)
        result = bnb_solve(MiqcpInstance.from_scenario(scenario))
        assert result.status == OPTIMAL
        assert result.objective == 0
        assert not np.any(result.estimate)

    def test_exact_recovery_at_minimum_length(self):
        scenario = generate_scenario(30, 2, 6, 5, seed=0)
        result = bnb_solve(MiqcpInstance.from_scenario(scenario))
        assert result.status == OPTIMAL
        assert result.objective == 5
        assert result.support == scenario.active_set
        assert nmse_db(result.estimate, scenario.ground_truth) <= -100
        assert result.incumbent_history

    def test_infeasible_instance(self):
        # one device, two independent observations: no X reaches the budget
        pilots = np.array([[1.0], [0.0]])
        observation = np.array([[1.0], [1.0]])
        instance = MiqcpInstance.from_complex(pilots, observation, epsilon=0.1)
        assert bnb_solve(instance).status == INFEASIBLE
        assert brute_force_min_support(instance).status == INFEASIBLE


class TestBruteForce(unittest.TestCase):

    def test_recovers_true_support(self):
        scenario = generate_scenario(10, 2, 4, 2, seed=3)
        result = brute_force_min_support(MiqcpInstance.from_scenario(scenario))
        assert result.status == OPTIMAL
        assert result.objective == 2
        assert result.support == scenario.active_set

    def test_group_limit(self):
        scenario = generate_scenario(21, 1, 4, 2, seed=0)
        with self.assertRaises(InvalidArgument):
            brute_force_min_support(MiqcpInstance.from_scenario(scenario))
