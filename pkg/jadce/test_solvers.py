import unittest
from unittest import mock

import numpy as np

from jadce import prox
from jadce.model import generate_scenario
from jadce.solvers import (CONVERGED, MAX_ITER, NO_CONVERGENCE, REGISTRY,
                           BranchAndBoundSolver, GroupLassoSolver,
                           OracleSolver, RecoveryResult, ReweightedSolver,
                           get_solver)


class TestRegistry(unittest.TestCase):

    def test_get_solver(self):
        assert isinstance(get_solver('group-lasso'), GroupLassoSolver)
        assert isinstance(get_solver('reweighted', outer_iters=2), ReweightedSolver)
        assert isinstance(get_solver('bnb', node_limit=10), BranchAndBoundSolver)
        assert isinstance(get_solver('oracle'), OracleSolver)
        assert set(REGISTRY) == {'group-lasso', 'reweighted', 'bnb', 'oracle'}

    def test_unknown_solver(self):
        with self.assertRaises(NotImplementedError):
            get_solver('cplex')


class TestSolvers(unittest.TestCase):

    def setUp(self):
        self.scenario = generate_scenario(10, 2, 4, 2, seed=3)

    def test_exact_solvers_agree(self):
        bnb = get_solver('bnb')(self.scenario, 0.0)
        oracle = get_solver('oracle')(self.scenario, 0.0)
        assert isinstance(bnb, RecoveryResult)
        assert bnb.status == oracle.status == 'optimal'
        assert bnb.objective == oracle.objective == 2
        assert bnb.support == oracle.support == self.scenario.active_set
        assert np.allclose(bnb.estimate, self.scenario.ground_truth)
        assert bnb.runtime_ms >= 0

    def test_convex_solver_result(self):
        scenario = generate_scenario(30, 2, 20, 5, seed=1)
        result = get_solver('group-lasso')(scenario, 0.0)
        assert result.solver == 'group-lasso'
        assert result.status in (CONVERGED, MAX_ITER)
        assert result.estimate.shape == (30, 2)
        assert result.activity.shape == (30,)
        assert result.gamma0 > 0
        summary = result.to_dict()
        assert summary['solver'] == 'group-lasso'
        assert summary['support'] == list(result.support)

    def test_fixed_gamma0(self):
        result = get_solver('oracle', gamma0=1e-3)(self.scenario, 0.0)
        assert result.gamma0 == 1e-3
        assert np.array_equal(result.activity, self.scenario.activity)

    def test_recover_from_convergence_error(self):
        solver = get_solver('group-lasso', gamma0=1e-6)
        best = prox.ProxResult(
            estimate=self.scenario.ground_truth * 0.9,
            iterations=10,
            final_objective=1.0,
            residual_fro=0.1,
            converged=False,
        )
        error = prox.ConvergenceError('no bracket', best=best)
        with mock.patch('jadce.prox.solve_constrained', side_effect=error):
            with self.assertRaises(prox.ConvergenceError):
                solver(self.scenario, 0.0)
        result = solver.recover_from(self.scenario, error, 0.0)
        assert result.status == NO_CONVERGENCE
        assert np.allclose(result.estimate, self.scenario.ground_truth)

    def test_exact_solvers_do_not_recover(self):
        solver = get_solver('bnb')
        assert solver.recover_from(self.scenario, ValueError('x'), 0.0) is None
