import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import exact, prox
from .log import create_logger
from .metrics import activity_threshold, detect_activity


logger = create_logger(__name__)

CONVERGED = 'converged'
MAX_ITER = 'max-iter'
NO_CONVERGENCE = 'no-convergence'


@dataclass(frozen=True, eq=False)
class RecoveryResult:
    """
    Outcome of one solver on one scenario.
    """
    solver: str
    estimate: np.ndarray
    activity: np.ndarray
    status: str
    gamma0: float
    residual_fro: float
    runtime_ms: float
    objective: Optional[int] = None
    iterations: int = 0
    nodes_explored: int = 0

    @property
    def support(self):
        return tuple(int(i) for i in np.flatnonzero(self.activity))

    def to_dict(self):
        return {
            'solver': self.solver,
            'status': self.status,
            'support': list(self.support),
            'objective': self.objective,
            'gamma0': self.gamma0,
            'residual_fro': self.residual_fro,
            'iterations': self.iterations,
            'nodes_explored': self.nodes_explored,
            'runtime_ms': self.runtime_ms,
        }


class Solver(ABC):
    tag = None

    def __init__(self, gamma0=None):
        self.gamma0 = gamma0

    @abstractmethod
    def __call__(self, scenario, epsilon) -> RecoveryResult:
        """
        Recover X from scenario.pilots and scenario.observation under the
        residual budget `epsilon`.
        """
        raise NotImplementedError

    def recover_from(self, scenario, error, started):
        """
        Result to score when the solver raised `error`, or None when there
        is nothing to score.
        """
        return None

    def _detect(self, estimate):
        gamma0 = self.gamma0 if self.gamma0 is not None else activity_threshold(estimate)
        return detect_activity(estimate, gamma0), gamma0

    @staticmethod
    def _elapsed_ms(started):
        return 1000.0 * (time.perf_counter() - started)


class ConvexSolver(Solver):

    def __init__(self, gamma0=None, config=None):
        super().__init__(gamma0)
        self.config = config or prox.ProxConfig()

    @abstractmethod
    def solve(self, scenario, epsilon) -> prox.ProxResult:
        raise NotImplementedError

    def __call__(self, scenario, epsilon):
        started = time.perf_counter()
        result = self.solve(scenario, epsilon)
        status = CONVERGED if result.converged else MAX_ITER
        return self._package(scenario, result, status, started)

    def recover_from(self, scenario, error, started):
        if isinstance(error, prox.ConvergenceError) and error.best is not None:
            return self._package(scenario, error.best, NO_CONVERGENCE, started)
        return None

    def _package(self, scenario, result, status, started):
        estimate = result.estimate
        if not result.debiased:
            gamma0 = self.gamma0
            if gamma0 is None:
                gamma0 = activity_threshold(estimate, self.config.gamma0_fraction)
            estimate = prox.debias(scenario.pilots, scenario.observation, estimate, gamma0)
        activity, gamma0 = self._detect(estimate)
        return RecoveryResult(
            solver=self.tag,
            estimate=estimate,
            activity=activity,
            status=status,
            gamma0=gamma0,
            residual_fro=float(np.linalg.norm(scenario.observation - scenario.pilots @ estimate)),
            runtime_ms=self._elapsed_ms(started),
            iterations=result.iterations,
        )


class GroupLassoSolver(ConvexSolver):
    tag = 'group-lasso'

    def solve(self, scenario, epsilon):
        return prox.solve_constrained(
            scenario.pilots, scenario.observation, epsilon, self.config
        )


class ReweightedSolver(ConvexSolver):
    tag = 'reweighted'

    def __init__(self, gamma0=None, config=None, outer_iters=5):
        super().__init__(gamma0, config)
        self.outer_iters = outer_iters

    def solve(self, scenario, epsilon):
        return prox.solve_reweighted(
            scenario.pilots, scenario.observation, epsilon, self.outer_iters, self.config
        )


class ExactSolver(Solver):

    def __init__(self, gamma0=None, beta=None):
        super().__init__(gamma0)
        self.beta = beta

    @abstractmethod
    def solve(self, instance) -> exact.ExactResult:
        raise NotImplementedError

    def __call__(self, scenario, epsilon):
        started = time.perf_counter()
        instance = exact.MiqcpInstance.from_scenario(scenario, epsilon, self.beta)
        result = self.solve(instance)
        activity, gamma0 = self._detect(result.estimate)
        return RecoveryResult(
            solver=self.tag,
            estimate=result.estimate,
            activity=activity,
            status=result.status,
            gamma0=gamma0,
            residual_fro=result.residual_fro,
            runtime_ms=self._elapsed_ms(started),
            objective=result.objective,
            nodes_explored=result.nodes_explored,
        )


class BranchAndBoundSolver(ExactSolver):
    tag = 'bnb'

    def __init__(self, gamma0=None, beta=None, node_limit=exact.DEFAULT_NODE_LIMIT):
        super().__init__(gamma0, beta)
        self.node_limit = node_limit

    def solve(self, instance):
        return exact.bnb_solve(instance, node_limit=self.node_limit)


class OracleSolver(ExactSolver):
    tag = 'oracle'

    def solve(self, instance):
        return exact.brute_force_min_support(instance)


REGISTRY = {
    GroupLassoSolver.tag: GroupLassoSolver,
    ReweightedSolver.tag: ReweightedSolver,
    BranchAndBoundSolver.tag: BranchAndBoundSolver,
    OracleSolver.tag: OracleSolver,
}


def get_solver(tag, **params):
    try:
        cls = REGISTRY[tag]
    except KeyError:
        raise NotImplementedError(f'Unknown solver: {tag}')
    return cls(**params)
