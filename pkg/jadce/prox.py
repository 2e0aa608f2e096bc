"""
Convex relaxations of group-sparse recovery.

The mixed l1/l2 problem

    min_X  1/2 ||Y - S X||_F^2 + lam * sum_i w_i ||X_i||_2

is solved by accelerated proximal gradient (FISTA with restart on objective
increase) on the real lifting of the system. The constrained form
||Y - S X||_F <= eps is met by searching over lam, and the reweighted variant
repeats the constrained solve with w_i = 1 / (||X_i||_2 + delta).
"""
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .exact import least_squares_on_support
from .log import create_logger
from .metrics import DEFAULT_GAMMA0_FRACTION, activity_threshold, detect_activity
from .model import (InvalidArgument, check_system, derealify, from_groups,
                    real_group_norms, realify, row_group_norms, stack_real,
                    to_groups)


logger = create_logger(__name__)


class ConvergenceError(Exception):
    """
    Raised when the lam search cannot meet the residual budget.
    `best` holds the closest iterate found.
    """
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True, eq=False)
class ProxConfig:
    max_iter: int = 5000
    tol: float = 1e-10
    lam: float = 1.0
    weights: Optional[np.ndarray] = None
    power_iters: int = 30
    lipschitz_margin: float = 0.01
    continuation_factor: float = 0.25
    lambda_min_ratio: float = 1e-8
    max_bisection: int = 50
    band: float = 0.05
    delta_rel: float = 1e-3
    delta_floor: float = 1e-8
    gamma0_fraction: float = DEFAULT_GAMMA0_FRACTION
    stop_on_stable_support: bool = True

    def __post_init__(self):
        if self.max_iter < 1:
            raise InvalidArgument(f'max_iter must be at least 1, got {self.max_iter}')
        if not self.tol >= 0:
            raise InvalidArgument(f'tol must be nonnegative, got {self.tol}')
        if not self.lam >= 0:
            raise InvalidArgument(f'lam must be nonnegative, got {self.lam}')
        if self.weights is not None:
            weights = np.asarray(self.weights, dtype=float)
            if weights.ndim != 1 or not np.all(np.isfinite(weights)) or np.any(weights < 0):
                raise InvalidArgument('weights must be a vector of finite nonnegative values')
        if self.power_iters < 1:
            raise InvalidArgument(f'power_iters must be at least 1, got {self.power_iters}')
        if not 0 < self.continuation_factor < 1:
            raise InvalidArgument('continuation_factor must lie in (0, 1)')
        if not 0 < self.lambda_min_ratio < 1:
            raise InvalidArgument('lambda_min_ratio must lie in (0, 1)')
        if self.max_bisection < 1:
            raise InvalidArgument('max_bisection must be at least 1')
        if not 0 <= self.band < 1:
            raise InvalidArgument('band must lie in [0, 1)')


@dataclass(frozen=True, eq=False)
class ProxResult:
    estimate: np.ndarray
    iterations: int
    final_objective: float
    residual_fro: float
    converged: bool
    lam: float = 0.0
    debiased: bool = False
    outer_iterations: int = 1


def group_prox(groups, threshold):
    """
    Block soft-thresholding: every row g of `groups` (one group per row) is
    mapped to max(0, 1 - threshold / ||g||) g. `threshold` is a scalar or one
    value per group.
    """
    groups = np.asarray(groups, dtype=float)
    threshold = np.broadcast_to(np.asarray(threshold, dtype=float), (groups.shape[0],))
    if np.any(threshold < 0):
        raise InvalidArgument('threshold must be nonnegative')
    norms = np.linalg.norm(groups, axis=1)
    scale = np.zeros_like(norms)
    nonzero = norms > 0
    scale[nonzero] = np.maximum(0.0, 1.0 - threshold[nonzero] / norms[nonzero])
    return groups * scale[:, None]


def spectral_norm(matrix, n_iter=30, seed=0):
    """
    Largest singular value by power iteration on A^T A from a fixed start.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(matrix.shape[1])
    v /= np.linalg.norm(v)
    for _ in range(n_iter):
        w = matrix.T @ (matrix @ v)
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        v = w / norm
    return float(np.linalg.norm(matrix @ v))


def _weights(config, n_groups):
    if config.weights is None:
        return np.ones(n_groups)
    weights = np.asarray(config.weights, dtype=float)
    if weights.shape != (n_groups,):
        raise InvalidArgument(f'expected {n_groups} weights, got shape {weights.shape}')
    return weights


def lambda_max(pilots, observation, weights=None):
    """
    Smallest lam for which X = 0 solves the weighted group lasso:
    max_i ||(S^H Y)_i|| / w_i over groups with w_i > 0.
    """
    pilots, observation = check_system(pilots, observation)
    norms = row_group_norms(pilots.conj().T @ observation)
    weights = np.ones(len(norms)) if weights is None else np.asarray(weights, dtype=float)
    positive = weights > 0
    if not np.any(positive):
        return 0.0
    return float(np.max(norms[positive] / weights[positive]))


def _objective(design, target, x, lam, weights):
    fit = 0.5 * np.linalg.norm(design @ x - target) ** 2
    penalty = np.sum(weights * real_group_norms(x))
    return float(fit + lam * penalty)


def _prox_step(design, target, point, step, thresholds):
    gradient = design.T @ (design @ point - target)
    return from_groups(group_prox(to_groups(point - step * gradient), thresholds))


def solve_group_lasso(pilots, observation, config=None, x0=None):
    pilots, observation = check_system(pilots, observation)
    config = config or ProxConfig()
    if not config.lam > 0:
        raise InvalidArgument(f'lam must be positive, got {config.lam}')
    system = realify(pilots, observation)
    design, target = system.design, system.observation
    weights = _weights(config, system.n_groups)

    x = np.zeros((design.shape[1], target.shape[1]))
    if x0 is not None:
        x = stack_real(x0).astype(float)
        if x.shape != (design.shape[1], target.shape[1]):
            raise InvalidArgument(f'warm start has the wrong shape {np.shape(x0)}')

    sigma = spectral_norm(design, config.power_iters)
    if sigma == 0:
        zero = np.zeros((system.n_groups, target.shape[1]), dtype=np.complex128)
        return ProxResult(
            estimate=zero,
            iterations=0,
            final_objective=0.5 * float(np.linalg.norm(target) ** 2),
            residual_fro=float(np.linalg.norm(target)),
            converged=True,
            lam=config.lam,
        )
    step = 1.0 / (sigma ** 2 * (1.0 + config.lipschitz_margin))
    thresholds = step * config.lam * weights

    y, t = x, 1.0
    objective = _objective(design, target, x, config.lam, weights)
    converged = False
    iterations = 0
    for iterations in range(1, config.max_iter + 1):
        x_new = _prox_step(design, target, y, step, thresholds)
        new_objective = _objective(design, target, x_new, config.lam, weights)
        if new_objective > objective:
            # restart: plain proximal step from the last iterate
            x_new = _prox_step(design, target, x, step, thresholds)
            new_objective = _objective(design, target, x_new, config.lam, weights)
            y, t = x_new, 1.0
        else:
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            y = x_new + ((t - 1.0) / t_new) * (x_new - x)
            t = t_new
        change = abs(objective - new_objective)
        reference = abs(objective)
        x, objective = x_new, new_objective
        if change <= config.tol * reference:
            converged = True
            break

    estimate = derealify(x)
    return ProxResult(
        estimate=estimate,
        iterations=iterations,
        final_objective=objective,
        residual_fro=float(np.linalg.norm(observation - pilots @ estimate)),
        converged=converged,
        lam=config.lam,
    )


def kkt_residuals(pilots, observation, estimate, lam, weights=None):
    """
    Per-group violation of the group lasso optimality conditions at `estimate`:
    max(0, ||G_i|| - lam w_i) for zero rows and ||G_i + lam w_i X_i/||X_i|| ||
    for nonzero rows, where G = S^H (S X - Y).
    """
    pilots, observation = check_system(pilots, observation)
    estimate = np.asarray(estimate)
    gradient = pilots.conj().T @ (pilots @ estimate - observation)
    weights = np.ones(estimate.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    norms = row_group_norms(estimate)
    gradient_norms = row_group_norms(gradient)
    violations = np.maximum(0.0, gradient_norms - lam * weights)
    nonzero = norms > 0
    direction = estimate[nonzero] / norms[nonzero][:, None]
    violations[nonzero] = row_group_norms(
        gradient[nonzero] + lam * weights[nonzero][:, None] * direction
    )
    return violations


def debias(pilots, observation, estimate, gamma0=None):
    """
    Least-squares re-fit on the rows with ||X_i|| >= gamma0 (relative rule of
    `metrics.activity_threshold` when gamma0 is omitted).
    """
    pilots, observation = check_system(pilots, observation)
    if gamma0 is None:
        gamma0 = activity_threshold(estimate)
    support = np.flatnonzero(detect_activity(estimate, gamma0))
    refit, _ = least_squares_on_support(pilots, observation, support)
    return refit


def update_weights(norms, delta=None, delta_rel=1e-3, delta_floor=1e-8):
    norms = np.asarray(norms, dtype=float)
    if delta is None:
        peak = float(norms.max()) if norms.size else 0.0
        delta = max(delta_rel * peak, delta_floor)
    if not delta > 0:
        raise InvalidArgument(f'delta must be positive, got {delta}')
    return 1.0 / (norms + delta)


def _zero_result(pilots, observation, lam):
    residual = float(np.linalg.norm(observation))
    return ProxResult(
        estimate=np.zeros((pilots.shape[1], observation.shape[1]), dtype=np.complex128),
        iterations=0,
        final_objective=0.5 * residual ** 2,
        residual_fro=residual,
        converged=True,
        lam=lam,
    )


def _continuation(pilots, observation, config, lam_hi, lam_lo):
    lam = lam_hi
    estimate = None
    iterations = 0
    result = None
    while lam > lam_lo:
        lam = max(lam * config.continuation_factor, lam_lo)
        result = solve_group_lasso(pilots, observation, replace(config, lam=lam), x0=estimate)
        iterations += result.iterations
        estimate = result.estimate
        logger.debug(f'continuation lam={lam:.3e} residual={result.residual_fro:.3e}')
    gamma0 = activity_threshold(estimate, config.gamma0_fraction)
    refit = debias(pilots, observation, estimate, gamma0)
    return ProxResult(
        estimate=refit,
        iterations=iterations,
        final_objective=result.final_objective,
        residual_fro=float(np.linalg.norm(observation - pilots @ refit)),
        converged=result.converged,
        lam=lam,
        debiased=True,
    )


def _bisection(pilots, observation, epsilon, config, lam_hi, lam_lo):
    lo, hi = math.log(lam_lo), math.log(lam_hi)
    solved = {}
    best_feasible = None
    closest = None
    upper, lower = epsilon * (1.0 + config.band), epsilon * (1.0 - config.band)
    for step in range(config.max_bisection):
        mid = 0.5 * (lo + hi)
        warm = None
        if solved:
            warm = solved[min(solved, key=lambda key: abs(key - mid))].estimate
        result = solve_group_lasso(
            pilots, observation, replace(config, lam=math.exp(mid)), x0=warm
        )
        solved[mid] = result
        residual = result.residual_fro
        logger.debug(f'bisection step {step}: lam={math.exp(mid):.3e} residual={residual:.3e}')
        if closest is None or abs(residual - epsilon) < abs(closest.residual_fro - epsilon):
            closest = result
        if residual <= epsilon and (best_feasible is None or residual > best_feasible.residual_fro):
            best_feasible = result
        if lower <= residual <= upper:
            return result
        if residual > upper:
            hi = mid
        else:
            lo = mid
    if best_feasible is not None:
        return best_feasible
    raise ConvergenceError(
        f'no lam met the residual budget {epsilon:.3e} after {config.max_bisection} steps',
        best=closest,
    )


def solve_constrained(pilots, observation, epsilon, config=None):
    """
    Group lasso with the residual constraint ||Y - S X||_F <= epsilon.

    eps >= ||Y||_F returns zero. eps = 0 follows a warm-started geometric lam
    path down to lam_min = lambda_min_ratio * lam_max and debiases the last
    iterate. Otherwise lam is bisected on a log scale until the residual lands
    within `band` of eps; the largest feasible residual seen is returned when
    the band is never hit.
    """
    pilots, observation = check_system(pilots, observation)
    if not epsilon >= 0:
        raise InvalidArgument(f'epsilon must be nonnegative, got {epsilon}')
    config = config or ProxConfig()
    weights = _weights(config, pilots.shape[1])
    lam_hi = lambda_max(pilots, observation, weights)

    if epsilon >= np.linalg.norm(observation):
        return _zero_result(pilots, observation, lam_hi)
    if lam_hi == 0:
        raise ConvergenceError(
            'observation is orthogonal to every pilot; the budget cannot be met',
            best=_zero_result(pilots, observation, 0.0),
        )
    lam_lo = lam_hi * config.lambda_min_ratio
    if epsilon == 0:
        return _continuation(pilots, observation, config, lam_hi, lam_lo)
    return _bisection(pilots, observation, epsilon, config, lam_hi, lam_lo)


def solve_reweighted(pilots, observation, epsilon, outer_iters=5, config=None):
    """
    Iteratively reweighted group lasso starting from unit weights. Stops after
    `outer_iters` rounds, or earlier when the detected support repeats.
    """
    if outer_iters < 1:
        raise InvalidArgument(f'outer_iters must be at least 1, got {outer_iters}')
    pilots, observation = check_system(pilots, observation)
    config = config or ProxConfig()
    weights = _weights(config, pilots.shape[1])
    previous = None
    result = None
    for outer in range(1, outer_iters + 1):
        result = solve_constrained(pilots, observation, epsilon, replace(config, weights=weights))
        gamma0 = activity_threshold(result.estimate, config.gamma0_fraction)
        support = tuple(np.flatnonzero(detect_activity(result.estimate, gamma0)))
        logger.debug(f'reweighting round {outer}: {len(support)} rows above {gamma0:.3e}')
        if config.stop_on_stable_support and support == previous:
            break
        previous = support
        weights = update_weights(
            row_group_norms(result.estimate),
            delta_rel=config.delta_rel,
            delta_floor=config.delta_floor,
        )
    return replace(result, outer_iterations=outer)
