"""
Exact group-l0 recovery.

Minimizing the number of active devices subject to ||Y - S X||_F <= eps is
written with binary indicators b_i and the Big-beta coupling

    -beta * b_i <= Re X_ij, Im X_ij <= beta * b_i,

which turns the problem into a mixed-integer program with a quadratic
(eps > 0) or linear (eps = 0) constraint. This module solves it with a
best-first branch-and-bound over the indicators, and provides a brute-force
support enumeration used as an independent check on small instances.
"""
import heapq
import itertools
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg
from scipy import optimize

from .log import create_logger
from .model import (InvalidArgument, RealifiedSystem, check_system, realify,
                    row_group_norms)


logger = create_logger(__name__)

OPTIMAL = 'optimal'
NODE_LIMIT = 'node-limit'
INFEASIBLE = 'infeasible'

FEASIBILITY_RTOL = 1e-9
BOUND_SLACK = 1e-9
ZERO_ROW_RTOL = 1e-9
DEFAULT_NODE_LIMIT = 200_000
ROUNDING_FRACTION = 0.05
BRUTE_FORCE_MAX_GROUPS = 20
SUBSPACE_RTOL = 1e-6
SUBSPACE_BUDGET = 5000
SUBSPACE_CHUNK = 512


def compute_beta(pilots, observation, epsilon=0.0, channel_var=1.0, sigmas=3.0, safety=2.0):
    """
    Big-beta from the 3-sigma rule on the real and imaginary parts of
    CN(0, channel_var) channel entries, doubled as a safety margin.
    For unit-variance channels this is 2 * 3 / sqrt(2) ~= 4.243.
    """
    check_system(pilots, observation)
    if epsilon < 0:
        raise InvalidArgument(f'epsilon must be nonnegative, got {epsilon}')
    sigma_x = math.sqrt(channel_var / 2.0)
    return max(1e-3, safety * sigmas * sigma_x)


@dataclass(frozen=True, eq=False)
class MiqcpInstance:
    system: RealifiedSystem
    epsilon: float
    beta: float
    n_groups: int

    def __post_init__(self):
        if not self.beta > 0:
            raise InvalidArgument(f'beta must be positive, got {self.beta}')
        if not self.epsilon >= 0:
            raise InvalidArgument(f'epsilon must be nonnegative, got {self.epsilon}')
        if self.n_groups != self.system.n_groups:
            raise InvalidArgument('n_groups does not match the system')

    @classmethod
    def from_complex(cls, pilots, observation, epsilon=0.0, beta=None):
        system = realify(pilots, observation)
        if beta is None:
            beta = compute_beta(pilots, observation, epsilon)
        return cls(
            system=system,
            epsilon=float(epsilon),
            beta=float(beta),
            n_groups=system.n_groups
        )

    @classmethod
    def from_scenario(cls, scenario, epsilon=0.0, beta=None):
        return cls.from_complex(scenario.pilots, scenario.observation, epsilon, beta)

    @cached_property
    def complex_system(self):
        return self.system.to_complex()

    @property
    def pilots(self):
        return self.complex_system[0]

    @property
    def observation(self):
        return self.complex_system[1]

    @cached_property
    def feasibility_threshold(self):
        scale = float(np.linalg.norm(self.observation))
        return self.epsilon * (1.0 + FEASIBILITY_RTOL) + FEASIBILITY_RTOL * scale

    def is_feasible(self, residual):
        return residual <= self.feasibility_threshold


@dataclass(frozen=True)
class BnbNode:
    """
    Partial assignment of the activity indicators.
    """
    forced_zero: Tuple[int, ...]
    forced_one: Tuple[int, ...]
    undecided: Tuple[int, ...]
    lower_bound: float = 0.0
    depth: int = 0

    @classmethod
    def root(cls, n_groups):
        return cls(forced_zero=(), forced_one=(), undecided=tuple(range(n_groups)))

    def check_partition(self, n_groups):
        members = self.forced_zero + self.forced_one + self.undecided
        if sorted(members) != list(range(n_groups)):
            raise InvalidArgument('node sets must partition the device indices')

    def branch(self, index):
        """
        Children fixing b_index = 1 and b_index = 0, in that order.
        """
        rest = tuple(i for i in self.undecided if i != index)
        one = BnbNode(
            forced_zero=self.forced_zero,
            forced_one=tuple(sorted(self.forced_one + (index,))),
            undecided=rest,
            lower_bound=self.lower_bound,
            depth=self.depth + 1,
        )
        zero = BnbNode(
            forced_zero=tuple(sorted(self.forced_zero + (index,))),
            forced_one=self.forced_one,
            undecided=rest,
            lower_bound=self.lower_bound,
            depth=self.depth + 1,
        )
        return one, zero


@dataclass(frozen=True, eq=False)
class NodeEvaluation:
    feasible: bool
    lower_bound: float
    probe: np.ndarray
    residual: float
    unique: bool = False
    candidate: Optional[Tuple[int, ...]] = None


@dataclass(frozen=True, eq=False)
class ExactResult:
    estimate: np.ndarray
    support: Tuple[int, ...]
    objective: Optional[int]
    status: str
    nodes_explored: int
    incumbent_history: List[Tuple[int, int]]
    residual_fro: float
    beta: float
    lower_bound: float = 0.0
    beta_doubled: bool = False
    popped_bounds: List[float] = field(default_factory=list, repr=False)

    @property
    def optimal(self):
        return self.status == OPTIMAL


def activity_indicator(x):
    """
    b_i = 1 iff row i of X is nonzero.
    """
    return (row_group_norms(x) > 0).astype(np.int8)


def satisfies_big_beta(x, b, beta):
    """
    Check -beta * b_i <= Re X_ij, Im X_ij <= beta * b_i for all i, j.
    """
    x = np.asarray(x)
    bound = beta * np.asarray(b, dtype=float)[:, None]
    return bool(np.all(np.abs(x.real) <= bound) and np.all(np.abs(x.imag) <= bound))


def within_beta(x, beta):
    x = np.asarray(x)
    if x.size == 0:
        return True
    return bool(max(np.abs(x.real).max(), np.abs(x.imag).max()) <= beta)


def least_squares_on_support(pilots, observation, support):
    """
    min ||Y - S[:, support] X_sub||_F by QR with column pivoting (minimum-norm
    solution for rank-deficient supports). Rows off the support are zero.
    """
    n, m = pilots.shape[1], observation.shape[1]
    estimate = np.zeros((n, m), dtype=np.complex128)
    support = list(support)
    if support:
        if min(support) < 0 or max(support) >= n:
            raise InvalidArgument(f'support indices must lie in [0, {n})')
        solution = scipy.linalg.lstsq(
            pilots[:, support], observation, lapack_driver='gelsy'
        )[0]
        estimate[support] = solution
    residual = float(np.linalg.norm(observation - pilots @ estimate))
    return estimate, residual


def _min_energy_completion(matrix, target, eps_sq):
    """
    Minimum-Frobenius-norm X with ||target - matrix X||_F^2 <= eps_sq, or the
    minimum-norm least-squares solution when no X reaches eps_sq.
    Returns (X, smallest achievable residual energy).
    """
    n_cols, n_rhs = matrix.shape[1], target.shape[1]
    total = float(np.linalg.norm(target) ** 2)
    if total <= eps_sq:
        return np.zeros((n_cols, n_rhs), dtype=np.complex128), 0.0
    u, s, vh = scipy.linalg.svd(matrix, full_matrices=False)
    if s.size:
        keep = s > s[0] * max(matrix.shape) * np.finfo(float).eps
        u, s, vh = u[:, keep], s[keep], vh[keep]
    if s.size == 0:
        return np.zeros((n_cols, n_rhs), dtype=np.complex128), total

    coeff = u.conj().T @ target
    floor = float(np.linalg.norm(target - u @ coeff) ** 2)
    energy = np.sum(np.abs(coeff) ** 2, axis=1)
    sq = s ** 2

    mu = 0.0
    if floor < eps_sq:
        def excess(mu):
            return floor + float(np.sum((mu / (sq + mu)) ** 2 * energy)) - eps_sq
        upper = float(sq[0])
        while excess(upper) < 0:
            upper *= 4.0
        mu = optimize.brentq(excess, 0.0, upper)
    solution = vh.conj().T @ ((s / (sq + mu))[:, None] * coeff)
    return solution, floor


def _probe(instance, forced_one, undecided):
    """
    Relaxation probe of a node: undecided rows get the minimum-energy values
    keeping the residual within eps, forced-one rows are fitted freely.
    Returns (probe, smallest residual over the node, observation projected
    off the forced-one pilots).
    """
    pilots, observation = instance.pilots, instance.observation
    probe = np.zeros((instance.n_groups, observation.shape[1]), dtype=np.complex128)
    forced_one, undecided = list(forced_one), list(undecided)

    basis = None
    projected = observation
    if forced_one:
        basis = scipy.linalg.orth(pilots[:, forced_one])
        projected = observation - basis @ (basis.conj().T @ observation)

    if undecided:
        free = pilots[:, undecided]
        if basis is not None:
            free = free - basis @ (basis.conj().T @ free)
        values, floor = _min_energy_completion(free, projected, instance.epsilon ** 2)
        probe[undecided] = values
        remainder = observation - pilots[:, undecided] @ values
        min_residual = math.sqrt(floor)
    else:
        remainder = observation
        min_residual = float(np.linalg.norm(projected))

    if forced_one:
        probe[forced_one] = scipy.linalg.lstsq(
            pilots[:, forced_one], remainder, lapack_driver='gelsy'
        )[0]
    return probe, min_residual, projected


def _rank_term(projected, threshold):
    """
    Least number r of extra pilot columns that can bring the projected
    observation within `threshold`: the best rank-r approximation error
    (Eckart-Young tail) must not exceed it.
    """
    s = scipy.linalg.svdvals(projected)
    tails = np.sqrt(np.append(np.cumsum((s ** 2)[::-1])[::-1], 0.0))
    return int(np.argmax(tails <= threshold))


def _covering_term(values, beta):
    if values.size == 0:
        return 0.0
    peak = np.maximum(np.abs(values.real), np.abs(values.imag)).max(axis=1)
    return float(np.minimum(1.0, peak / beta).sum())


def _full_column_rank(matrix):
    rows, cols = matrix.shape
    return cols <= rows and np.linalg.matrix_rank(matrix) == cols


def _outside_span(vectors, basis):
    return vectors - basis @ (basis.conj().T @ vectors)


def _spans_observation(instance, support):
    _, residual = least_squares_on_support(instance.pilots, instance.observation, support)
    return instance.is_feasible(residual)


def _feasible_at_level(instance, base, ids, images, scale, level, needed):
    """
    First support base + {j : Q s_j in span(Q s_P)} over |P| = level, in
    lexicographic order of P, that reaches the budget. Subsets whose member
    count cannot cover `needed` plus the dimension of span(Q s_P) are skipped.
    """
    combos = itertools.combinations(range(ids.size), level)
    while True:
        chunk = list(itertools.islice(combos, SUBSPACE_CHUNK))
        if not chunk:
            return None
        picked = np.moveaxis(images[:, np.array(chunk)], 0, 1)
        q, r = np.linalg.qr(picked)
        inside = images[None] - q @ (np.conj(np.swapaxes(q, 1, 2)) @ images[None])
        member = np.linalg.norm(inside, axis=1) <= scale[None]
        dims = np.sum(np.abs(np.diagonal(r, axis1=1, axis2=2)) > scale.max(), axis=1)
        for row in np.flatnonzero(member.sum(axis=1) >= needed + dims):
            support = base + tuple(int(j) for j in ids[member[row]])
            if _spans_observation(instance, support):
                return tuple(sorted(support))


def _subspace_level(instance, node, projected, rank, cutoff):
    """
    Noiseless refinement of the rank term.

    Let Q project off the forced-one pilots and the observation. Any feasible
    completion T spans rank + rank(Q S_T) dimensions, so |T| >= rank + d as
    soon as no completion with rank(Q S_T) < d exists. A completion with
    rank(Q S_T) = d lies inside the columns whose Q-image falls in the span of
    d of its own Q-images, which is checked level by level while the bound is
    below `cutoff` and the level has at most SUBSPACE_BUDGET subsets.
    Returns (d, a feasible support found at level d or None).
    """
    pilots = instance.pilots
    forced_one, undecided = tuple(node.forced_one), list(node.undecided)
    left = scipy.linalg.svd(projected, full_matrices=False)[0][:, :rank]
    free = pilots[:, undecided]
    if forced_one:
        free = _outside_span(free, scipy.linalg.orth(pilots[:, list(forced_one)]))
    images = _outside_span(free, left)
    scale = SUBSPACE_RTOL * np.linalg.norm(pilots[:, undecided], axis=0)
    zero = np.linalg.norm(images, axis=0) <= scale

    base = forced_one + tuple(undecided[i] for i in np.flatnonzero(zero))
    ids = np.array([undecided[i] for i in np.flatnonzero(~zero)], dtype=int)
    images, scale = images[:, ~zero], scale[~zero]

    needed = rank - (len(base) - len(forced_one))
    if needed <= 0 and _spans_observation(instance, base):
        return 0, tuple(sorted(base))
    level = 1
    while len(forced_one) + rank + level < cutoff and level <= ids.size:
        if math.comb(ids.size, level) > SUBSPACE_BUDGET:
            break
        found = _feasible_at_level(instance, base, ids, images, scale, level, needed)
        if found is not None:
            return level, found
        level += 1
    return level, None


def node_lower_bound(instance, node, cutoff=math.inf):
    """
    Evaluate a node. Infeasible when even all non-zeroed devices cannot meet
    the residual budget. Otherwise the bound is |forced_one| plus the largest
    of
      - the rank term,
      - for eps = 0, the subspace refinement of the rank term (refined only
        while the bound stays below `cutoff`),
      - when the probe is the node's only feasible point (eps = 0 and
        independent pilot columns), the Big-beta covering term
        sum_i min(1, ||X_i||_inf / beta) over undecided rows.
    Feasible supports met along the way are returned as `candidate`.
    """
    node.check_partition(instance.n_groups)
    probe, min_residual, projected = _probe(instance, node.forced_one, node.undecided)
    if not instance.is_feasible(min_residual):
        return NodeEvaluation(
            feasible=False, lower_bound=math.inf, probe=probe, residual=min_residual
        )
    rank = _rank_term(projected, instance.feasibility_threshold)
    extra = float(rank)
    candidate = None
    if instance.epsilon == 0 and rank > 0:
        level, candidate = _subspace_level(instance, node, projected, rank, cutoff)
        extra = float(rank + level)
    columns = list(node.forced_one + node.undecided)
    unique = instance.epsilon == 0 and _full_column_rank(instance.pilots[:, columns])
    if unique:
        extra = max(extra, _covering_term(probe[list(node.undecided)], instance.beta))
    return NodeEvaluation(
        feasible=True,
        lower_bound=len(node.forced_one) + extra,
        probe=probe,
        residual=min_residual,
        unique=unique,
        candidate=candidate,
    )


def _bound_prunes(lower_bound, incumbent):
    # objective is integral
    return math.ceil(lower_bound - BOUND_SLACK) >= incumbent


class _Incumbent:
    def __init__(self, instance):
        self.instance = instance
        self.support = None
        self.estimate = None
        self.residual = math.inf
        self.history = []

    @property
    def objective(self):
        return math.inf if self.support is None else len(self.support)

    def offer(self, support, nodes_explored):
        support = tuple(sorted(set(support)))
        if len(support) >= self.objective:
            return False
        estimate, residual = least_squares_on_support(
            self.instance.pilots, self.instance.observation, support
        )
        if not self.instance.is_feasible(residual):
            return False
        self.support, self.estimate, self.residual = support, estimate, residual
        self.history.append((nodes_explored, len(support)))
        logger.debug(f'new incumbent with {len(support)} devices after {nodes_explored} nodes')
        return True


def _rounding_support(evaluation, node, fraction):
    norms = row_group_norms(evaluation.probe)
    peak = norms.max() if norms.size else 0.0
    if peak == 0:
        return node.forced_one
    kept = tuple(i for i in node.undecided if norms[i] >= fraction * peak)
    return node.forced_one + kept


def _nonzero_support(evaluation, node):
    norms = row_group_norms(evaluation.probe)
    peak = norms.max() if norms.size else 0.0
    kept = tuple(i for i in node.undecided if norms[i] > ZERO_ROW_RTOL * peak)
    return node.forced_one + kept


def _alignment(instance, forced_one, undecided):
    """
    Cosine between each undecided pilot column and the dominant subspace of
    the residual, both taken off the forced-one pilots.
    """
    pilots = instance.pilots
    _, _, projected = _probe(instance, forced_one, [])
    rank = max(1, _rank_term(projected, instance.feasibility_threshold))
    left = scipy.linalg.svd(projected, full_matrices=False)[0][:, :rank]
    free = pilots[:, undecided]
    if forced_one:
        free = _outside_span(free, scipy.linalg.orth(pilots[:, forced_one]))
    norms = np.linalg.norm(free, axis=0)
    inner = np.linalg.norm(left.conj().T @ free, axis=0)
    return np.divide(inner, norms, out=np.zeros_like(inner), where=norms > 0)


def _dive(instance, rank_aware=False):
    """
    Diving heuristic: keep forcing one undecided device to one until the
    forced devices alone meet the residual budget. The pick is the largest
    probe row, or with `rank_aware` the column best aligned with the residual
    subspace.
    """
    forced_one = []
    undecided = list(range(instance.n_groups))
    while True:
        _, residual = least_squares_on_support(
            instance.pilots, instance.observation, forced_one
        )
        if instance.is_feasible(residual):
            return tuple(forced_one)
        if not undecided:
            return None
        if rank_aware:
            scores = _alignment(instance, forced_one, undecided)
        else:
            probe, _, _ = _probe(instance, forced_one, undecided)
            scores = row_group_norms(probe[undecided])
        pick = undecided[int(np.argmax(scores))]
        forced_one.append(pick)
        undecided.remove(pick)


def _branch_and_bound(instance, node_limit, rounding_fraction):
    n = instance.n_groups
    incumbent = _Incumbent(instance)
    root = BnbNode.root(n)
    root_eval = node_lower_bound(instance, root, cutoff=0)
    if not root_eval.feasible:
        logger.info(
            f'root infeasible: best residual {root_eval.residual:.3e} exceeds epsilon {instance.epsilon:.3e}'
        )
        return ExactResult(
            estimate=np.zeros((n, instance.observation.shape[1]), dtype=np.complex128),
            support=(),
            objective=None,
            status=INFEASIBLE,
            nodes_explored=1,
            incumbent_history=[],
            residual_fro=root_eval.residual,
            beta=instance.beta,
            lower_bound=math.inf,
        )

    for rank_aware in (False, True):
        dived = _dive(instance, rank_aware)
        if dived is not None:
            incumbent.offer(dived, 0)
    root_eval = node_lower_bound(instance, root, cutoff=incumbent.objective)
    if root_eval.candidate is not None:
        incumbent.offer(root_eval.candidate, 0)

    root = replace(root, lower_bound=root_eval.lower_bound)
    counter = itertools.count()
    queue = [(root.lower_bound, -root.depth, next(counter), root, root_eval)]
    explored = 0
    popped_bounds = []
    status = OPTIMAL

    while queue:
        if explored >= node_limit:
            status = NODE_LIMIT
            break
        lower_bound, _, _, node, evaluation = heapq.heappop(queue)
        if _bound_prunes(lower_bound, incumbent.objective):
            continue
        explored += 1
        popped_bounds.append(lower_bound)
        if explored % 10000 == 0:
            logger.debug(
                f'{explored} nodes explored, bound {lower_bound:.3f}, '
                f'incumbent {incumbent.objective}, queue {len(queue)}'
            )

        incumbent.offer(_rounding_support(evaluation, node, rounding_fraction), explored)
        if evaluation.unique and incumbent.offer(_nonzero_support(evaluation, node), explored):
            continue
        if evaluation.unique and len(_nonzero_support(evaluation, node)) >= incumbent.objective:
            continue
        if not node.undecided:
            continue

        norms = row_group_norms(evaluation.probe[list(node.undecided)])
        index = node.undecided[int(np.argmax(norms))]
        for child in node.branch(index):
            child_eval = node_lower_bound(instance, child, cutoff=incumbent.objective)
            if not child_eval.feasible:
                continue
            if child_eval.candidate is not None:
                incumbent.offer(child_eval.candidate, explored)
            child_bound = max(child_eval.lower_bound, lower_bound)
            if _bound_prunes(child_bound, incumbent.objective):
                continue
            child = replace(child, lower_bound=child_bound)
            heapq.heappush(queue, (child_bound, -child.depth, next(counter), child, child_eval))

    if status == OPTIMAL:
        final_bound = incumbent.objective
    else:
        final_bound = min([entry[0] for entry in queue], default=incumbent.objective)
        logger.warning(
            f'node limit {node_limit} reached with incumbent {incumbent.objective} '
            f'and bound {final_bound:.3f}'
        )

    if incumbent.support is None:
        # the full device set is feasible whenever the root is
        incumbent.offer(range(n), explored)

    return ExactResult(
        estimate=incumbent.estimate,
        support=incumbent.support,
        objective=len(incumbent.support),
        status=status,
        nodes_explored=explored,
        incumbent_history=incumbent.history,
        residual_fro=incumbent.residual,
        beta=instance.beta,
        lower_bound=float(final_bound),
        popped_bounds=popped_bounds,
    )


def bnb_solve(instance, node_limit=DEFAULT_NODE_LIMIT, rounding_fraction=ROUNDING_FRACTION):
    """
    Best-first branch-and-bound over the device indicators.

    Nodes are ordered by (lower bound, depth descending). Incumbents come from
    two root dives, from rounding each node's probe at `rounding_fraction` of
    its largest row, from supports met by the noiseless subspace bound and
    from resolving nodes whose probe is their only feasible point; every
    incumbent is verified by least squares before it is accepted.
    Branching fixes the undecided device with the largest probe row (smallest
    index on ties). The final estimate is least squares on the incumbent
    support; if it leaves [-beta, beta], beta is doubled and the instance is
    solved once more.
    """
    if node_limit < 1:
        raise InvalidArgument(f'node_limit must be at least 1, got {node_limit}')
    result = _branch_and_bound(instance, node_limit, rounding_fraction)
    if result.status != INFEASIBLE and not within_beta(result.estimate, instance.beta):
        logger.warning(
            f'estimate leaves the Big-beta box (beta={instance.beta:.3f}); doubling beta and re-solving'
        )
        instance = replace(instance, beta=2.0 * instance.beta)
        result = replace(
            _branch_and_bound(instance, node_limit, rounding_fraction),
            beta_doubled=True
        )
    return result


def brute_force_min_support(instance):
    """
    Enumerate supports by increasing size (lexicographic within a size) and
    return the first one whose least-squares residual meets the budget.
    """
    n = instance.n_groups
    if n > BRUTE_FORCE_MAX_GROUPS:
        raise InvalidArgument(
            f'brute force is limited to {BRUTE_FORCE_MAX_GROUPS} devices, got {n}'
        )
    checked = 0
    best_residual = math.inf
    for size in range(n + 1):
        for support in itertools.combinations(range(n), size):
            checked += 1
            estimate, residual = least_squares_on_support(
                instance.pilots, instance.observation, support
            )
            best_residual = min(best_residual, residual)
            if instance.is_feasible(residual):
                return ExactResult(
                    estimate=estimate,
                    support=support,
                    objective=size,
                    status=OPTIMAL,
                    nodes_explored=checked,
                    incumbent_history=[(checked, size)],
                    residual_fro=residual,
                    beta=instance.beta,
                    lower_bound=float(size),
                )
    return ExactResult(
        estimate=np.zeros((n, instance.observation.shape[1]), dtype=np.complex128),
        support=(),
        objective=None,
        status=INFEASIBLE,
        nodes_explored=checked,
        incumbent_history=[],
        residual_fro=best_residual,
        beta=instance.beta,
        lower_bound=math.inf,
    )
