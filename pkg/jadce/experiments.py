"""
Seeded Monte-Carlo sweeps over the pilot length.

Every (pilot length, trial) pair draws one scenario from a seed derived from
(base_seed, pilot_len, trial) and runs every requested solver on it, so all
solvers see identical instances and adding a solver never changes the others.
"""
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
import tqdm

from . import exact, prox
from .log import create_logger
from .metrics import (DEFAULT_EPSILON_HEADROOM, DEFAULT_SUCCESS_TOL,
                      calibrate_epsilon, detection_errors, detection_rates,
                      nmse_from_energies, recovery_success, squared_error)
from .model import InvalidArgument, generate_scenario, trial_seed
from .solvers import REGISTRY, get_solver


logger = create_logger(__name__)

THREADS_ENV = 'GS_THREADS'
FAILED = 'failed'


@dataclass(frozen=True)
class ExperimentSpec:
    n_devices: int = 30
    n_antennas: int = 2
    n_active: int = 5
    pilot_lengths: Tuple[int, ...] = tuple(range(2, 21))
    snr_db: Optional[float] = None
    trials: int = 100
    base_seed: int = 0
    solvers: Tuple[str, ...] = ('bnb', 'reweighted', 'group-lasso')
    success_tol: float = DEFAULT_SUCCESS_TOL
    gamma0: Optional[float] = None
    epsilon_headroom: float = DEFAULT_EPSILON_HEADROOM
    node_limit: int = exact.DEFAULT_NODE_LIMIT
    reweighted_iters: int = 5

    def __post_init__(self):
        # accept lists from config files
        object.__setattr__(self, 'pilot_lengths', tuple(int(x) for x in self.pilot_lengths))
        object.__setattr__(self, 'solvers', tuple(self.solvers))
        if self.trials < 1:
            raise InvalidArgument(f'trials must be at least 1, got {self.trials}')
        if not self.pilot_lengths or min(self.pilot_lengths) < 1:
            raise InvalidArgument('pilot_lengths must be a nonempty list of positive lengths')
        if not self.solvers:
            raise InvalidArgument('at least one solver is required')
        for tag in self.solvers:
            if tag not in REGISTRY:
                raise NotImplementedError(f'Unknown solver: {tag}')
        if self.n_devices < 1 or self.n_antennas < 1:
            raise InvalidArgument('n_devices and n_antennas must be positive')
        if not 0 <= self.n_active <= self.n_devices:
            raise InvalidArgument(f'n_active must lie in [0, {self.n_devices}]')
        if not self.success_tol > 0:
            raise InvalidArgument('success_tol must be positive')
        if self.gamma0 is not None and not self.gamma0 > 0:
            raise InvalidArgument('gamma0 must be positive')
        if self.epsilon_headroom < 0:
            raise InvalidArgument('epsilon_headroom must be nonnegative')
        if self.node_limit < 1:
            raise InvalidArgument('node_limit must be at least 1')
        if self.reweighted_iters < 1:
            raise InvalidArgument('reweighted_iters must be at least 1')
        if self.base_seed < 0:
            raise InvalidArgument('base_seed must be nonnegative')

    def seeds(self, pilot_len):
        return [trial_seed(self.base_seed, pilot_len, t) for t in range(self.trials)]


@dataclass(frozen=True)
class TrialRecord:
    pilot_len: int
    n_active: int
    trial: int
    seed: int
    solver: str
    nmse_db: float
    sq_error: float
    truth_energy: float
    success: bool
    detect_miss: int
    detect_false: int
    miss_rate: float
    false_alarm_rate: float
    runtime_ms: float
    status: str

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class SweepResult:
    spec: ExperimentSpec
    records: List[TrialRecord]
    aggregates: pd.DataFrame

    def curve(self, solver):
        return self.aggregates[self.aggregates['solver'] == solver].reset_index(drop=True)

    def success_rate(self, solver, pilot_len):
        curve = self.curve(solver)
        return float(curve.loc[curve['pilot_len'] == pilot_len, 'success_rate'].iloc[0])


def default_workers():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, 1)))
    except ValueError:
        logger.warning(f'ignoring non-integer {THREADS_ENV}')
        return 1


def build_solver(spec, tag):
    if tag == 'bnb':
        return get_solver(tag, gamma0=spec.gamma0, node_limit=spec.node_limit)
    if tag == 'reweighted':
        return get_solver(tag, gamma0=spec.gamma0, outer_iters=spec.reweighted_iters)
    return get_solver(tag, gamma0=spec.gamma0)


def _score(spec, scenario, pilot_len, trial, tag, result, status):
    truth = scenario.ground_truth
    truth_energy = float(np.linalg.norm(truth) ** 2)
    if result is None:
        estimate = np.zeros_like(truth)
        activity = np.zeros(scenario.n_devices, dtype=np.int8)
        runtime = 0.0
    else:
        estimate, activity, runtime = result.estimate, result.activity, result.runtime_ms
    error = squared_error(estimate, truth)
    miss, false = detection_errors(scenario.activity, activity)
    miss_rate, false_alarm_rate = detection_rates(scenario.activity, activity)
    return TrialRecord(
        pilot_len=pilot_len,
        n_active=scenario.n_active,
        trial=trial,
        seed=scenario.seed,
        solver=tag,
        nmse_db=nmse_from_energies(error, truth_energy) if truth_energy > 0 else math.nan,
        sq_error=error,
        truth_energy=truth_energy,
        success=recovery_success(estimate, truth, spec.success_tol),
        detect_miss=miss,
        detect_false=false,
        miss_rate=miss_rate,
        false_alarm_rate=false_alarm_rate,
        runtime_ms=runtime,
        status=status,
    )


def run_trial(spec, pilot_len, trial):
    """
    All solvers of `spec` on the scenario of (pilot_len, trial).
    Solver failures are logged and recorded, never raised.
    """
    seed = trial_seed(spec.base_seed, pilot_len, trial)
    scenario = generate_scenario(
        spec.n_devices, spec.n_antennas, pilot_len, spec.n_active, spec.snr_db, seed
    )
    epsilon = calibrate_epsilon(
        scenario.noise_var, pilot_len, spec.n_antennas, spec.epsilon_headroom
    )
    records = []
    for tag in spec.solvers:
        solver = build_solver(spec, tag)
        started = time.perf_counter()
        try:
            result = solver(scenario, epsilon)
            status = result.status
        except (prox.ConvergenceError, InvalidArgument, np.linalg.LinAlgError) as e:
            logger.error(f'{tag} failed on L={pilot_len} trial={trial}: {e}')
            result = solver.recover_from(scenario, e, started)
            status = result.status if result is not None else FAILED
        records.append(_score(spec, scenario, pilot_len, trial, tag, result, status))
    return records


def _run_task(task):
    spec, pilot_len, trial = task
    return run_trial(spec, pilot_len, trial)


def aggregate(records):
    """
    Per (pilot_len, solver) point: success rate, NMSE as the ratio of summed
    error and truth energies in dB, mean detection errors and rates, fraction of
    provably optimal exact solves, mean runtime and trial count.
    """
    df = pd.DataFrame.from_records([r.to_dict() for r in records])
    df['optimal'] = df['status'] == exact.OPTIMAL
    grouped = df.groupby(['pilot_len', 'solver'], sort=True)
    agg = grouped.agg(
        trials=('trial', 'count'),
        success_rate=('success', 'mean'),
        sq_error=('sq_error', 'sum'),
        truth_energy=('truth_energy', 'sum'),
        detect_miss=('detect_miss', 'mean'),
        detect_false=('detect_false', 'mean'),
        miss_rate=('miss_rate', 'mean'),
        false_alarm_rate=('false_alarm_rate', 'mean'),
        optimal_fraction=('optimal', 'mean'),
        runtime_ms=('runtime_ms', 'mean'),
    ).reset_index()
    agg['nmse_db'] = [
        nmse_from_energies(err, truth) if truth > 0 else math.nan
        for err, truth in zip(agg['sq_error'], agg['truth_energy'])
    ]
    return agg


def run_sweep(spec, workers=None, progress=True):
    workers = default_workers() if workers is None else max(1, int(workers))
    tasks = [(spec, L, t) for L in spec.pilot_lengths for t in range(spec.trials)]
    logger.info(
        f'sweep over L={list(spec.pilot_lengths)} with {spec.trials} trials, '
        f'solvers {list(spec.solvers)}, {workers} worker(s)'
    )
    if workers == 1:
        batches = map(_run_task, tasks)
        records = [r for batch in tqdm.tqdm(batches, total=len(tasks), disable=not progress) for r in batch]
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            # map keeps task order, so the fold is independent of completion order
            batches = executor.map(_run_task, tasks)
            records = [r for batch in tqdm.tqdm(batches, total=len(tasks), disable=not progress) for r in batch]
    aggregates = aggregate(records)
    for row in aggregates.itertuples():
        logger.info(
            f'L={row.pilot_len} {row.solver}: success={row.success_rate:.3f} '
            f'nmse={row.nmse_db:.2f} dB'
        )
    return SweepResult(spec=spec, records=records, aggregates=aggregates)


def min_pilot_length(spec, k_range, success_target=0.95, solver='bnb', workers=None, progress=False):
    """
    For every K, the smallest pilot length of `spec.pilot_lengths` (scanned in
    ascending order) at which `solver` succeeds in at least `success_target`
    of the trials. None when no length in the scan qualifies.
    """
    if not 0 < success_target <= 1:
        raise InvalidArgument(f'success_target must lie in (0, 1], got {success_target}')
    found = []
    for k in k_range:
        minimum = None
        for pilot_len in sorted(spec.pilot_lengths):
            point = replace(spec, n_active=k, pilot_lengths=(pilot_len,), solvers=(solver,))
            sweep = run_sweep(point, workers=workers, progress=progress)
            rate = sweep.success_rate(solver, pilot_len)
            if rate >= success_target:
                minimum = pilot_len
                break
        if minimum is None:
            logger.warning(f'no pilot length reached {success_target:.2f} success for K={k}')
        else:
            logger.info(f'K={k}: minimum pilot length {minimum}')
        found.append((k, minimum))
    return found
