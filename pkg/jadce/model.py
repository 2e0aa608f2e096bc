"""
System model for grant-free uplink access: N single-antenna devices share
a block of L pilot symbols towards an M-antenna base station,

    Y = S X + Z,    X = A H,

with S (L x N) the pilot matrix, H (N x M) the channels, A = diag(a) the
activity pattern and Z additive noise. All matrices are complex numpy arrays.

Solvers work on the real lifting of this system, where device i owns the
group of real rows {i, N + i} of the stacked solution [Re X; Im X].
"""
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .log import create_logger


logger = create_logger(__name__)


class InvalidArgument(ValueError):
    pass


def as_complex_matrix(x, name='matrix'):
    """
    Validate and convert to a 2-d complex128 array with finite entries.
    """
    x = np.asarray(x)
    if x.ndim != 2:
        raise InvalidArgument(f'{name} must be 2-dimensional, got shape {x.shape}')
    if not np.all(np.isfinite(x)):
        raise InvalidArgument(f'{name} contains non-finite entries')
    return x.astype(np.complex128, copy=False)


def check_system(pilots, observation):
    pilots = as_complex_matrix(pilots, 'pilots')
    observation = as_complex_matrix(observation, 'observation')
    if pilots.shape[0] != observation.shape[0]:
        raise InvalidArgument(
            f'pilots have {pilots.shape[0]} rows but observation has {observation.shape[0]}'
        )
    return pilots, observation


def complex_gaussian(rng, shape, var=1.0):
    """
    i.i.d. circularly-symmetric complex Gaussian entries with variance `var`
    per complex entry.
    """
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def make_rng(seed):
    # counter-based generator so that each (seed) stream is independent of trial order
    return np.random.Generator(np.random.Philox(seed))


def trial_seed(base_seed, pilot_len, trial):
    """
    Stable per-trial seed derived from (base_seed, pilot_len, trial). Adding
    solvers or sweep points never changes the seed of an existing trial.
    """
    if min(base_seed, pilot_len, trial) < 0:
        raise InvalidArgument('seed components must be nonnegative')
    seq = np.random.SeedSequence([int(base_seed), int(pilot_len), int(trial)])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True, eq=False)
class Scenario:
    """
    One synthetic instance of the uplink model. Immutable after construction.
    """
    n_devices: int
    n_antennas: int
    pilot_len: int
    n_active: int
    pilots: np.ndarray
    channels: np.ndarray
    activity: np.ndarray
    ground_truth: np.ndarray
    observation: np.ndarray
    noise_var: float
    seed: int
    snr_db: Optional[float] = None

    @property
    def active_set(self) -> Tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.activity))

    @property
    def noise(self):
        return self.observation - self.pilots @ self.ground_truth

    def __repr__(self):
        return (
            f'Scenario(N={self.n_devices}, M={self.n_antennas}, L={self.pilot_len}, '
            f'K={self.n_active}, snr_db={self.snr_db}, seed={self.seed})'
        )


def noise_variance(n_active, snr_db):
    """
    Per-entry noise variance for a given SNR, where SNR is the ratio of the
    expected received pilot energy E||SX||_F^2 to E||Z||_F^2. Each entry of SX
    has variance K, hence sigma^2 = K * 10^(-snr/10).
    """
    if snr_db is None:
        return 0.0
    return float(n_active * 10 ** (-snr_db / 10.0))


def generate_scenario(n_devices, n_antennas, pilot_len, n_active, snr_db=None, seed=0):
    """
    Draw pilots S ~ CN(0,1), Rayleigh channels H ~ CN(0,1), a uniformly random
    active set of exactly K devices and the observation Y = S A H + Z.
    The scenario is a pure function of its arguments.
    """
    if n_devices < 1 or n_antennas < 1 or pilot_len < 1:
        raise InvalidArgument(
            f'dimensions must be positive: N={n_devices}, M={n_antennas}, L={pilot_len}'
        )
    if not 0 <= n_active <= n_devices:
        raise InvalidArgument(f'n_active must lie in [0, {n_devices}], got {n_active}')
    if snr_db is not None and not np.isfinite(snr_db):
        raise InvalidArgument(f'snr_db must be finite or None, got {snr_db}')

    rng = make_rng(seed)
    pilots = complex_gaussian(rng, (pilot_len, n_devices))
    channels = complex_gaussian(rng, (n_devices, n_antennas))
    active = np.sort(rng.choice(n_devices, size=n_active, replace=False))
    activity = np.zeros(n_devices, dtype=np.int8)
    activity[active] = 1
    ground_truth = channels * activity[:, None]

    noise_var = noise_variance(n_active, snr_db)
    observation = pilots @ ground_truth
    if noise_var > 0:
        observation = observation + complex_gaussian(
            rng, (pilot_len, n_antennas), var=noise_var
        )

    return Scenario(
        n_devices=n_devices,
        n_antennas=n_antennas,
        pilot_len=pilot_len,
        n_active=n_active,
        pilots=pilots,
        channels=channels,
        activity=activity,
        ground_truth=ground_truth,
        observation=observation,
        noise_var=noise_var,
        seed=seed,
        snr_db=snr_db,
    )


@dataclass(frozen=True, eq=False)
class RealifiedSystem:
    """
    Real lifting of Y = S X:

        design      = [[Re S, -Im S],
                       [Im S,  Re S]]        (2L x 2N)
        observation = [Re Y; Im Y]           (2L x M)

    Group i of a real solution matrix is the pair of rows (i, N + i).
    """
    design: np.ndarray
    observation: np.ndarray
    group_map: Tuple[Tuple[int, int], ...] = field(repr=False)
    group_dim: int

    @property
    def n_groups(self):
        return len(self.group_map)

    @property
    def pilot_len(self):
        return self.design.shape[0] // 2

    def to_complex(self):
        """
        Recover (S, Y) exactly from the block structure.
        """
        n, length = self.n_groups, self.pilot_len
        pilots = self.design[:length, :n] + 1j * self.design[length:, :n]
        observation = self.observation[:length] + 1j * self.observation[length:]
        return pilots, observation


def stack_real(x):
    """
    [Re X; Im X] for a complex N x M matrix.
    """
    x = np.asarray(x)
    return np.vstack([x.real, x.imag])


def realify(pilots, observation):
    pilots, observation = check_system(pilots, observation)
    re, im = pilots.real, pilots.imag
    design = np.block([[re, -im], [im, re]])
    n = pilots.shape[1]
    return RealifiedSystem(
        design=design,
        observation=stack_real(observation),
        group_map=tuple((i, n + i) for i in range(n)),
        group_dim=2 * observation.shape[1],
    )


def derealify(x_real):
    """
    Inverse of `stack_real`: row i of the result is x_real[i] + j x_real[N + i].
    """
    x_real = np.asarray(x_real, dtype=np.float64)
    if x_real.ndim != 2:
        raise InvalidArgument(f'expected a 2-d real matrix, got shape {x_real.shape}')
    if x_real.shape[0] % 2:
        raise InvalidArgument(f'row count must be even, got {x_real.shape[0]}')
    n = x_real.shape[0] // 2
    return x_real[:n] + 1j * x_real[n:]


def row_group_norms(x):
    """
    Euclidean norm of every row of a complex matrix, i.e. of each device's
    2M real components.
    """
    return np.linalg.norm(np.asarray(x), axis=1)


def real_group_norms(x_real):
    n = x_real.shape[0] // 2
    return np.sqrt(np.sum(x_real[:n] ** 2 + x_real[n:] ** 2, axis=1))


def to_groups(x_real):
    """
    Rearrange a stacked real matrix (2N x M) into one row per group (N x 2M).
    """
    n = x_real.shape[0] // 2
    return np.hstack([x_real[:n], x_real[n:]])


def from_groups(groups):
    m = groups.shape[1] // 2
    return np.vstack([groups[:, :m], groups[:, m:]])
