"""
Run configuration: built-in defaults, flat JSON config files, figure presets
and command-line flags, in increasing order of precedence.
"""
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Tuple

from . import exact
from .experiments import ExperimentSpec
from .log import create_logger
from .metrics import DEFAULT_EPSILON_HEADROOM, DEFAULT_SUCCESS_TOL
from .model import InvalidArgument


logger = create_logger(__name__)

OUTPUT_FORMATS = ('csv', 'json')
ALL_SOLVERS = ('bnb', 'reweighted', 'group-lasso')


class ConfigError(Exception):
    pass


PRESETS = {
    'fig1': {
        'n_devices': 30, 'n_active': 5, 'n_antennas': 2,
        'pilot_lengths': list(range(2, 21)), 'snr_db': None,
        'trials': 100, 'solvers': list(ALL_SOLVERS),
    },
    'fig2': {
        'n_devices': 30, 'n_active': 5, 'n_antennas': 2,
        'pilot_lengths': list(range(2, 21)), 'snr_db': None,
        'trials': 100, 'solvers': list(ALL_SOLVERS),
    },
    'fig3': {
        'n_devices': 30, 'n_antennas': 2, 'k_range': list(range(1, 7)),
        'pilot_lengths': list(range(1, 13)), 'snr_db': None,
        'trials': 100, 'solvers': ['bnb'], 'success_target': 0.95,
    },
    'fig4': {
        'n_devices': 30, 'n_active': 5, 'n_antennas': 2,
        'pilot_lengths': list(range(2, 21)), 'snr_db': 30.0,
        'trials': 100, 'solvers': list(ALL_SOLVERS), 'node_limit': 200_000,
    },
}


@dataclass(frozen=True)
class RunConfig:
    n_devices: int = 30
    n_antennas: int = 2
    n_active: int = 5
    pilot_lengths: Tuple[int, ...] = tuple(range(2, 21))
    snr_db: Optional[float] = None
    trials: int = 100
    base_seed: int = 0
    solvers: Tuple[str, ...] = ALL_SOLVERS
    success_tol: float = DEFAULT_SUCCESS_TOL
    gamma0: Optional[float] = None
    epsilon_headroom: float = DEFAULT_EPSILON_HEADROOM
    node_limit: int = exact.DEFAULT_NODE_LIMIT
    reweighted_iters: int = 5
    output_dir: str = 'results'
    output_format: str = 'csv'
    preset: Optional[str] = None
    k_range: Optional[Tuple[int, ...]] = None
    success_target: float = 0.95
    workers: Optional[int] = None

    def __post_init__(self):
        try:
            object.__setattr__(self, 'pilot_lengths', tuple(self.pilot_lengths))
            object.__setattr__(self, 'solvers', tuple(self.solvers))
            if self.k_range is not None:
                object.__setattr__(self, 'k_range', tuple(self.k_range))
            if self.output_format not in OUTPUT_FORMATS:
                raise ConfigError(f'output_format must be one of {OUTPUT_FORMATS}, got {self.output_format}')
            if self.preset is not None and self.preset not in PRESETS:
                raise ConfigError(f'unknown preset: {self.preset}')
            if not 0 < self.success_target <= 1:
                raise ConfigError(f'success_target must lie in (0, 1], got {self.success_target}')
            if self.k_range is not None and (not self.k_range or min(self.k_range) < 0):
                raise ConfigError('k_range must be a nonempty list of nonnegative counts')
            self.to_spec()
        except (InvalidArgument, NotImplementedError, TypeError, ValueError) as e:
            # wrongly typed values from a config file end up here too
            raise ConfigError(f'invalid config value: {e}')

    @property
    def name(self):
        return self.preset or 'run'

    @property
    def is_min_length_search(self):
        return self.k_range is not None

    def to_spec(self):
        n_active = self.n_active
        if self.k_range is not None:
            # checked per K when the search runs
            n_active = min(self.k_range)
        return ExperimentSpec(
            n_devices=self.n_devices,
            n_antennas=self.n_antennas,
            n_active=n_active,
            pilot_lengths=self.pilot_lengths,
            snr_db=self.snr_db,
            trials=self.trials,
            base_seed=self.base_seed,
            solvers=self.solvers,
            success_tol=self.success_tol,
            gamma0=self.gamma0,
            epsilon_headroom=self.epsilon_headroom,
            node_limit=self.node_limit,
            reweighted_iters=self.reweighted_iters,
        )

    def to_dict(self):
        return {f.name: _jsonable(getattr(self, f.name)) for f in fields(self)}


def _jsonable(value):
    return list(value) if isinstance(value, tuple) else value


FIELD_NAMES = frozenset(f.name for f in fields(RunConfig))


def read_config_file(path):
    """
    Flat JSON object whose keys are RunConfig fields.
    """
    try:
        with open(path) as f:
            config = json.load(f)
    except OSError as e:
        raise ConfigError(f'cannot read config file {path}: {e}')
    except json.JSONDecodeError as e:
        raise ConfigError(f'malformed config file {path}: {e}')
    if not isinstance(config, dict):
        raise ConfigError(f'config file {path} must hold a JSON object')
    unknown = sorted(set(config) - FIELD_NAMES)
    if unknown:
        raise ConfigError(f'unknown config keys in {path}: {unknown}')
    return config


def load_config(path=None, preset=None, overrides=None):
    """
    Merge defaults < config file < preset < overrides into a RunConfig.
    Overrides with value None are ignored.
    """
    values = {}
    if path is not None:
        values.update(read_config_file(Path(path)))
    preset = preset or values.get('preset')
    if preset is not None:
        if not isinstance(preset, str) or preset not in PRESETS:
            raise ConfigError(f'unknown preset: {preset}')
        values.update(PRESETS[preset])
        values['preset'] = preset
    for key, value in (overrides or {}).items():
        if key not in FIELD_NAMES:
            raise ConfigError(f'unknown setting: {key}')
        if value is not None:
            values[key] = value
    try:
        config = RunConfig(**values)
    except TypeError as e:
        raise ConfigError(str(e))
    logger.debug(f'effective config {config.to_dict()}')
    return config
