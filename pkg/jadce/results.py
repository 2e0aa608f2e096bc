"""
Artifacts of a run: per-solver curve files, the per-trial table, JSON mirrors
and a manifest. CSV files are written deterministically so repeated runs of
one configuration produce identical bytes.
"""
import json
from importlib import metadata
from pathlib import Path

import arrow
import pandas as pd

from .log import create_logger


logger = create_logger(__name__)

VERSION_FILE = Path(__file__).parent.parent / 'VERSION'
CURVE_COLUMNS = {
    'fig1': ['pilot_len', 'success_rate', 'trials'],
    'fig2': ['pilot_len', 'nmse_db', 'trials'],
    'fig4': ['pilot_len', 'nmse_db', 'trials'],
}
DEFAULT_CURVE_COLUMNS = [
    'pilot_len', 'success_rate', 'nmse_db', 'detect_miss', 'detect_false',
    'miss_rate', 'false_alarm_rate', 'optimal_fraction', 'trials',
]
TRIAL_COLUMNS = [
    'pilot_len', 'n_active', 'trial', 'seed', 'solver', 'nmse_db', 'sq_error',
    'truth_energy', 'success', 'detect_miss', 'detect_false', 'miss_rate',
    'false_alarm_rate', 'status',
]


def tool_version():
    try:
        return metadata.version('jadce')
    except metadata.PackageNotFoundError:
        if VERSION_FILE.exists():
            return VERSION_FILE.read_text().strip()
        return 'unknown'


def solver_slug(tag):
    return tag.replace('-', '')


def _write_frame(df, path, output_format):
    written = [path.with_suffix('.csv')]
    df.to_csv(written[0], index=False, float_format='%.10g', lineterminator='\n')
    if output_format == 'json':
        written.append(path.with_suffix('.json'))
        with open(written[1], 'w') as f:
            json.dump(json.loads(df.to_json(orient='records')), f, indent=2)
            f.write('\n')
    for p in written:
        logger.info(f'wrote {p}')
    return written


def prepare_output_dir(output_dir):
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    return output_dir


def write_sweep(name, sweep, output_dir, output_format='csv'):
    """
    One curve file per solver plus `<name>_trials`. Returns the paths written.
    """
    output_dir = prepare_output_dir(output_dir)
    columns = CURVE_COLUMNS.get(name, DEFAULT_CURVE_COLUMNS)
    written = []
    for tag in sweep.spec.solvers:
        curve = sweep.curve(tag)[columns].rename(columns={'pilot_len': 'L'})
        written += _write_frame(curve, output_dir / f'{name}_{solver_slug(tag)}', output_format)
    trials = pd.DataFrame.from_records([r.to_dict() for r in sweep.records])[TRIAL_COLUMNS]
    written += _write_frame(trials, output_dir / f'{name}_trials', output_format)
    return written


def write_min_lengths(name, rows, output_dir, output_format='csv'):
    output_dir = prepare_output_dir(output_dir)
    df = pd.DataFrame(rows, columns=['K', 'L_min'])
    df['L_min'] = df['L_min'].astype('Int64')
    return _write_frame(df, output_dir / name, output_format)


def write_manifest(config, output_dir, files, seeds, point_trials, elapsed_s):
    """
    Effective configuration, tool version, per-pilot-length seed lists,
    trial counts per sweep point and the files written.
    """
    manifest = {
        'tool': 'jadce',
        'version': tool_version(),
        'created': arrow.utcnow().isoformat(),
        'config': config.to_dict(),
        'seeds': {str(L): s for L, s in seeds.items()},
        'trials_per_point': point_trials,
        'files': sorted(Path(f).name for f in files),
        'elapsed_s': round(elapsed_s, 3),
    }
    path = prepare_output_dir(output_dir) / 'manifest.json'
    with open(path, 'w') as f:
        json.dump(manifest, f, indent=2)
        f.write('\n')
    logger.info(f'wrote {path}')
    return path
