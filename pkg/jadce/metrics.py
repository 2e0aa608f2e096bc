import numpy as np

from .model import InvalidArgument, row_group_norms


NMSE_FLOOR_DB = -320.0
DEFAULT_SUCCESS_TOL = 1e-5
DEFAULT_GAMMA0_FRACTION = 0.05
DEFAULT_GAMMA0_FLOOR = 1e-6
DEFAULT_EPSILON_HEADROOM = 0.1


def squared_error(estimate, truth):
    return float(np.linalg.norm(np.asarray(estimate) - np.asarray(truth)) ** 2)


def nmse_from_energies(error_energy, truth_energy):
    """
    10 log10(error / truth) with exact recovery mapped to the -320 dB floor.
    """
    if truth_energy <= 0:
        raise InvalidArgument('NMSE is undefined for an all-zero ground truth')
    if error_energy <= 0:
        return NMSE_FLOOR_DB
    return max(10.0 * np.log10(error_energy / truth_energy), NMSE_FLOOR_DB)


def nmse_db(estimate, truth):
    estimate = np.asarray(estimate)
    truth = np.asarray(truth)
    if estimate.shape != truth.shape:
        raise InvalidArgument(f'shape mismatch: {estimate.shape} vs {truth.shape}')
    return nmse_from_energies(
        squared_error(estimate, truth),
        float(np.linalg.norm(truth) ** 2)
    )


def recovery_success(estimate, truth, tol=DEFAULT_SUCCESS_TOL):
    """
    Unnormalized success criterion ||X_hat - X||_F <= tol.
    """
    return bool(np.linalg.norm(np.asarray(estimate) - np.asarray(truth)) <= tol)


def activity_threshold(estimate, fraction=DEFAULT_GAMMA0_FRACTION, floor=DEFAULT_GAMMA0_FLOOR):
    """
    Scale-free activity threshold: gamma0 = max(floor, fraction * max_i ||X_i||).
    """
    norms = row_group_norms(estimate)
    peak = float(norms.max()) if norms.size else 0.0
    return max(floor, fraction * peak)


def detect_activity(estimate, gamma0):
    if not gamma0 > 0:
        raise InvalidArgument(f'gamma0 must be positive, got {gamma0}')
    return (row_group_norms(estimate) >= gamma0).astype(np.int8)


def detection_errors(activity, detected):
    """
    (missed detections, false alarms) as counts.
    """
    activity = np.asarray(activity).astype(bool)
    detected = np.asarray(detected).astype(bool)
    miss = int(np.sum(activity & ~detected))
    false = int(np.sum(~activity & detected))
    return miss, false


def detection_rates(activity, detected):
    activity = np.asarray(activity).astype(bool)
    miss, false = detection_errors(activity, detected)
    n_active = int(activity.sum())
    n_inactive = activity.size - n_active
    p_miss = miss / n_active if n_active else 0.0
    p_false = false / n_inactive if n_inactive else 0.0
    return p_miss, p_false


def calibrate_epsilon(noise_var, pilot_len, n_antennas, headroom=DEFAULT_EPSILON_HEADROOM):
    """
    Residual budget for the noisy problems: the expected noise norm
    sqrt(sigma^2 L M) inflated by `headroom`. Noiseless problems get 0.
    """
    if noise_var < 0:
        raise InvalidArgument(f'noise_var must be nonnegative, got {noise_var}')
    if noise_var == 0:
        return 0.0
    return float(np.sqrt(noise_var * pilot_len * n_antennas) * (1.0 + headroom))
