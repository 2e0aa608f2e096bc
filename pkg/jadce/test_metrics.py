import unittest

import numpy as np

from jadce.metrics import (NMSE_FLOOR_DB, activity_threshold, calibrate_epsilon,
                           detect_activity, detection_errors, detection_rates,
                           nmse_db, nmse_from_energies, recovery_success)
from jadce.model import InvalidArgument, generate_scenario


class TestNmse(unittest.TestCase):

    def setUp(self):
        self.truth = generate_scenario(10, 2, 4, 3, seed=2).ground_truth

    def test_exact_recovery_hits_floor(self):
        assert nmse_db(self.truth, self.truth) == NMSE_FLOOR_DB

    def test_zero_and_doubled_estimates(self):
        assert np.isclose(nmse_db(np.zeros_like(self.truth), self.truth), 0.0)
        assert np.isclose(nmse_db(2 * self.truth, self.truth), 0.0)

    def test_errors(self):
        with self.assertRaises(InvalidArgument):
            nmse_db(self.truth, np.zeros_like(self.truth))
        with self.assertRaises(InvalidArgument):
            nmse_db(self.truth[:3], self.truth)

    def test_ratio_of_energies(self):
        assert np.isclose(nmse_from_energies(1.0, 100.0), -20.0)

    def test_recovery_success(self):
        assert recovery_success(self.truth + 1e-7, self.truth)
        assert not recovery_success(self.truth + 1e-3, self.truth)


class TestActivity(unittest.TestCase):

    def test_detect_activity(self):
        estimate = np.array([[0.9], [0.05], [1.3j]])
        assert list(detect_activity(estimate, 0.1)) == [1, 0, 1]
        assert not detect_activity(np.zeros((4, 2)), 0.1).any()

    def test_exact_estimate_recovers_activity(self):
        scenario = generate_scenario(20, 2, 6, 4, seed=9)
        detected = detect_activity(scenario.ground_truth, 1e-3)
        assert np.array_equal(detected, scenario.activity)

    def test_gamma0_must_be_positive(self):
        with self.assertRaises(InvalidArgument):
            detect_activity(np.ones((2, 2)), 0.0)

    def test_activity_threshold(self):
        estimate = np.array([[2.0, 0.0], [0.0, 0.0]])
        assert np.isclose(activity_threshold(estimate), 0.1)
        assert activity_threshold(np.zeros((3, 1))) == 1e-6

    def test_detection_errors(self):
        activity = np.array([1, 1, 0, 0, 0])
        detected = np.array([1, 0, 1, 1, 0])
        assert detection_errors(activity, detected) == (1, 2)
        p_miss, p_false = detection_rates(activity, detected)
        assert np.isclose(p_miss, 0.5)
        assert np.isclose(p_false, 2 / 3)
        assert detection_rates(np.zeros(3), np.zeros(3)) == (0.0, 0.0)


class TestEpsilon(unittest.TestCase):

    def test_noiseless(self):
        assert calibrate_epsilon(0.0, 10, 2) == 0.0

    def test_formula(self):
        assert np.isclose(calibrate_epsilon(0.01, 10, 2), np.sqrt(0.2) * 1.1)
        assert abs(calibrate_epsilon(0.01, 10, 2) - 0.4919) < 1e-4

    def test_negative_variance(self):
        with self.assertRaises(InvalidArgument):
            calibrate_epsilon(-1.0, 4, 2)

    def test_true_channels_feasible(self):
        feasible = 0
        draws = 1000
        for seed in range(draws):
            scenario = generate_scenario(30, 2, 128, 5, snr_db=30.0, seed=seed)
            epsilon = calibrate_epsilon(scenario.noise_var, 128, 2)
            feasible += np.linalg.norm(scenario.noise) <= epsilon
        assert feasible / draws >= 0.97
