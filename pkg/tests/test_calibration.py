import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vimocap import calibration as C
from vimocap.errors import NonConvergence, RankDeficient, UnknownSensor
from vimocap.kinematics import geodesic_distance, random_rotations
from vimocap.synth import calibration_observation, random_calibration


def sensors_of(skeleton):
    return tuple(skeleton.bones[i].name for i in skeleton.supervision_map)


def max_error_deg(est, truth):
    errs = [geodesic_distance(est.r_i2c, truth.r_i2c)]
    errs += [geodesic_distance(est.mounting(s), truth.mounting(s)) for s in truth.r_s2b]
    return np.degrees(max(errs))


def test_zero_noise_recovers_truth(skeleton, rig):
    rng = np.random.default_rng(7)
    truth = random_calibration(sensors_of(skeleton), rng)
    obs = calibration_observation(skeleton, rig, truth, sensors_of(skeleton), 0.0, rng)
    est = C.calibrate_two_frame(obs)
    assert est.converged
    assert np.radians(max_error_deg(est, truth)) <= 1e-6
    assert est.objective < 1e-20


@settings(max_examples=15)
@given(st.integers(0, 2**31 - 1))
def test_zero_noise_recovery_property(skeleton, rig, seed):
    rng = np.random.default_rng(seed)
    truth = random_calibration(sensors_of(skeleton), rng)
    est = C.calibrate_two_frame(calibration_observation(skeleton, rig, truth, sensors_of(skeleton), 0.0, rng))
    assert np.radians(max_error_deg(est, truth)) <= 1e-6


def test_objective_is_zero_at_truth_and_positive_elsewhere(skeleton, rig):
    rng = np.random.default_rng(3)
    truth = random_calibration(sensors_of(skeleton), rng)
    obs = calibration_observation(skeleton, rig, truth, sensors_of(skeleton), 0.0, rng)
    stacked = truth.stack(obs.sensors)
    assert C.calibration_objective(obs, truth.r_i2c, stacked) < 1e-24
    other = random_rotations(1, rng)[0]
    assert C.calibration_objective(obs, other, stacked) > 1e-3


def test_sweeps_never_increase_objective(skeleton, rig):
    rng = np.random.default_rng(11)
    truth = random_calibration(sensors_of(skeleton), rng)
    obs = calibration_observation(skeleton, rig, truth, sensors_of(skeleton), 2.0, rng)
    r = random_rotations(1, rng)[0]
    prev = np.inf
    for _ in range(20):
        m = C._solve_mountings(obs, r)
        value = C.calibration_objective(obs, r, m)
        assert value <= prev + 1e-12
        prev = value
        r = C._solve_i2c(obs, m)


def test_noisy_result_beats_truth_on_objective(skeleton, rig):
    # the estimate is a least-squares minimum, so ground truth cannot score lower
    rng = np.random.default_rng(5)
    truth = random_calibration(sensors_of(skeleton), rng)
    obs = calibration_observation(skeleton, rig, truth, sensors_of(skeleton), 1.0, rng)
    est = C.calibrate_two_frame(obs)
    assert est.objective <= C.calibration_objective(obs, truth.r_i2c, truth.stack(obs.sensors)) + 1e-12


def test_one_degree_noise_error_budget(skeleton, rig):
    errs = []
    for seed in range(30):
        rng = np.random.default_rng(1000 + seed)
        truth = random_calibration(sensors_of(skeleton), rng)
        obs = calibration_observation(skeleton, rig, truth, sensors_of(skeleton), 1.0, rng)
        errs.append(max_error_deg(C.calibrate_two_frame(obs), truth))
    assert np.percentile(errs, 95) <= 3.0


def test_identical_poses_are_rank_deficient(skeleton, rig):
    rng = np.random.default_rng(0)
    truth = random_calibration(sensors_of(skeleton), rng)
    obs = calibration_observation(skeleton, rig, truth, sensors_of(skeleton), 0.0, rng)
    same = C.CalibrationObservation(obs.sensors, obs.imu_a, obs.imu_a, obs.bone_a, obs.bone_a)
    with pytest.raises(RankDeficient):
        C.calibrate_two_frame(same)


def test_single_sensor_is_rank_deficient(skeleton, rig):
    rng = np.random.default_rng(0)
    truth = random_calibration(sensors_of(skeleton), rng)
    obs = calibration_observation(skeleton, rig, truth, sensors_of(skeleton), 0.0, rng)
    one = C.CalibrationObservation(obs.sensors[:1], obs.imu_a[:1], obs.imu_t[:1], obs.bone_a[:1], obs.bone_t[:1])
    with pytest.raises(RankDeficient):
        C.calibrate_two_frame(one)


def test_non_finite_objective_raises(skeleton, rig, monkeypatch):
    rng = np.random.default_rng(0)
    truth = random_calibration(sensors_of(skeleton), rng)
    obs = calibration_observation(skeleton, rig, truth, sensors_of(skeleton), 1.0, rng)
    monkeypatch.setattr(C, "calibration_objective", lambda *a: float("nan"))
    with pytest.raises(NonConvergence):
        C.calibrate_two_frame(obs)


def test_transform_orientation_matches_formula(rng):
    r_i2c = random_rotations(1, rng)[0]
    mount = random_rotations(1, rng)[0]
    calib = C.CalibrationResult(r_i2c, {"s": mount})
    raw = random_rotations(1, rng)[0]
    meas = C.ImuMeasurement("s", raw, np.array([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(C.transform_orientation(meas, calib), r_i2c @ raw @ mount.T, atol=1e-15)
    np.testing.assert_allclose(C.transform_acceleration(meas, calib), r_i2c @ [1.0, 2.0, 3.0], atol=1e-15)


def test_stream_round_trip(rng):
    sensors = ("a", "b")
    calib = C.CalibrationResult(random_rotations(1, rng)[0], dict(zip(sensors, random_rotations(2, rng))))
    ori = random_rotations(10, rng).reshape(5, 2, 3, 3)
    acc = rng.normal(size=(5, 2, 3))
    raw_o, raw_a = C.raw_from_bone(ori, acc, sensors, calib)
    back_o, back_a = C.transform_stream(raw_o, raw_a, sensors, calib)
    np.testing.assert_allclose(back_o, ori, atol=1e-14)
    np.testing.assert_allclose(back_a, acc, atol=1e-14)


def test_unknown_sensor_raises(rng):
    calib = C.CalibrationResult(np.eye(3), {"a": np.eye(3)})
    with pytest.raises(UnknownSensor):
        C.transform_acceleration(C.ImuMeasurement("b", np.eye(3), np.zeros(3)), calib)


def test_invalid_measurements_rejected():
    with pytest.raises(ValueError):
        C.ImuMeasurement("a", 2.0 * np.eye(3), np.zeros(3))
    with pytest.raises(ValueError):
        C.ImuMeasurement("a", np.eye(3), np.array([np.nan, 0.0, 0.0]))


def test_calibration_file_round_trip(tmp_path, rng):
    calib = C.CalibrationResult(random_rotations(1, rng)[0], {"a": random_rotations(1, rng)[0]}, 1e-3, 7, False)
    path = tmp_path / "cal.json"
    C.save_calibration(calib, path)
    back = C.load_calibration(path)
    np.testing.assert_array_equal(back.r_i2c, calib.r_i2c)
    np.testing.assert_array_equal(back.mounting("a"), calib.mounting("a"))
    assert (back.objective, back.sweeps, back.converged) == (1e-3, 7, False)


def test_observation_dict_round_trip(skeleton, rig):
    rng = np.random.default_rng(0)
    truth = random_calibration(sensors_of(skeleton), rng)
    obs = calibration_observation(skeleton, rig, truth, sensors_of(skeleton), 1.0, rng)
    back = C.observation_from_dict(C.observation_to_dict(obs))
    assert back.sensors == obs.sensors
    np.testing.assert_array_equal(back.imu_t, obs.imu_t)
