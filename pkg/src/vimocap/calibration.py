"""Two-frame IMU/camera calibration and inertial-to-camera transforms.

The unknowns are ``R_I2C`` (inertial frame to camera frame) and one
``R_S2B`` per sensor (sensor frame to its bone frame).  For an A-pose and a
T-pose frame each sensor contributes

    R_I2C @ imu_A = bone_A @ R_S2B
    R_I2C @ imu_T = bone_T @ R_S2B

which are solved in the least-squares sense over SO(3).
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation

from . import textio
from .errors import NonConvergence, RankDeficient, UnknownSensor
from .kinematics import _frozen, is_rotation, project_to_so3, rotation_angle

CALIBRATION_FORMAT_VERSION = 1
MIN_POSE_CHANGE = np.radians(5.0)


@dataclass(frozen=True, eq=False)
class ImuMeasurement:
    sensor: str
    orientation: np.ndarray  # raw R~_n in the inertial frame
    acceleration: np.ndarray  # A_I,n, gravity removed, m/s^2

    def __post_init__(self):
        object.__setattr__(self, "orientation", _frozen(self.orientation))
        object.__setattr__(self, "acceleration", _frozen(self.acceleration))
        if not is_rotation(self.orientation, 1e-6):
            raise ValueError(f"sensor {self.sensor}: orientation is not a rotation")
        if not np.all(np.isfinite(self.acceleration)):
            raise ValueError(f"sensor {self.sensor}: acceleration must be finite")


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    r_i2c: np.ndarray
    r_s2b: dict = field(default_factory=dict)  # sensor id -> (3, 3)
    objective: float = 0.0
    sweeps: int = 0
    converged: bool = True

    def __post_init__(self):
        object.__setattr__(self, "r_i2c", _frozen(self.r_i2c))
        object.__setattr__(self, "r_s2b", {k: _frozen(v) for k, v in self.r_s2b.items()})
        if not is_rotation(self.r_i2c, 1e-6) or not all(is_rotation(v, 1e-6) for v in self.r_s2b.values()):
            raise ValueError("calibration entries must be rotations")

    def mounting(self, sensor):
        try:
            return self.r_s2b[sensor]
        except KeyError:
            raise UnknownSensor(sensor) from None

    def stack(self, sensors):
        return np.stack([self.mounting(s) for s in sensors])


@dataclass(frozen=True, eq=False)
class CalibrationObservation:
    """Per-sensor IMU and bone orientations for the A-pose and T-pose frames."""

    sensors: tuple
    imu_a: np.ndarray  # (N, 3, 3)
    imu_t: np.ndarray
    bone_a: np.ndarray
    bone_t: np.ndarray

    def __post_init__(self):
        n = len(self.sensors)
        for name in ("imu_a", "imu_t", "bone_a", "bone_t"):
            arr = _frozen(getattr(self, name))
            if arr.shape != (n, 3, 3):
                raise ValueError(f"{name} must have shape ({n}, 3, 3)")
            if not is_rotation(arr, 1e-6):
                raise ValueError(f"{name} contains a non-rotation")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "sensors", tuple(self.sensors))


def calibration_objective(obs, r_i2c, r_s2b):
    """Sum of squared Frobenius residuals of both frame equations; ``r_s2b`` is (N, 3, 3)."""
    total = 0.0
    for imu, bone in ((obs.imu_a, obs.bone_a), (obs.imu_t, obs.bone_t)):
        diff = r_i2c @ imu - bone @ r_s2b
        total += float(np.sum(diff * diff))
    return total


def _axis_init(obs):
    """R_I2C from aligning the A->T relative-rotation axes of IMUs and bones."""
    q_imu = obs.imu_t @ np.swapaxes(obs.imu_a, 1, 2)
    q_bone = obs.bone_t @ np.swapaxes(obs.bone_a, 1, 2)
    angles = rotation_angle(q_bone)
    if np.max(angles) < MIN_POSE_CHANGE:
        raise RankDeficient(
            f"A- and T-pose bone orientations differ by at most {np.degrees(angles.max()):.2f} deg (< 5 deg)"
        )
    v_imu = Rotation.from_matrix(q_imu).as_rotvec()
    v_bone = Rotation.from_matrix(q_bone).as_rotvec()
    H = v_bone.T @ v_imu
    s = np.linalg.svd(H, compute_uv=False)
    if s[1] < 1e-3 * s[0]:
        raise RankDeficient("pose-change axes of all sensors are parallel; rotation about that axis is unobservable")
    return project_to_so3(H)


def _solve_mountings(obs, r_i2c):
    M = np.swapaxes(obs.bone_a, 1, 2) @ r_i2c @ obs.imu_a + np.swapaxes(obs.bone_t, 1, 2) @ r_i2c @ obs.imu_t
    return project_to_so3(M)


def _solve_i2c(obs, r_s2b):
    M = np.sum(obs.bone_a @ r_s2b @ np.swapaxes(obs.imu_a, 1, 2), axis=0)
    M += np.sum(obs.bone_t @ r_s2b @ np.swapaxes(obs.imu_t, 1, 2), axis=0)
    return project_to_so3(M)


def _left_jacobian(v):
    theta = float(np.linalg.norm(v))
    K = np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])
    if theta < 1e-6:
        return np.eye(3) + 0.5 * K + K @ K / 6.0
    return (np.eye(3) + (1.0 - np.cos(theta)) / theta**2 * K
            + (theta - np.sin(theta)) / theta**3 * K @ K)


def _polish_i2c(obs, r_i2c):
    """Minimize over R_I2C alone with every mounting at its Procrustes optimum.

    Alternation is linear-rate when the two blocks are strongly coupled, as
    they are under noise; a quasi-Newton step on this 3-parameter reduced
    objective lands on the joint minimum the sweeps would approach.  The
    mountings sit at their optimum, so the reduced gradient is the partial
    derivative with them held fixed: -2 M for M the :func:`_solve_i2c` sum.
    """

    def reduced(v):
        r = Rotation.from_rotvec(v).as_matrix() @ r_i2c
        s = _solve_mountings(obs, r)
        M = np.sum(obs.bone_a @ s @ np.swapaxes(obs.imu_a, 1, 2), axis=0)
        M += np.sum(obs.bone_t @ s @ np.swapaxes(obs.imu_t, 1, 2), axis=0)
        A = r @ M.T  # d/du tr(-2 r^T M) along exp([u]) r is -2 vee(A^T - A)
        w = -2.0 * np.array([A[1, 2] - A[2, 1], A[2, 0] - A[0, 2], A[0, 1] - A[1, 0]])
        return calibration_objective(obs, r, s), _left_jacobian(v).T @ w

    res = minimize(reduced, np.zeros(3), jac=True, method="BFGS", options={"gtol": 1e-12, "xrtol": 1e-14})
    if not np.isfinite(res.fun):
        raise NonConvergence("calibration objective became non-finite")
    cand = Rotation.from_rotvec(res.x).as_matrix() @ r_i2c
    return cand if res.fun <= reduced(np.zeros(3))[0] else r_i2c


def calibrate_two_frame(obs, tol=1e-12, max_sweeps=100, initial=None):
    """Least-squares R_I2C and per-sensor R_S2B by alternating Procrustes updates.

    Each half-sweep is the exact minimizer over one block of unknowns, so the
    objective never increases.  Iteration stops once a sweep lowers it by
    less than ``tol`` or after ``max_sweeps`` sweeps (``converged`` is then
    False).  ``initial`` overrides the closed-form axis-alignment start for
    R_I2C.  A non-finite objective raises :class:`NonConvergence`.

    The sweeps start from :func:`_polish_i2c`, so under noise they usually
    confirm the stopping rule within a few iterations.
    """
    if len(obs.sensors) < 2:
        raise RankDeficient("two-frame calibration needs at least 2 sensors")
    r_i2c = _axis_init(obs) if initial is None else project_to_so3(initial)
    r_i2c = _polish_i2c(obs, r_i2c)
    r_s2b = _solve_mountings(obs, r_i2c)
    prev = calibration_objective(obs, r_i2c, r_s2b)
    for sweep in range(1, max_sweeps + 1):
        r_i2c = _solve_i2c(obs, r_s2b)
        r_s2b = _solve_mountings(obs, r_i2c)
        value = calibration_objective(obs, r_i2c, r_s2b)
        if not np.isfinite(value):
            raise NonConvergence("calibration objective became non-finite")
        if prev - value < tol:
            return CalibrationResult(r_i2c, dict(zip(obs.sensors, r_s2b)), value, sweep, True)
        prev = value
    return CalibrationResult(r_i2c, dict(zip(obs.sensors, r_s2b)), prev, max_sweeps, False)


def transform_orientation(meas, calib):
    """Bone orientation in the camera frame: R_I2C @ R~_n @ R_S2B,n^T."""
    return calib.r_i2c @ meas.orientation @ calib.mounting(meas.sensor).T


def transform_acceleration(meas, calib):
    """Acceleration in the camera frame: R_I2C @ A_I,n."""
    calib.mounting(meas.sensor)
    return calib.r_i2c @ meas.acceleration


def transform_stream(orientations, accelerations, sensors, calib):
    """Vectorized transforms for (T, N, 3, 3) orientations and (T, N, 3) accelerations."""
    mounts = calib.stack(sensors)
    rot = calib.r_i2c @ np.asarray(orientations) @ np.swapaxes(mounts, 1, 2)
    acc = np.asarray(accelerations) @ calib.r_i2c.T
    return rot, acc


def raw_from_bone(bone_orientations, accelerations, sensors, calib):
    """Inverse of :func:`transform_stream`: camera-frame values to raw sensor readings."""
    mounts = calib.stack(sensors)
    rot = calib.r_i2c.T @ np.asarray(bone_orientations) @ mounts
    acc = np.asarray(accelerations) @ calib.r_i2c
    return rot, acc


def calibration_to_dict(calib):
    return {
        "format_version": CALIBRATION_FORMAT_VERSION,
        "r_i2c": calib.r_i2c.reshape(9),
        "r_s2b": {k: v.reshape(9) for k, v in calib.r_s2b.items()},
        "objective": calib.objective,
        "sweeps": calib.sweeps,
        "converged": calib.converged,
    }


def calibration_from_dict(doc):
    if doc.get("format_version") != CALIBRATION_FORMAT_VERSION:
        raise ValueError(f"unsupported calibration format_version {doc.get('format_version')!r}")
    return CalibrationResult(
        np.reshape(doc["r_i2c"], (3, 3)),
        {k: np.reshape(v, (3, 3)) for k, v in doc["r_s2b"].items()},
        float(doc.get("objective", 0.0)),
        int(doc.get("sweeps", 0)),
        bool(doc.get("converged", True)),
    )


def save_calibration(calib, path):
    textio.dump(calibration_to_dict(calib), path)


def load_calibration(path):
    return calibration_from_dict(textio.load(path))


def observation_to_dict(obs):
    return {
        "format_version": CALIBRATION_FORMAT_VERSION,
        "sensors": list(obs.sensors),
        "imu_a": obs.imu_a.reshape(-1, 9),
        "imu_t": obs.imu_t.reshape(-1, 9),
        "bone_a": obs.bone_a.reshape(-1, 9),
        "bone_t": obs.bone_t.reshape(-1, 9),
    }


def observation_from_dict(doc):
    return CalibrationObservation(
        tuple(doc["sensors"]),
        *(np.reshape(doc[k], (-1, 3, 3)) for k in ("imu_a", "imu_t", "bone_a", "bone_t")),
    )
