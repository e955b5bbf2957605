"""Synthetic capture rig.

Motions are generated in a *stage* frame (+y up, actor facing +z, floor at
y = 0) and then expressed in the capture reference frame, which is the
inference camera's frame.  Every camera in a :class:`CaptureRig` stores its
extrinsics relative to that reference frame, so camera 0 has identity
extrinsics.
"""
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import BSpline
from scipy.spatial.transform import Rotation

from . import kernels, textio
from .calibration import (
    CalibrationObservation,
    CalibrationResult,
    ImuMeasurement,
    calibration_from_dict,
    calibration_to_dict,
    observation_from_dict,
    observation_to_dict,
    raw_from_bone,
    transform_stream,
)
from .errors import BehindCamera, DimensionMismatch
from .kinematics import (
    MotionSequence,
    PoseFrame,
    SkeletonConfig,
    _frozen,
    bone_midpoints,
    bone_rotations,
    euler_to_matrix,
    fk_arrays,
    transform_motion,
)

DATASET_FORMAT_VERSION = 1
MOTION_KINDS = ("reach", "squat", "spin", "dance_loop", "random_spline")
MIN_DEPTH = 1e-6
PELVIS_HEIGHT = 0.94


# --------------------------------------------------------------------------
# cameras


@dataclass(frozen=True, eq=False)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # reference frame -> camera
    translation: np.ndarray
    width: int = 1000
    height: int = 1000

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        object.__setattr__(self, "rotation", _frozen(self.rotation))
        object.__setattr__(self, "translation", _frozen(self.translation))

    @property
    def intrinsics(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def center(self):
        return -self.rotation.T @ self.translation

    def to_dict(self):
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "rotation": self.rotation.reshape(9), "translation": self.translation,
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["fx"], doc["fy"], doc["cx"], doc["cy"], np.reshape(doc["rotation"], (3, 3)),
                   doc["translation"], int(doc["width"]), int(doc["height"]))


def look_at(eye, target, up=(0.0, 1.0, 0.0), fx=1000.0, fy=1000.0, cx=500.0, cy=500.0, width=1000, height=1000):
    """Camera at ``eye`` looking at ``target``; image x right, y down, z forward."""
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return CameraModel(fx, fy, cx, cy, R, -R @ eye, width, height)


def project(camera, X):
    """Pinhole projection of one 3D point (reference frame) to pixels."""
    uv, depth = kernels.project_points(np.asarray(X, dtype=np.float64).reshape(1, 3), camera.rotation,
                                       camera.translation, camera.fx, camera.fy, camera.cx, camera.cy)
    if depth[0] <= MIN_DEPTH:
        raise BehindCamera(f"point depth {depth[0]:.3g} m is not in front of the camera")
    return uv[0]


def project_many(camera, X):
    """Vectorized projection of (..., 3) points; returns pixels (..., 2) and depths (...)."""
    X = np.asarray(X, dtype=np.float64)
    uv, depth = kernels.project_points(X.reshape(-1, 3), camera.rotation, camera.translation,
                                       camera.fx, camera.fy, camera.cx, camera.cy)
    return uv.reshape(X.shape[:-1] + (2,)), depth.reshape(X.shape[:-1])


def canonicalize_keypoints(p, camera):
    """Map pixels onto the Z = 1 plane through the inverse intrinsics."""
    p = np.asarray(p, dtype=np.float64)
    out = np.empty_like(p)
    out[..., 0] = (p[..., 0] - camera.cx) / camera.fx
    out[..., 1] = (p[..., 1] - camera.cy) / camera.fy
    return out


@dataclass(frozen=True, eq=False)
class CaptureRig:
    """Cameras in the reference frame plus the stage->reference transform."""

    cameras: tuple
    stage_rotation: np.ndarray
    stage_translation: np.ndarray
    inference_camera: int = 0

    def stage_to_reference(self, motion):
        return transform_motion(motion, self.stage_rotation, self.stage_translation)

    def to_dict(self):
        return {
            "cameras": [c.to_dict() for c in self.cameras],
            "stage_rotation": self.stage_rotation.reshape(9),
            "stage_translation": self.stage_translation,
            "inference_camera": self.inference_camera,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(tuple(CameraModel.from_dict(c) for c in doc["cameras"]),
                   np.reshape(doc["stage_rotation"], (3, 3)), np.asarray(doc["stage_translation"], float),
                   int(doc.get("inference_camera", 0)))


def default_rig(n_cameras=4, radius=3.0, height=1.5, target_height=1.0, focal=1000.0, size=1000):
    """Ring of cameras around the stage origin; camera 0 faces the actor's front."""
    stage_cams = []
    for k in range(n_cameras):
        phi = 2.0 * math.pi * k / n_cameras
        eye = (radius * math.sin(phi), height, radius * math.cos(phi))
        stage_cams.append(look_at(eye, (0.0, target_height, 0.0), fx=focal, fy=focal,
                                  cx=size / 2.0, cy=size / 2.0, width=size, height=size))
    ref = stage_cams[0]
    R0, t0 = ref.rotation, ref.translation
    cams = []
    for cam in stage_cams:
        # x_cam = R_c x_stage + t_c and x_stage = R0^T (x_ref - t0)
        R = cam.rotation @ R0.T
        cams.append(CameraModel(cam.fx, cam.fy, cam.cx, cam.cy, R, cam.translation - R @ t0, cam.width, cam.height))
    return CaptureRig(tuple(cams), R0, t0, 0)


# --------------------------------------------------------------------------
# motion generation (stage frame)


def _quintic(u):
    return u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)


def _neutral_pose(skeleton):
    """Relaxed standing pose in degrees: arms lowered, elbows and knees slightly bent."""
    theta = np.zeros((skeleton.n_joints, 3))
    table = {
        "uparm_l": (0.0, -10.0, -60.0), "uparm_r": (0.0, 10.0, 60.0),
        "lowarm_l": (0.0, -20.0, 0.0), "lowarm_r": (0.0, 20.0, 0.0),
        "lowleg_l": (5.0, 0.0, 0.0), "lowleg_r": (5.0, 0.0, 0.0),
        "upleg_l": (-3.0, 0.0, 0.0), "upleg_r": (-3.0, 0.0, 0.0),
    }
    for name, angles in table.items():
        if name in skeleton.joint_names:
            theta[skeleton.joint_index(name)] = np.radians(angles)
    return theta


def _joint(skeleton, name):
    return skeleton.joint_index(name)


def _reach(skeleton, t, rng):
    T = len(t)
    base = _neutral_pose(skeleton)
    arm_joints = [n for n in ("clavicle_l", "uparm_l", "lowarm_l", "hand_l",
                              "clavicle_r", "uparm_r", "lowarm_r", "hand_r")]
    idx = [_joint(skeleton, n) for n in arm_joints]

    def target():
        tgt = base.copy()
        for side, sgn in (("l", 1.0), ("r", -1.0)):
            tgt[_joint(skeleton, f"clavicle_{side}")] = [0.0, 0.0, sgn * rng.uniform(-0.2, 0.2)]
            tgt[_joint(skeleton, f"uparm_{side}")] = [
                rng.uniform(-0.5, 0.5), -sgn * rng.uniform(0.2, 1.3), sgn * rng.uniform(-0.6, 0.9)]
            tgt[_joint(skeleton, f"lowarm_{side}")] = [rng.uniform(-0.5, 0.5), -sgn * rng.uniform(0.0, 1.3), 0.0]
            tgt[_joint(skeleton, f"hand_{side}")] = rng.uniform(-0.4, 0.4, 3)
        return tgt

    duration = (T - 1) * (t[1] - t[0]) if T > 1 else 0.0
    n_seg = max(1, int(round(duration / 1.5)))
    keys = [base] + [target() for _ in range(n_seg)]
    u = np.linspace(0.0, n_seg, T)
    seg = np.minimum(u.astype(int), n_seg - 1)
    w = _quintic(u - seg)[:, None, None]
    k0 = np.stack([keys[s] for s in seg])
    k1 = np.stack([keys[s + 1] for s in seg])
    theta = np.broadcast_to(base, (T,) + base.shape).copy()
    theta[:, idx] = (k0 + w * (k1 - k0))[:, idx]
    trans = np.tile([0.0, PELVIS_HEIGHT, 0.0], (T, 1))
    return theta, trans


def _squat(skeleton, t, rng):
    T = len(t)
    theta = np.broadcast_to(_neutral_pose(skeleton), (T, skeleton.n_joints, 3)).copy()
    freq = rng.uniform(0.3, 0.6)
    depth = rng.uniform(0.5, 1.0)
    s = 0.5 * (1.0 - np.cos(2.0 * math.pi * freq * t)) * depth
    hip = -1.3 * s
    knee = 2.2 * s + np.radians(5.0)
    for side, sgn in (("l", 1.0), ("r", -1.0)):
        theta[:, _joint(skeleton, f"upleg_{side}"), 0] = hip
        theta[:, _joint(skeleton, f"lowleg_{side}"), 0] = knee
        theta[:, _joint(skeleton, f"foot_{side}"), 0] = np.clip(-0.5 * (knee + hip), -0.7, 0.7)
        theta[:, _joint(skeleton, f"uparm_{side}"), 1] = -sgn * (0.2 + 1.1 * s)
        theta[:, _joint(skeleton, f"uparm_{side}"), 2] = sgn * (-1.05 + 0.8 * s)
    theta[:, _joint(skeleton, "spine"), 0] = 0.35 * s
    theta[:, _joint(skeleton, "chest"), 0] = 0.2 * s
    theta[:, _joint(skeleton, "neck"), 0] = -0.3 * s
    # keep the ankles at a constant height
    thigh = skeleton.offsets[_joint(skeleton, "lowleg_l")][1]
    shin = skeleton.offsets[_joint(skeleton, "foot_l")][1]
    hip_y = skeleton.offsets[_joint(skeleton, "upleg_l")][1]
    drop = hip_y + thigh * np.cos(hip) + shin * np.cos(knee + hip)
    rest = hip_y + thigh + shin * np.cos(np.radians(5.0))
    trans = np.zeros((T, 3))
    trans[:, 1] = PELVIS_HEIGHT + (rest - drop)
    trans[:, 2] = -0.1 * s
    return theta, trans


def _spin(skeleton, t, rng):
    T = len(t)
    theta = np.broadcast_to(_neutral_pose(skeleton), (T, skeleton.n_joints, 3)).copy()
    omega = rng.choice([-1.0, 1.0]) * rng.uniform(1.5, 3.0)
    lift = rng.uniform(0.6, 1.0)
    for side, sgn in (("l", 1.0), ("r", -1.0)):
        theta[:, _joint(skeleton, f"uparm_{side}"), 2] = sgn * (-1.05 + lift * (0.9 + 0.1 * np.sin(3.0 * t)))
        theta[:, _joint(skeleton, f"lowarm_{side}"), 1] = -sgn * (0.3 + 0.2 * np.sin(2.0 * t))
    theta[:, _joint(skeleton, "upleg_l"), 0] = -0.3 * (1.0 - np.cos(omega * t)) / 2.0
    theta[:, _joint(skeleton, "lowleg_l"), 0] = 0.6 * (1.0 - np.cos(omega * t)) / 2.0 + np.radians(5.0)
    theta[:, _joint(skeleton, "head"), 1] = 0.3 * np.sin(omega * t)
    theta[:, 0, 1] = omega * t
    theta[:, 0, 1] = np.arctan2(np.sin(theta[:, 0, 1]), np.cos(theta[:, 0, 1]))
    trans = np.zeros((T, 3))
    trans[:, 0] = 0.15 * np.sin(0.5 * omega * t)
    trans[:, 1] = PELVIS_HEIGHT
    trans[:, 2] = 0.15 * (1.0 - np.cos(0.5 * omega * t))
    return theta, trans


def _dance_loop(skeleton, t, rng):
    T = len(t)
    base = _neutral_pose(skeleton)
    theta = np.broadcast_to(base, (T,) + base.shape).copy()
    tempo = rng.uniform(0.4, 0.9)
    lo, hi = skeleton.limits.lower, skeleton.limits.upper
    for j in range(1, skeleton.n_joints):
        for k in range(3):
            room = min(base[j, k] - lo[j, k], hi[j, k] - base[j, k], 0.7)
            if k == 1:
                room = min(room, 0.7)
            amp = rng.uniform(0.2, 0.55) * room
            harmonic = rng.integers(1, 4)
            phase = rng.uniform(0, 2 * math.pi)
            theta[:, j, k] += amp * np.sin(2 * math.pi * tempo * harmonic * t + phase)
    theta[:, 0, 1] = 0.5 * np.sin(2 * math.pi * tempo * 0.5 * t)
    theta[:, 0, 0] = 0.08 * np.sin(2 * math.pi * tempo * t)
    trans = np.zeros((T, 3))
    trans[:, 0] = 0.12 * np.sin(2 * math.pi * tempo * 0.5 * t)
    trans[:, 1] = PELVIS_HEIGHT - 0.03 * (1 - np.cos(4 * math.pi * tempo * t)) / 2
    trans[:, 2] = 0.08 * np.sin(2 * math.pi * tempo * 0.25 * t)
    return theta, trans


def _bspline_path(n_ctrl, lo, hi, t, rng):
    """Cubic B-spline over [t0, t1] with random control points in [lo, hi]."""
    ctrl = rng.uniform(lo, hi, size=(n_ctrl,) + np.shape(lo))
    t0, t1 = t[0], t[-1] if t[-1] > t[0] else t[0] + 1.0
    inner = np.linspace(t0, t1, n_ctrl - 2)
    knots = np.concatenate([[t0] * 3, inner, [t1] * 3])
    return BSpline(knots, ctrl, 3)(t)


def _random_spline(skeleton, t, rng):
    T = len(t)
    duration = t[-1] - t[0] if T > 1 else 1.0
    n_ctrl = max(4, int(math.ceil(duration / 0.6)) + 3)
    base = _neutral_pose(skeleton)
    lo = np.maximum(skeleton.limits.lower[1:], base[1:] - 0.9)
    hi = np.minimum(skeleton.limits.upper[1:], base[1:] + 0.9)
    lo[:, 1] = np.maximum(lo[:, 1], -1.3)
    hi[:, 1] = np.minimum(hi[:, 1], 1.3)
    theta = np.empty((T, skeleton.n_joints, 3))
    theta[:, 1:] = _bspline_path(n_ctrl, lo, hi, t, rng)
    theta[:, 0] = _bspline_path(n_ctrl, np.array([-0.15, -0.8, -0.15]), np.array([0.15, 0.8, 0.15]), t, rng)
    trans = _bspline_path(n_ctrl, np.array([-0.3, PELVIS_HEIGHT - 0.05, -0.3]),
                          np.array([0.3, PELVIS_HEIGHT + 0.02, 0.3]), t, rng)
    return theta, trans


_GENERATORS = {
    "reach": _reach,
    "squat": _squat,
    "spin": _spin,
    "dance_loop": _dance_loop,
    "random_spline": _random_spline,
}


def generate_motion_euler(kind, frames, fps, seed, skeleton=None):
    """Euler angles (T, N_J, 3) and root translations (T, 3) in the stage frame."""
    from .kinematics import default_skeleton

    if kind not in _GENERATORS:
        raise ValueError(f"unknown motion kind {kind!r}; expected one of {MOTION_KINDS}")
    if frames < 3:
        raise ValueError("frames must be >= 3")
    skeleton = skeleton or default_skeleton()
    rng = np.random.default_rng(seed)
    t = np.arange(frames) / float(fps)
    theta, trans = _GENERATORS[kind](skeleton, t, rng)
    theta[:, 1:] = np.clip(theta[:, 1:], skeleton.limits.lower[1:], skeleton.limits.upper[1:])
    return theta, trans


def generate_motion(kind, frames, fps, seed, skeleton=None):
    """Deterministic scripted motion in the stage frame."""
    theta, trans = generate_motion_euler(kind, frames, fps, seed, skeleton)
    return MotionSequence.from_matrices(euler_to_matrix(theta), trans, fps)


def calibration_poses(skeleton):
    """Stage-frame (A-pose, T-pose) used for two-frame calibration.

    The A-pose lowers the arms, bends the elbows forward, flexes the knees
    and spreads the legs so that arm and leg sensors rotate about
    non-parallel axes between the two frames.  Larger excursions give better
    conditioned axes: the relative-rotation axis of a sensor that turns by
    only 15 deg is uncertain by several degrees under 1 deg noise.
    """
    T = len(skeleton.joint_names)
    a = np.zeros((T, 3))
    for side, sgn in (("l", 1.0), ("r", -1.0)):
        a[skeleton.joint_index(f"uparm_{side}")] = [0.0, 0.0, -sgn * math.radians(60.0)]
        a[skeleton.joint_index(f"lowarm_{side}")] = [0.0, -sgn * math.radians(60.0), 0.0]
        a[skeleton.joint_index(f"upleg_{side}")] = [0.0, 0.0, sgn * math.radians(15.0)]
        a[skeleton.joint_index(f"lowleg_{side}")] = [math.radians(45.0), 0.0, 0.0]
    t = np.array([0.0, PELVIS_HEIGHT, 0.0])
    a_pose = PoseFrame.from_matrices(euler_to_matrix(a), t)
    t_pose = PoseFrame.identity(skeleton.n_joints, t)
    return a_pose, t_pose


# --------------------------------------------------------------------------
# rendering


@dataclass(frozen=True)
class NoiseSpec:
    pixel_std: float = 2.0
    dropout: float = 0.02
    conf_scale: float = 8.0  # s0 in sigma = clamp(1 - |noise| / s0, 0, 1)
    imu_ori_deg: float = 1.0
    imu_acc_std: float = 0.1
    bone_est_deg: float = 0.0  # bone-orientation error in calibration observations

    @classmethod
    def zero(cls):
        return cls(0.0, 0.0, 8.0, 0.0, 0.0, 0.0)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        return cls(**doc)


@dataclass(frozen=True, eq=False)
class KeypointObservation:
    p: np.ndarray  # (N_M, 2) pixels
    sigma: np.ndarray  # (N_M,)
    p_c: np.ndarray  # (N_M, 2) on the Z = 1 plane


@dataclass(frozen=True, eq=False)
class FrameSample:
    pose: PoseFrame
    keypoints: tuple  # one KeypointObservation per camera
    imu: tuple  # calibrated (R_b_n, A_n) per sensor
    imu_raw: tuple  # ImuMeasurement per sensor
    index: int
    st: float


@dataclass(frozen=True, eq=False)
class SequenceObservations:
    """Array form of a rendered sequence; :meth:`frame` yields :class:`FrameSample`."""

    motion: MotionSequence
    sensors: tuple  # bone names, in skeleton bone order of the supervision set
    keypoints: np.ndarray  # (C, T, N_M, 2)
    confidence: np.ndarray  # (C, T, N_M)
    raw_orientation: np.ndarray  # (T, N, 3, 3)
    raw_acceleration: np.ndarray  # (T, N, 3)
    orientation: np.ndarray  # (T, N, 3, 3) calibrated, camera frame
    acceleration: np.ndarray  # (T, N, 3) calibrated, camera frame
    kind: str = ""

    def __len__(self):
        return len(self.motion)

    @property
    def st(self):
        return self.motion.st

    def canonical(self, cameras, c):
        return canonicalize_keypoints(self.keypoints[c], cameras[c])

    def sensor_rows(self, names):
        return [self.sensors.index(n) for n in names]

    def frame(self, i, cameras):
        kps = tuple(
            KeypointObservation(self.keypoints[c, i], self.confidence[c, i],
                                canonicalize_keypoints(self.keypoints[c, i], cam))
            for c, cam in enumerate(cameras)
        )
        imu = tuple((self.orientation[i, n], self.acceleration[i, n]) for n in range(len(self.sensors)))
        raw = tuple(ImuMeasurement(s, self.raw_orientation[i, n], self.raw_acceleration[i, n])
                    for n, s in enumerate(self.sensors))
        return FrameSample(self.motion.frame(i), kps, imu, raw, i, self.st)

    def frames(self, cameras):
        return [self.frame(i, cameras) for i in range(len(self))]

    def recalibrated(self, calib):
        """Copy whose camera-frame IMU streams come from ``calib`` applied to the raw readings."""
        ori, acc = transform_stream(self.raw_orientation, self.raw_acceleration, self.sensors, calib)
        return SequenceObservations(self.motion, self.sensors, self.keypoints, self.confidence,
                                    self.raw_orientation, self.raw_acceleration, ori, acc, self.kind)


def finite_diff_acceleration(prev, cur, nxt, st):
    """Second-difference acceleration (P[t+1] - 2 P[t] + P[t-1]) / st^2."""
    if st <= 0:
        raise ValueError("sampling time must be positive")
    stacked = np.stack([np.asarray(prev, float), np.asarray(cur, float), np.asarray(nxt, float)])
    return kernels.second_difference(stacked, st)[0]


def stencil_with_edges(positions, st):
    """Second differences for all T frames; edge frames copy their interior neighbour."""
    acc = kernels.second_difference(positions, st)
    return np.concatenate([acc[:1], acc, acc[-1:]], axis=0)


def small_rotations(n, std_rad, rng):
    if std_rad == 0.0:
        return np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    return Rotation.from_rotvec(rng.normal(0.0, std_rad, size=(n, 3))).as_matrix()


def fixed_angle_rotations(n, angle_rad, rng):
    """Rotations of exactly ``angle_rad`` about uniformly random axes."""
    axes = rng.normal(size=(n, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    return Rotation.from_rotvec(axes * angle_rad).as_matrix()


def render_observations(motion, skeleton, rig, calib, noise, seed, sensors=None):
    """Simulate keypoints for every camera and IMU streams for ``sensors`` (bone names).

    ``motion`` must already be in the reference frame.  ``sensors`` defaults
    to the skeleton's supervision set.
    """
    rng = np.random.default_rng(seed)
    if sensors is None:
        sensors = tuple(skeleton.bones[i].name for i in skeleton.supervision_map)
    sensors = tuple(sensors)
    bidx = [skeleton.bone_index(s) for s in sensors]
    T = len(motion)
    R = motion.matrices()
    pos, glob = fk_arrays(skeleton, R, motion.trans)
    markers = pos[:, list(skeleton.marker_map)]

    C = len(rig.cameras)
    M = skeleton.n_markers
    keypoints = np.empty((C, T, M, 2))
    confidence = np.empty((C, T, M))
    for c, cam in enumerate(rig.cameras):
        uv, depth = project_many(cam, markers)
        if np.any(depth <= MIN_DEPTH):
            raise BehindCamera(f"camera {c}: marker behind the camera")
        err = rng.normal(0.0, noise.pixel_std, size=uv.shape) if noise.pixel_std > 0 else np.zeros_like(uv)
        sigma = np.clip(1.0 - np.linalg.norm(err, axis=-1) / noise.conf_scale, 0.0, 1.0)
        if noise.dropout > 0:
            drop = rng.random(sigma.shape) < noise.dropout
            sigma = np.where(drop, 0.0, sigma)
            err = np.where(drop[..., None], np.array([cam.cx, cam.cy]) - uv, err)
        keypoints[c] = uv + err
        confidence[c] = sigma

    bone_rot = bone_rotations(skeleton, glob, bidx)
    noise_rot = small_rotations(T * len(bidx), math.radians(noise.imu_ori_deg), rng).reshape(T, len(bidx), 3, 3)
    ori = bone_rot @ noise_rot
    acc = stencil_with_edges(bone_midpoints(skeleton, pos, bidx), motion.st)
    if noise.imu_acc_std > 0:
        acc = acc + rng.normal(0.0, noise.imu_acc_std, size=acc.shape)
    raw_ori, raw_acc = raw_from_bone(ori, acc, sensors, calib)
    ori, acc = transform_stream(raw_ori, raw_acc, sensors, calib)
    return SequenceObservations(motion, sensors, keypoints, confidence, raw_ori, raw_acc, ori, acc)


def calibration_observation(skeleton, rig, calib, sensors, noise_deg, rng, bone_noise_deg=0.0):
    """A-pose/T-pose observations synthesized from a known calibration.

    Every IMU reading gets an independent rotation of exactly ``noise_deg``
    about a random axis; bone estimates get ``bone_noise_deg`` likewise.
    """
    sensors = tuple(sensors)
    bidx = [skeleton.bone_index(s) for s in sensors]
    a_pose, t_pose = calibration_poses(skeleton)
    out = []
    for pose in (a_pose, t_pose):
        motion = rig.stage_to_reference(MotionSequence(pose.theta_6d[None], pose.t[None], 1.0))
        _, glob = fk_arrays(skeleton, motion.matrices(), motion.trans)
        bone = bone_rotations(skeleton, glob[0], bidx)
        imu = calib.r_i2c.T @ bone @ calib.stack(sensors)
        n = len(sensors)
        if noise_deg > 0:
            imu = imu @ fixed_angle_rotations(n, math.radians(noise_deg), rng)
        if bone_noise_deg > 0:
            bone = bone @ fixed_angle_rotations(n, math.radians(bone_noise_deg), rng)
        out.append((imu, bone))
    (imu_a, bone_a), (imu_t, bone_t) = out
    return CalibrationObservation(sensors, imu_a, imu_t, bone_a, bone_t)


def random_calibration(sensors, rng, mount_deg=30.0):
    """Ground-truth calibration: uniform R_I2C and mounting rotations within ``mount_deg``."""
    from .kinematics import random_rotations

    r_i2c = random_rotations(1, rng)[0]
    mounts = {s: Rotation.from_rotvec(rng.uniform(-1, 1, 3) * math.radians(mount_deg) / math.sqrt(3)).as_matrix()
              for s in sensors}
    return CalibrationResult(r_i2c, mounts)


# --------------------------------------------------------------------------
# network input


def input_size(skeleton):
    M, N = skeleton.n_markers, skeleton.n_imus
    return 2 * M + M + 9 * N + 3 * N + len(skeleton.key_bones)


def assemble_input(frame, skeleton, camera_index=0):
    """Per-frame network input [p_c, sigma, R_b (row-major), A, L_k]."""
    kp = frame.keypoints[camera_index]
    if kp.p_c.shape[0] != skeleton.n_markers or len(frame.imu) < skeleton.n_imus:
        raise DimensionMismatch("frame sample does not match the skeleton's marker/IMU maps")
    names = [b.name for b in skeleton.bones]
    sensors = [m.sensor for m in frame.imu_raw]
    rows = []
    for i in skeleton.imu_map:
        try:
            rows.append(sensors.index(names[i]))
        except ValueError:
            raise DimensionMismatch(f"frame lacks IMU on bone {names[i]}") from None
    ori = np.stack([frame.imu[r][0] for r in rows])
    acc = np.stack([frame.imu[r][1] for r in rows])
    return np.concatenate([kp.p_c.reshape(-1), kp.sigma, ori.reshape(-1), acc.reshape(-1),
                           skeleton.key_bone_lengths])


def assemble_inputs(obs, skeleton, rig):
    """Vectorized :func:`assemble_input` over a whole sequence: (T, input_size)."""
    T = len(obs)
    c = rig.inference_camera
    p_c = canonicalize_keypoints(obs.keypoints[c], rig.cameras[c]).reshape(T, -1)
    names = [skeleton.bones[i].name for i in skeleton.imu_map]
    try:
        rows = obs.sensor_rows(names)
    except ValueError:
        raise DimensionMismatch("observations lack an input IMU") from None
    ori = obs.orientation[:, rows].reshape(T, -1)
    acc = obs.acceleration[:, rows].reshape(T, -1)
    L = np.broadcast_to(skeleton.key_bone_lengths, (T, len(skeleton.key_bones)))
    return np.concatenate([p_c, obs.confidence[c], ori, acc, L], axis=1)


# --------------------------------------------------------------------------
# dataset persistence


@dataclass
class Dataset:
    skeleton: SkeletonConfig
    rig: CaptureRig
    calibration: CalibrationResult  # ground truth used for rendering
    calibration_observation: CalibrationObservation
    fps: float
    seed: int
    noise: NoiseSpec
    sequences: list = field(default_factory=list)

    def recalibrated(self, calib):
        return Dataset(self.skeleton, self.rig, self.calibration, self.calibration_observation, self.fps,
                       self.seed, self.noise, [s.recalibrated(calib) for s in self.sequences])


def _sequence_records(obs):
    C = obs.keypoints.shape[0]
    records = [{"kind": obs.kind, "frames": len(obs), "fps": obs.motion.fps, "sensors": list(obs.sensors),
                "cameras": C}]
    for i in range(len(obs)):
        records.append({
            "frame": i,
            "rot6d": obs.motion.rot6d[i],
            "t": obs.motion.trans[i],
            "keypoints": obs.keypoints[:, i],
            "confidence": obs.confidence[:, i],
            "imu_raw": [{"orientation": obs.raw_orientation[i, n].reshape(9),
                         "acceleration": obs.raw_acceleration[i, n]} for n in range(len(obs.sensors))],
            "imu": [{"orientation": obs.orientation[i, n].reshape(9),
                     "acceleration": obs.acceleration[i, n]} for n in range(len(obs.sensors))],
        })
    return records


def _sequence_from_records(records):
    head, frames = records[0], records[1:]
    motion = MotionSequence(np.array([f["rot6d"] for f in frames]), np.array([f["t"] for f in frames]),
                            head["fps"])
    kps = np.array([f["keypoints"] for f in frames]).transpose(1, 0, 2, 3)
    conf = np.array([f["confidence"] for f in frames]).transpose(1, 0, 2)
    raw_o = np.array([[m["orientation"] for m in f["imu_raw"]] for f in frames]).reshape(len(frames), -1, 3, 3)
    raw_a = np.array([[m["acceleration"] for m in f["imu_raw"]] for f in frames])
    ori = np.array([[m["orientation"] for m in f["imu"]] for f in frames]).reshape(len(frames), -1, 3, 3)
    acc = np.array([[m["acceleration"] for m in f["imu"]] for f in frames])
    return SequenceObservations(motion, tuple(head["sensors"]), kps, conf, raw_o, raw_a, ori, acc, head["kind"])


def save_dataset(dataset, directory):
    os.makedirs(directory, exist_ok=True)
    names = []
    for k, obs in enumerate(dataset.sequences):
        name = f"seq_{k:03d}.jsonl"
        textio.dump_lines(_sequence_records(obs), os.path.join(directory, name))
        names.append(name)
    manifest = {
        "format_version": DATASET_FORMAT_VERSION,
        "skeleton": dataset.skeleton.to_dict(),
        "rig": dataset.rig.to_dict(),
        "calibration": calibration_to_dict(dataset.calibration),
        "calibration_observation": observation_to_dict(dataset.calibration_observation),
        "fps": dataset.fps,
        "seed": dataset.seed,
        "noise": dataset.noise.to_dict(),
        "sequences": names,
    }
    textio.dump(manifest, os.path.join(directory, "manifest.json"))


def load_dataset(directory):
    manifest = textio.load(os.path.join(directory, "manifest.json"))
    if manifest.get("format_version") != DATASET_FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format_version {manifest.get('format_version')!r}")
    seqs = [_sequence_from_records(textio.load_lines(os.path.join(directory, n))) for n in manifest["sequences"]]
    return Dataset(
        SkeletonConfig.from_dict(manifest["skeleton"]),
        CaptureRig.from_dict(manifest["rig"]),
        calibration_from_dict(manifest["calibration"]),
        observation_from_dict(manifest["calibration_observation"]),
        float(manifest["fps"]),
        int(manifest["seed"]),
        NoiseSpec.from_dict(manifest["noise"]),
        seqs,
    )


def simulate_dataset(skeleton, rig, n_sequences, frames, fps, seed, noise, kinds=MOTION_KINDS, calib=None):
    """Generate, render and bundle ``n_sequences`` motions cycling through ``kinds``."""
    rng = np.random.default_rng(seed)
    sensors = tuple(skeleton.bones[i].name for i in skeleton.supervision_map)
    if calib is None:
        calib = random_calibration(sensors, rng)
    calib_obs = calibration_observation(skeleton, rig, calib, sensors, noise.imu_ori_deg, rng, noise.bone_est_deg)
    seeds = rng.integers(0, 2**31 - 1, size=(n_sequences, 2))
    seqs = []
    for k in range(n_sequences):
        kind = kinds[k % len(kinds)]
        motion = rig.stage_to_reference(generate_motion(kind, frames, fps, int(seeds[k, 0]), skeleton))
        obs = render_observations(motion, skeleton, rig, calib, noise, int(seeds[k, 1]), sensors)
        seqs.append(SequenceObservations(obs.motion, obs.sensors, obs.keypoints, obs.confidence,
                                         obs.raw_orientation, obs.raw_acceleration, obs.orientation,
                                         obs.acceleration, kind))
    return Dataset(skeleton, rig, calib, calib_obs, float(fps), int(seed), noise, seqs)
