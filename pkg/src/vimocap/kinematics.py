"""Skeleton definition, rotation conversions and forward kinematics.

Conventions used throughout the package:

* 6D rotations are the first two columns of a rotation matrix, stored
  column-major: ``(m00, m10, m20, m01, m11, m21)``.
* Euler angles are intrinsic X-then-Y-then-Z, ``R = Rx(a) @ Ry(b) @ Rz(c)``.
  Extraction returns ``a, c`` in ``[-pi, pi]`` and ``b`` in ``[-pi/2, pi/2]``.
* Entry 0 of every per-joint rotation array is the global root rotation.
"""
import warnings
from dataclasses import dataclass, replace
from importlib import resources

import numpy as np

from . import kernels, textio
from .errors import (
    DegenerateInput,
    DimensionMismatch,
    GimbalLockWarning,
    NotARotation,
)

SKELETON_FORMAT_VERSION = 1
KEY_BONE_ORDER = ("uparm", "lowarm", "upleg", "lowleg", "foot", "clavicle", "spine")
GIMBAL_TOL = 1e-7


# --------------------------------------------------------------------------
# rotation utilities


def _frozen(arr, dtype=np.float64):
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def is_rotation(M, tol=1e-6):
    """True when every matrix in ``M`` is orthonormal with determinant +1."""
    M = np.asarray(M, dtype=np.float64)
    if M.shape[-2:] != (3, 3):
        return False
    eye = np.eye(3)
    ortho = np.abs(np.swapaxes(M, -1, -2) @ M - eye).max(axis=(-1, -2)) <= tol
    det = np.abs(np.linalg.det(M) - 1.0) <= tol
    return bool(np.all(ortho & det))


def rotation6d_to_matrix(r6):
    """Gram-Schmidt reconstruction of ``(..., 6)`` inputs into ``(..., 3, 3)``."""
    r6 = np.asarray(r6, dtype=np.float64)
    if r6.shape[-1] != 6:
        raise DimensionMismatch(f"expected trailing dimension 6, got {r6.shape}")
    a1 = r6[..., 0:3]
    a2 = r6[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 <= 1e-12):
        raise DegenerateInput("first 6D column has (near) zero norm")
    b1 = a1 / n1
    resid = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    if np.any(np.linalg.norm(resid, axis=-1) <= 1e-12):
        raise DegenerateInput("second 6D column is (near) parallel to the first")
    return kernels.gram_schmidt(r6)


def matrix_to_rotation6d(M):
    M = np.asarray(M, dtype=np.float64)
    if not is_rotation(M, 1e-6):
        raise NotARotation("input is not in SO(3) within 1e-6")
    return np.concatenate([M[..., :, 0], M[..., :, 1]], axis=-1)


def euler_to_matrix(theta):
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape[-1] != 3:
        raise DimensionMismatch(f"expected trailing dimension 3, got {theta.shape}")
    flat = theta.reshape(-1, 3)
    return kernels.euler_xyz_to_matrix(flat).reshape(theta.shape[:-1] + (3, 3))


def gimbal_mask(M):
    M = np.asarray(M, dtype=np.float64)
    return np.hypot(M[..., 0, 0], M[..., 0, 1]) < GIMBAL_TOL


def matrix_to_euler(M, warn=True):
    """Inverse of :func:`euler_to_matrix`.

    At gimbal lock (|cos b| < 1e-7) the third angle is set to 0 and the first
    absorbs the combined rotation; a :class:`GimbalLockWarning` is emitted
    unless ``warn`` is False.  Use :func:`gimbal_mask` to locate such entries.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.shape[-2:] != (3, 3):
        raise DimensionMismatch(f"expected (..., 3, 3), got {M.shape}")
    cb = np.hypot(M[..., 0, 0], M[..., 0, 1])
    locked = cb < GIMBAL_TOL
    b = np.arctan2(M[..., 0, 2], cb)
    a = np.arctan2(-M[..., 1, 2], M[..., 2, 2])
    c = np.arctan2(-M[..., 0, 1], M[..., 0, 0])
    if np.any(locked):
        a = np.where(locked, np.arctan2(M[..., 2, 1], M[..., 1, 1]), a)
        c = np.where(locked, 0.0, c)
        if warn:
            warnings.warn(
                f"{int(np.sum(locked))} rotation(s) at gimbal lock; third angle set to 0",
                GimbalLockWarning,
                stacklevel=2,
            )
    return np.stack([a, b, c], axis=-1)


def axis_angle_to_matrix(axis, angle):
    """Rodrigues' formula for a single axis/angle pair."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    K = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def rotation_angle(R):
    """Geodesic angle of rotation(s) ``R`` in radians."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R, axis1=-2, axis2=-1)
    # arccos loses precision near 0; use the skew part as well
    skew = np.stack(
        [R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]], axis=-1
    )
    return np.arctan2(0.5 * np.linalg.norm(skew, axis=-1), 0.5 * (tr - 1.0))


def geodesic_distance(R1, R2):
    return rotation_angle(np.swapaxes(np.asarray(R1), -1, -2) @ np.asarray(R2))


def project_to_so3(M):
    """Closest rotation in Frobenius norm (polar factor with det fixed to +1)."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=np.float64))
    d = np.sign(np.linalg.det(U @ Vt))
    D = np.ones(U.shape[:-1])
    D[..., -1] = d
    return (U * D[..., None, :]) @ Vt


def random_rotations(n, rng):
    """Uniform rotations from normalized Gaussian quaternions."""
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )


def slerp_matrices(R0, R1, s):
    """Geodesic interpolation between rotation stacks; ``s`` broadcasts over the leading axes."""
    from scipy.spatial.transform import Rotation

    R0 = np.asarray(R0, dtype=np.float64)
    R1 = np.asarray(R1, dtype=np.float64)
    shape = R0.shape
    rel = Rotation.from_matrix((np.swapaxes(R0, -1, -2) @ R1).reshape(-1, 3, 3)).as_rotvec()
    s = np.broadcast_to(np.asarray(s, dtype=np.float64)[..., None], shape[:-2] + (1,)).reshape(-1, 1)
    step = Rotation.from_rotvec(rel * s).as_matrix().reshape(shape)
    return R0 @ step


# --------------------------------------------------------------------------
# skeleton


@dataclass(frozen=True)
class Bone:
    name: str
    proximal: int
    distal: int


@dataclass(frozen=True, eq=False)
class EndSite:
    name: str
    joint: int
    offset: np.ndarray


@dataclass(frozen=True, eq=False)
class JointLimits:
    """Per-joint Euler bounds in radians; row 0 (root) is unbounded."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = _frozen(self.lower)
        upper = _frozen(self.upper)
        if lower.shape != upper.shape or lower.ndim != 2 or lower.shape[1] != 3:
            raise DimensionMismatch("joint limits must be (N_J, 3) arrays of equal shape")
        if np.any(lower > upper):
            raise ValueError("joint limits require lower <= upper")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    def clamp(self, theta):
        return np.clip(theta, self.lower, self.upper)

    def contains(self, theta, tol=0.0):
        theta = np.asarray(theta)
        return bool(np.all(theta >= self.lower - tol) and np.all(theta <= self.upper + tol))


@dataclass(frozen=True, eq=False)
class SkeletonConfig:
    """Joint hierarchy with rest offsets, bones, sensor maps and joint limits.

    ``imu_map`` lists the bones carrying input IMUs (N_i); ``supervision_map``
    lists bones whose simulated IMUs supervise training (N_I).  Both are bone
    indices.  A bone is oriented by the global rotation of its proximal joint
    and its IMU sits at the bone midpoint.
    """

    joint_names: tuple
    parents: np.ndarray
    offsets: np.ndarray
    bones: tuple
    end_sites: tuple
    key_bones: tuple
    marker_map: tuple
    imu_map: tuple
    supervision_map: tuple
    limits: JointLimits
    limb_endpoints: tuple = ()
    limb_bones: tuple = ()
    body_endpoints: tuple = ()
    body_bones: tuple = ()

    def __post_init__(self):
        parents = np.array(self.parents, dtype=np.int64)
        parents.setflags(write=False)
        offsets = _frozen(self.offsets)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "offsets", offsets)
        J = len(self.joint_names)
        if parents.shape != (J,) or offsets.shape != (J, 3):
            raise DimensionMismatch("parents/offsets do not match the joint count")
        if parents[0] != -1:
            raise ValueError("joint 0 must be the root (parent -1)")
        for j in range(1, J):
            if not 0 <= parents[j] < j:
                raise ValueError(f"joint {j} parent {parents[j]} breaks topological order")
        if J > 1 and np.any(np.linalg.norm(offsets[1:], axis=1) <= 0.0):
            raise ValueError("non-root rest offsets must have positive norm")
        for b in self.bones:
            if parents[b.distal] != b.proximal:
                raise ValueError(f"bone {b.name} is not a parent->child edge")
        nb = len(self.bones)
        for name, idx, n in (
            ("marker_map", self.marker_map, J),
            ("imu_map", self.imu_map, nb),
            ("supervision_map", self.supervision_map, nb),
            ("limb_endpoints", self.limb_endpoints, J),
            ("body_endpoints", self.body_endpoints, J),
            ("limb_bones", self.limb_bones, nb),
            ("body_bones", self.body_bones, nb),
        ):
            if any(not 0 <= i < n for i in idx):
                raise ValueError(f"{name} index out of range")
        if self.limits.lower.shape != (J, 3):
            raise DimensionMismatch("joint limits must cover every joint")
        if len(self.key_bones) != len(KEY_BONE_ORDER):
            raise ValueError(f"expected {len(KEY_BONE_ORDER)} key bones")
        self.key_bone_lengths  # resolves names or raises

    @property
    def n_joints(self):
        return len(self.joint_names)

    @property
    def n_markers(self):
        return len(self.marker_map)

    @property
    def n_imus(self):
        return len(self.imu_map)

    @property
    def n_bones(self):
        return len(self.bones)

    def joint_index(self, name):
        return self.joint_names.index(name)

    def bone_index(self, name):
        for i, b in enumerate(self.bones):
            if b.name == name:
                return i
        raise KeyError(name)

    @property
    def bone_lengths(self):
        return np.array([np.linalg.norm(self.offsets[b.distal]) for b in self.bones])

    @property
    def key_bone_lengths(self):
        out = []
        for name in self.key_bones:
            sites = [s for s in self.end_sites if s.name == name]
            if sites:
                out.append(np.linalg.norm(sites[0].offset))
            else:
                out.append(np.linalg.norm(self.offsets[self.bones[self.bone_index(name)].distal]))
        return np.array(out)

    @property
    def bone_proximal(self):
        return np.array([b.proximal for b in self.bones], dtype=np.int64)

    @property
    def bone_distal(self):
        return np.array([b.distal for b in self.bones], dtype=np.int64)

    def with_imus(self, bone_names):
        """Copy with a different input-IMU placement (e.g. the 2-IMU ablation)."""
        return replace(self, imu_map=tuple(self.bone_index(n) for n in bone_names))

    def rest_positions(self):
        pos = np.zeros((self.n_joints, 3))
        for j in range(1, self.n_joints):
            pos[j] = pos[self.parents[j]] + self.offsets[j]
        return pos

    def to_dict(self):
        names = self.joint_names
        bone_names = [b.name for b in self.bones]
        limits = {}
        for j in range(1, self.n_joints):
            limits[names[j]] = [
                [float(np.degrees(self.limits.lower[j, k])), float(np.degrees(self.limits.upper[j, k]))]
                for k in range(3)
            ]
        return {
            "format_version": SKELETON_FORMAT_VERSION,
            "joints": [
                {"name": n, "parent": None if p < 0 else names[p], "offset": self.offsets[j]}
                for j, (n, p) in enumerate(zip(names, self.parents))
            ],
            "end_sites": [{"name": s.name, "joint": names[s.joint], "offset": s.offset} for s in self.end_sites],
            "bones": [{"name": b.name, "proximal": names[b.proximal], "distal": names[b.distal]} for b in self.bones],
            "key_bones": dict(zip(KEY_BONE_ORDER, self.key_bones)),
            "marker_map": [names[j] for j in self.marker_map],
            "imu_map": [bone_names[i] for i in self.imu_map],
            "supervision_map": [bone_names[i] for i in self.supervision_map],
            "trackers": {
                "limb": {
                    "endpoints": [names[j] for j in self.limb_endpoints],
                    "bones": [bone_names[i] for i in self.limb_bones],
                },
                "body": {
                    "endpoints": [names[j] for j in self.body_endpoints],
                    "bones": [bone_names[i] for i in self.body_bones],
                },
            },
            "joint_limits_deg": limits,
        }

    @classmethod
    def from_dict(cls, doc):
        version = doc.get("format_version")
        if version != SKELETON_FORMAT_VERSION:
            raise ValueError(f"unsupported skeleton format_version {version!r}")
        names = tuple(j["name"] for j in doc["joints"])
        jidx = {n: i for i, n in enumerate(names)}
        parents = [-1 if j["parent"] is None else jidx[j["parent"]] for j in doc["joints"]]
        offsets = [j["offset"] for j in doc["joints"]]
        bones = tuple(Bone(b["name"], jidx[b["proximal"]], jidx[b["distal"]]) for b in doc["bones"])
        bidx = {b.name: i for i, b in enumerate(bones)}
        end_sites = tuple(
            EndSite(s["name"], jidx[s["joint"]], _frozen(s["offset"])) for s in doc.get("end_sites", [])
        )
        key_bones = tuple(doc["key_bones"][k] for k in KEY_BONE_ORDER)
        lower = np.full((len(names), 3), -np.inf)
        upper = np.full((len(names), 3), np.inf)
        for name, rows in doc.get("joint_limits_deg", {}).items():
            rows = np.radians(np.asarray(rows, dtype=np.float64))
            lower[jidx[name]] = rows[:, 0]
            upper[jidx[name]] = rows[:, 1]
        trackers = doc.get("trackers", {})
        limb = trackers.get("limb", {})
        body = trackers.get("body", {})
        return cls(
            joint_names=names,
            parents=parents,
            offsets=offsets,
            bones=bones,
            end_sites=end_sites,
            key_bones=key_bones,
            marker_map=tuple(jidx[n] for n in doc["marker_map"]),
            imu_map=tuple(bidx[n] for n in doc["imu_map"]),
            supervision_map=tuple(bidx[n] for n in doc.get("supervision_map", [b.name for b in bones])),
            limits=JointLimits(lower, upper),
            limb_endpoints=tuple(jidx[n] for n in limb.get("endpoints", [])),
            limb_bones=tuple(bidx[n] for n in limb.get("bones", [])),
            body_endpoints=tuple(jidx[n] for n in body.get("endpoints", [])),
            body_bones=tuple(bidx[n] for n in body.get("bones", [])),
        )


def load_skeleton(path=None):
    """Read a skeleton file; ``None`` loads the packaged 19-joint default."""
    if path is None:
        text = resources.files("vimocap").joinpath("data/skeleton_default.json").read_text()
        import json

        return SkeletonConfig.from_dict(json.loads(text))
    return SkeletonConfig.from_dict(textio.load(path))


def save_skeleton(skeleton, path):
    textio.dump(skeleton.to_dict(), path)


_DEFAULT = None


def default_skeleton():
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_skeleton()
    return _DEFAULT


# --------------------------------------------------------------------------
# poses and motion


@dataclass(frozen=True, eq=False)
class PoseFrame:
    theta_6d: np.ndarray  # (N_J, 6), entry 0 = global root rotation
    t: np.ndarray  # (3,)

    def __post_init__(self):
        theta = _frozen(self.theta_6d)
        t = _frozen(self.t)
        if theta.ndim != 2 or theta.shape[1] != 6 or t.shape != (3,):
            raise DimensionMismatch("PoseFrame expects (N_J, 6) rotations and a 3-vector")
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(t))):
            raise ValueError("PoseFrame components must be finite")
        object.__setattr__(self, "theta_6d", theta)
        object.__setattr__(self, "t", t)

    @classmethod
    def from_matrices(cls, rotations, t):
        return cls(matrix_to_rotation6d(rotations), t)

    @classmethod
    def identity(cls, n_joints, t=(0.0, 0.0, 0.0)):
        return cls(np.tile([1.0, 0.0, 0.0, 0.0, 1.0, 0.0], (n_joints, 1)), t)

    def matrices(self):
        return rotation6d_to_matrix(self.theta_6d)

    def euler(self, warn=True):
        return matrix_to_euler(self.matrices(), warn=warn)


@dataclass(frozen=True, eq=False)
class MotionSequence:
    rot6d: np.ndarray  # (T, N_J, 6)
    trans: np.ndarray  # (T, 3)
    fps: float

    def __post_init__(self):
        rot6d = _frozen(self.rot6d)
        trans = _frozen(self.trans)
        if rot6d.ndim != 3 or rot6d.shape[2] != 6 or trans.shape != (rot6d.shape[0], 3):
            raise DimensionMismatch("MotionSequence expects (T, N_J, 6) rotations and (T, 3) translations")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        object.__setattr__(self, "rot6d", rot6d)
        object.__setattr__(self, "trans", trans)
        object.__setattr__(self, "fps", float(self.fps))

    def __len__(self):
        return self.rot6d.shape[0]

    @property
    def n_joints(self):
        return self.rot6d.shape[1]

    @property
    def st(self):
        return 1.0 / self.fps

    @classmethod
    def from_matrices(cls, rotations, trans, fps):
        rotations = np.asarray(rotations, dtype=np.float64)
        return cls(np.concatenate([rotations[..., :, 0], rotations[..., :, 1]], axis=-1), trans, fps)

    @classmethod
    def from_frames(cls, frames, fps):
        return cls(np.stack([f.theta_6d for f in frames]), np.stack([f.t for f in frames]), fps)

    def matrices(self):
        return rotation6d_to_matrix(self.rot6d)

    def frame(self, i):
        return PoseFrame(self.rot6d[i], self.trans[i])

    def __getitem__(self, sl):
        if not isinstance(sl, slice):
            raise TypeError("use .frame(i) for single frames")
        return MotionSequence(self.rot6d[sl], self.trans[sl], self.fps)


@dataclass(frozen=True, eq=False)
class EulerMotion:
    """Euler parameterization S = [theta, R, t]; row 0 of ``theta`` is the root rotation."""

    theta: np.ndarray  # (T, N_J, 3)
    trans: np.ndarray  # (T, 3)
    fps: float
    gimbal: np.ndarray = None  # (T, N_J) bool

    def __post_init__(self):
        object.__setattr__(self, "theta", _frozen(self.theta))
        object.__setattr__(self, "trans", _frozen(self.trans))
        gimbal = np.zeros(self.theta.shape[:2], bool) if self.gimbal is None else self.gimbal
        object.__setattr__(self, "gimbal", _frozen(gimbal, dtype=bool))

    def __len__(self):
        return self.theta.shape[0]


def motion_to_euler(motion, warn=True):
    """Map 6D motion (Theta, t) to its Euler form; gimbal-locked joints are flagged."""
    R = motion.matrices()
    return EulerMotion(matrix_to_euler(R, warn=warn), motion.trans, motion.fps, gimbal_mask(R))


def euler_to_motion(euler):
    return MotionSequence.from_matrices(euler_to_matrix(euler.theta), euler.trans, euler.fps)


def transform_motion(motion, rotation, translation):
    """Express a motion in another frame: x' = rotation @ x + translation."""
    R = motion.matrices().copy()
    R[:, 0] = rotation @ R[:, 0]
    trans = motion.trans @ np.asarray(rotation).T + np.asarray(translation)
    return MotionSequence.from_matrices(R, trans, motion.fps)


# --------------------------------------------------------------------------
# forward kinematics


@dataclass(frozen=True, eq=False)
class FkResult:
    """FK outputs; arrays carry a leading frame axis when computed for a sequence."""

    joint_positions: np.ndarray
    joint_rotations: np.ndarray
    bone_orientations: np.ndarray
    marker_positions: np.ndarray
    imu_positions: np.ndarray
    imu_orientations: np.ndarray


def fk_arrays(skeleton, rotations, trans):
    """Batched FK on raw arrays: (T, J, 3, 3) rotations, (T, 3) translations."""
    rotations = np.asarray(rotations, dtype=np.float64)
    trans = np.asarray(trans, dtype=np.float64)
    if rotations.shape[1:] != (skeleton.n_joints, 3, 3) or trans.shape != (rotations.shape[0], 3):
        raise DimensionMismatch(
            f"pose with {rotations.shape[1:]} rotations does not match {skeleton.n_joints} joints"
        )
    return kernels.forward_kinematics(skeleton.parents, skeleton.offsets, rotations, trans)


def bone_midpoints(skeleton, positions, bone_indices):
    bones = [skeleton.bones[i] for i in bone_indices]
    prox = [b.proximal for b in bones]
    dist = [b.distal for b in bones]
    return 0.5 * (positions[..., prox, :] + positions[..., dist, :])


def bone_rotations(skeleton, joint_rotations, bone_indices):
    prox = [skeleton.bones[i].proximal for i in bone_indices]
    return joint_rotations[..., prox, :, :]


def forward_kinematics(skeleton, pose):
    """FK for a :class:`PoseFrame` or a whole :class:`MotionSequence`."""
    single = isinstance(pose, PoseFrame)
    if single:
        R = pose.matrices()[None]
        t = pose.t[None]
    else:
        R = pose.matrices()
        t = pose.trans
    if R.shape[1] != skeleton.n_joints:
        raise DimensionMismatch(f"pose has {R.shape[1]} joints, skeleton has {skeleton.n_joints}")
    pos, glob = fk_arrays(skeleton, R, t)
    all_bones = range(skeleton.n_bones)
    result = FkResult(
        joint_positions=pos,
        joint_rotations=glob,
        bone_orientations=bone_rotations(skeleton, glob, all_bones),
        marker_positions=pos[:, list(skeleton.marker_map)],
        imu_positions=bone_midpoints(skeleton, pos, skeleton.imu_map),
        imu_orientations=bone_rotations(skeleton, glob, skeleton.imu_map),
    )
    if single:
        result = FkResult(*(getattr(result, f)[0] for f in result.__dataclass_fields__))
    return result
