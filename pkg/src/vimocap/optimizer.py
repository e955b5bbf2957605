"""Windowed Levenberg-Marquardt refinement of an Euler-parameterized motion.

Per frame the unknowns are 19×3 intrinsic-XYZ angles (row 0 is the global
root rotation) and the root translation.  The energy is

    λ_3D E_3D + λ_2D E_2D + λ_acc E_acc + λ_ori E_ori

written as a stacked residual vector r with ‖r‖² equal to the energy.  The
Jacobian comes from forward differences with a three-colour frame pattern:
frame-local residuals see one frame and each acceleration residual sees
three consecutive frames, so perturbing a parameter in every third frame at
once still separates all columns.  That makes 3·60 residual evaluations
per Jacobian regardless of window length.
"""
import math
import warnings
from dataclasses import dataclass, field, fields

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .errors import DimensionMismatch, LengthMismatch, LimitViolation, SingularNormalEquations
from .inference.torchgeom import BEHIND_CAMERA_RESIDUAL, MIN_DEPTH
from .kinematics import (
    MotionSequence,
    bone_midpoints,
    euler_to_matrix,
    fk_arrays,
    matrix_to_euler,
    slerp_matrices,
)
from .synth import stencil_with_edges

FD_STEP = 1e-6
LM_ITERATIONS = 4
DAMPING_INIT = 1e-3
DAMPING_MAX = 1e6
DEFAULT_MAX_WINDOW = 360


@dataclass(frozen=True)
class EnergyWeights:
    w3d: float = 10.0
    w2d: float = 1.0
    acc: float = 10.0
    ori: float = 30.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"energy weight {f.name} must be non-negative")

    @classmethod
    def zero(cls):
        return cls(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True, eq=False)
class RefinementProblem:
    """Everything the energy reads, for one sequence.

    ``keypoints``/``sigma`` come from the single inference ``camera``.
    ``imu_orientation``/``imu_acceleration`` hold the N_i input sensors in
    ``skeleton.imu_map`` order.  ``acc_targets`` holds one acceleration per
    supervision-set sensor: the measurement for input sensors and the
    network's estimate for the rest.  ``free_root`` False pins the root
    rotation and translation (used by toy problems).
    """

    skeleton: object
    initial: MotionSequence
    camera: object
    keypoints: np.ndarray  # (T, M, 2)
    sigma: np.ndarray  # (T, M)
    imu_orientation: np.ndarray  # (T, N_i, 3, 3)
    imu_acceleration: np.ndarray  # (T, N_i, 3)
    acc_targets: np.ndarray  # (T, N_I, 3)
    weights: EnergyWeights = field(default_factory=EnergyWeights)
    window: int = 0  # 0 selects the default
    free_root: bool = True

    def __post_init__(self):
        T = len(self.initial)
        sk = self.skeleton
        checks = (
            ("keypoints", self.keypoints, (T, sk.n_markers, 2)),
            ("sigma", self.sigma, (T, sk.n_markers)),
            ("imu_orientation", self.imu_orientation, (T, sk.n_imus, 3, 3)),
            ("imu_acceleration", self.imu_acceleration, (T, sk.n_imus, 3)),
            ("acc_targets", self.acc_targets, (T, len(sk.supervision_map), 3)),
        )
        for name, arr, shape in checks:
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape[0] != T:
                raise LengthMismatch(f"{name} has {arr.shape[0]} frames, initial motion {T}")
            if arr.shape != shape:
                raise DimensionMismatch(f"{name} must have shape {shape}, got {arr.shape}")
            object.__setattr__(self, name, arr)
        if self.initial.n_joints != sk.n_joints:
            raise DimensionMismatch("initial motion does not match the skeleton")
        W = self.window or min(T, DEFAULT_MAX_WINDOW)
        if W < 3:
            raise ValueError("window size must be at least 3")
        object.__setattr__(self, "window", min(W, T))

    def __len__(self):
        return len(self.initial)

    @property
    def st(self):
        return self.initial.st

    def slice(self, start, stop):
        return RefinementProblem(self.skeleton, self.initial[start:stop], self.camera, self.keypoints[start:stop],
                                 self.sigma[start:stop], self.imu_orientation[start:stop],
                                 self.imu_acceleration[start:stop], self.acc_targets[start:stop], self.weights,
                                 self.window, self.free_root)


def build_problem(skeleton, network_motion, observations, rig, weights=None, window=0):
    """Problem for ``network_motion`` against one sequence of observations.

    Accelerations of supervision sensors without an input IMU come from the
    second difference of the network motion's sensor midpoints.
    """
    if len(network_motion) != len(observations):
        raise LengthMismatch(f"motion has {len(network_motion)} frames, observations {len(observations)}")
    c = rig.inference_camera
    inputs = [skeleton.bones[i].name for i in skeleton.imu_map]
    rows = observations.sensor_rows(inputs)
    pos, _ = fk_arrays(skeleton, network_motion.matrices(), network_motion.trans)
    sup = list(skeleton.supervision_map)
    targets = stencil_with_edges(bone_midpoints(skeleton, pos, sup), network_motion.st)
    for k, b in enumerate(skeleton.imu_map):
        targets[:, sup.index(b)] = observations.acceleration[:, rows[k]]
    return RefinementProblem(skeleton, network_motion, rig.cameras[c], observations.keypoints[c],
                             observations.confidence[c], observations.orientation[:, rows],
                             observations.acceleration[:, rows], targets, weights or EnergyWeights(), window)


# --------------------------------------------------------------------------
# energy


def clamp_pose(theta, limits):
    """Componentwise clamp of Euler angles (…, N_J, 3) into the limits; root row is unbounded."""
    return np.clip(np.asarray(theta, dtype=np.float64), limits.lower, limits.upper)


@dataclass(frozen=True)
class _Reference:
    positions: np.ndarray  # (T, J, 3) network FK joints


def _reference(problem):
    pos, _ = fk_arrays(problem.skeleton, problem.initial.matrices(), problem.initial.trans)
    return _Reference(pos)


def _terms(theta, trans, problem, ref):
    """Unweighted residual blocks: (local (T, K) stacked per frame, acc (T-2, L))."""
    sk = problem.skeleton
    T = theta.shape[0]
    R = kernels.euler_xyz_to_matrix(theta.reshape(-1, 3)).reshape(T, sk.n_joints, 3, 3)
    pos, glob = kernels.forward_kinematics(sk.parents, sk.offsets, R, trans)
    r3d = (pos - ref.positions).reshape(T, -1)
    cam = problem.camera
    markers = pos[:, list(sk.marker_map)].reshape(-1, 3)
    uv, depth = kernels.project_points(markers, cam.rotation, cam.translation, cam.fx, cam.fy, cam.cx, cam.cy)
    uv = uv.reshape(T, -1, 2)
    behind = (depth <= MIN_DEPTH).reshape(T, -1)
    res2d = uv - problem.keypoints
    if np.any(behind):
        res2d = np.where(behind[..., None], BEHIND_CAMERA_RESIDUAL / math.sqrt(2.0), res2d)
    r2d = (np.sqrt(problem.sigma)[..., None] * res2d).reshape(T, -1)
    prox = [sk.bones[i].proximal for i in sk.imu_map]
    rori = (glob[:, prox] - problem.imu_orientation).reshape(T, -1)
    mids = bone_midpoints(sk, pos, list(sk.supervision_map))
    racc = (kernels.second_difference(mids, problem.st) - problem.acc_targets[1:-1]).reshape(T - 2, -1)
    return r3d, r2d, rori, racc


def _weighted(blocks, w):
    r3d, r2d, rori, racc = blocks
    local = np.concatenate([math.sqrt(w.w3d) * r3d, math.sqrt(w.w2d) * r2d, math.sqrt(w.ori) * rori], axis=1)
    return local, math.sqrt(w.acc) * racc


def _split(x, J):
    theta = x[:, :3 * J].reshape(-1, J, 3)
    return theta, x[:, 3 * J:]


@dataclass(frozen=True)
class EnergyBreakdown:
    total: float
    e3d: float
    e2d: float
    acc: float
    ori: float

    def to_dict(self):
        return {"total": self.total, "e3d": self.e3d, "e2d": self.e2d, "acc": self.acc, "ori": self.ori}


def energy(theta, trans, problem, check_limits=True):
    """Energy and unweighted per-term values for Euler angles (T, J, 3) and translations (T, 3)."""
    theta = np.asarray(theta, dtype=np.float64)
    trans = np.asarray(trans, dtype=np.float64)
    T = len(problem)
    if theta.shape != (T, problem.skeleton.n_joints, 3) or trans.shape != (T, 3):
        raise DimensionMismatch("pose parameters do not match the problem")
    if T < 3:
        raise LengthMismatch("the acceleration term needs at least 3 frames")
    limits = problem.skeleton.limits
    if check_limits and not limits.contains(theta):
        raise LimitViolation("pose outside the joint limits")
    r3d, r2d, rori, racc = _terms(theta, trans, problem, _reference(problem))
    e = [float(np.sum(r * r)) for r in (r3d, r2d, racc, rori)]
    w = problem.weights
    total = w.w3d * e[0] + w.w2d * e[1] + w.acc * e[2] + w.ori * e[3]
    return EnergyBreakdown(total, e[0], e[1], e[2], e[3])


def energy_gradient(theta, trans, problem):
    """Reverse-mode gradient of the energy w.r.t. (theta, trans), via torch."""
    import torch

    th = torch.tensor(np.asarray(theta, dtype=np.float64), requires_grad=True)
    tr = torch.tensor(np.asarray(trans, dtype=np.float64), requires_grad=True)
    e = energy_torch(th, tr, problem)
    g_th, g_tr = torch.autograd.grad(e, [th, tr])
    return g_th.numpy(), g_tr.numpy()


def energy_torch(theta, trans, problem):
    """Torch twin of :func:`energy` (total only), differentiable in both arguments."""
    import torch

    from .inference import torchgeom as tg

    sk = problem.skeleton
    w = problem.weights
    dt = torch.float64
    ref = torch.as_tensor(_reference(problem).positions, dtype=dt)
    R = tg.euler_xyz(theta)
    pos, glob = tg.forward_kinematics(sk, R, trans)
    e3d = ((pos - ref) ** 2).sum()
    cam = tg.TorchCamera(problem.camera)
    markers = pos[:, list(sk.marker_map)]
    e2d = tg.reprojection_sq(cam, markers, torch.as_tensor(problem.keypoints, dtype=dt),
                             torch.as_tensor(problem.sigma, dtype=dt)).sum()
    prox = [sk.bones[i].proximal for i in sk.imu_map]
    eori = ((glob[:, prox] - torch.as_tensor(problem.imu_orientation, dtype=dt)) ** 2).sum()
    mids = tg.midpoints(sk, pos, list(sk.supervision_map))
    acc = (mids[2:] - 2.0 * mids[1:-1] + mids[:-2]) / (problem.st ** 2)
    eacc = ((acc - torch.as_tensor(problem.acc_targets[1:-1], dtype=dt)) ** 2).sum()
    return w.w3d * e3d + w.w2d * e2d + w.acc * eacc + w.ori * eori


# --------------------------------------------------------------------------
# Levenberg-Marquardt


def _jacobian(x, problem, ref, active):
    """Sparse forward-difference Jacobian of the weighted residuals at packed ``x`` (T, P)."""
    T, P = x.shape
    J = problem.skeleton.n_joints
    w = problem.weights
    base_loc, base_acc = _weighted(_terms(*_split(x, J), problem, ref), w)
    K, L = base_loc.shape[1], base_acc.shape[1]
    jl = np.zeros((T, K, P))
    ja = np.zeros((T - 2, L, 3, P))  # axis 2: which of frames i, i+1, i+2
    frames = np.arange(T)
    for colour in range(3):
        sel = frames % 3 == colour
        for p in np.flatnonzero(active):
            xp = x.copy()
            xp[sel, p] += FD_STEP
            loc, acc = _weighted(_terms(*_split(xp, J), problem, ref), w)
            jl[sel, :, p] = (loc[sel] - base_loc[sel]) / FD_STEP
            d = (acc - base_acc) / FD_STEP
            for k in range(3):
                rows = (frames[:T - 2] + k) % 3 == colour
                ja[rows, :, k, p] = d[rows]
    # local block: row t*K + a, column t*P + p
    t_i, a_i, p_i = np.meshgrid(np.arange(T), np.arange(K), np.arange(P), indexing="ij")
    rows_l = (t_i * K + a_i).ravel()
    cols_l = (t_i * P + p_i).ravel()
    i_i, b_i, k_i, q_i = np.meshgrid(np.arange(T - 2), np.arange(L), np.arange(3), np.arange(P), indexing="ij")
    rows_a = (T * K + i_i * L + b_i).ravel()
    cols_a = ((i_i + k_i) * P + q_i).ravel()
    vals = np.concatenate([jl.ravel(), ja.ravel()])
    keep = vals != 0.0
    Jm = sp.csr_matrix((vals[keep], (np.concatenate([rows_l, rows_a])[keep],
                                     np.concatenate([cols_l, cols_a])[keep])),
                       shape=(T * K + (T - 2) * L, T * P))
    return Jm, np.concatenate([base_loc.ravel(), base_acc.ravel()])


def _energy_packed(x, problem, ref):
    loc, acc = _weighted(_terms(*_split(x, problem.skeleton.n_joints), problem, ref), problem.weights)
    return float(np.sum(loc * loc) + np.sum(acc * acc))


def _clamp_packed(x, skeleton):
    J = skeleton.n_joints
    theta, trans = _split(x, J)
    return np.concatenate([clamp_pose(theta, skeleton.limits).reshape(len(x), -1), trans], axis=1)


@dataclass
class WindowTrace:
    start: int
    stop: int
    energies: list = field(default_factory=list)  # energy after each outer iteration, [0] = initial
    damping: list = field(default_factory=list)
    skipped: list = field(default_factory=list)  # iterations whose step was abandoned

    def to_dict(self):
        return {"start": self.start, "stop": self.stop, "energies": self.energies, "damping": self.damping,
                "skipped": self.skipped}


def _active_mask(skeleton, free_root):
    J = skeleton.n_joints
    lim = skeleton.limits
    theta_free = (lim.upper > lim.lower).ravel()
    mask = np.concatenate([theta_free, np.ones(3, bool)])
    if not free_root:
        mask[:3] = False
        mask[3 * J:] = False
    return mask


def _refine_window(problem, iterations):
    sk = problem.skeleton
    T = len(problem)
    ref = _reference(problem)
    R0 = problem.initial.matrices()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        theta0 = matrix_to_euler(R0, warn=False)
    x = _clamp_packed(np.concatenate([theta0.reshape(T, -1), problem.initial.trans], axis=1), sk)
    active = _active_mask(sk, problem.free_root)
    cols = np.flatnonzero(np.tile(active, T))
    e = _energy_packed(x, problem, ref)
    trace = WindowTrace(0, T, [e])
    mu = DAMPING_INIT
    for it in range(iterations):
        if e < 1e-18:
            trace.energies.append(e)
            trace.damping.append(mu)
            continue
        Jm, r = _jacobian(x, problem, ref, active)
        Ja = Jm[:, cols]
        A = (Ja.T @ Ja).tocsc()
        g = Ja.T @ r
        accepted = False
        while mu <= DAMPING_MAX:
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("error", spla.MatrixRankWarning)
                    step = spla.spsolve(A + mu * sp.identity(A.shape[0], format="csc"), -g)
                if not np.all(np.isfinite(step)):
                    raise SingularNormalEquations("non-finite LM step")
            except (spla.MatrixRankWarning, SingularNormalEquations, RuntimeError):
                mu *= 10.0
                continue
            cand = x.copy().ravel()
            cand[cols] += step
            cand = _clamp_packed(cand.reshape(T, -1), sk)
            ec = _energy_packed(cand, problem, ref)
            if ec < e:
                x, e = cand, ec
                mu = max(mu / 10.0, 1e-12)
                accepted = True
                break
            mu *= 10.0
        if not accepted:
            trace.skipped.append(it)
            mu = DAMPING_MAX
        trace.energies.append(e)
        trace.damping.append(mu)
    theta, trans = _split(x, sk.n_joints)
    return theta, trans, trace


@dataclass
class RefinementResult:
    motion: MotionSequence
    theta: np.ndarray  # (T, J, 3) refined Euler angles before blending
    traces: list

    @property
    def energies(self):
        return [t.energies for t in self.traces]

    def to_dict(self):
        return {"windows": [t.to_dict() for t in self.traces]}


def window_starts(T, W):
    """Window starts with W/2 overlap; the last window is aligned to the end."""
    if W >= T:
        return [0]
    hop = max(W // 2, 1)
    starts = list(range(0, T - W + 1, hop))
    if starts[-1] + W < T:
        starts.append(T - W)
    return starts


def refine(problem, iterations=LM_ITERATIONS):
    """Refine ``problem.initial`` window by window; overlaps are cross-faded.

    If the initial motion is within limits and its energy is below 1e-18
    the input motion object itself is returned.
    """
    sk = problem.skeleton
    T, W = len(problem), problem.window
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        theta_in = matrix_to_euler(problem.initial.matrices(), warn=False)
    if sk.limits.contains(theta_in) and energy(theta_in, problem.initial.trans, problem).total < 1e-18:
        trace = WindowTrace(0, T, [0.0] * (iterations + 1), [DAMPING_INIT] * iterations)
        return RefinementResult(problem.initial, theta_in, [trace])
    rot = np.zeros((T, sk.n_joints, 3, 3))
    trans = np.zeros((T, 3))
    theta_all = np.zeros((T, sk.n_joints, 3))
    traces = []
    filled = 0  # frames [0, filled) already hold a result
    for start in window_starts(T, W):
        stop = start + W
        th, tr, trace = _refine_window(problem.slice(start, stop), iterations)
        trace.start, trace.stop = start, stop
        traces.append(trace)
        Rw = euler_to_matrix(th)
        overlap = max(filled - start, 0)
        if overlap:
            s = (np.arange(overlap) + 1.0) / (overlap + 1.0)
            idx = slice(start, start + overlap)
            blended = slerp_matrices(rot[idx], Rw[:overlap], s[:, None])
            # a slerp of two feasible poses can leave the Euler box; project back
            theta_all[idx] = clamp_pose(matrix_to_euler(blended, warn=False), sk.limits)
            rot[idx] = euler_to_matrix(theta_all[idx])
            trans[idx] = (1.0 - s)[:, None] * trans[idx] + s[:, None] * tr[:overlap]
        rot[start + overlap:stop] = Rw[overlap:]
        trans[start + overlap:stop] = tr[overlap:]
        theta_all[start + overlap:stop] = th[overlap:]
        filled = stop
    motion = MotionSequence.from_matrices(rot, trans, problem.initial.fps)
    return RefinementResult(motion, theta_all, traces)
