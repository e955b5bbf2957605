"""Pose and acceleration metrics.

MPJPE is reported globally and root-aligned; PCK uses root-aligned joints
and a per-frame torso size ‖neck − pelvis‖ with a strict ``<`` threshold.
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import LengthMismatch, SequenceTooShort
from .kinematics import bone_midpoints, fk_arrays

PCK_THRESHOLDS = (0.2, 0.3)


def _positions(motion, skeleton):
    pos, _ = fk_arrays(skeleton, motion.matrices(), motion.trans)
    return pos


def _pair(pred, gt, skeleton):
    if len(pred) != len(gt):
        raise LengthMismatch(f"prediction has {len(pred)} frames, ground truth {len(gt)}")
    return _positions(pred, skeleton), _positions(gt, skeleton)


def mpjpe(pred, gt, skeleton, aligned=False):
    """Mean per-joint position error in millimeters."""
    P, G = _pair(pred, gt, skeleton)
    if aligned:
        P = P - P[:, :1]
        G = G - G[:, :1]
    return float(np.linalg.norm(P - G, axis=-1).mean() * 1000.0)


def pck(pred, gt, skeleton, tau):
    """Percentage of root-aligned joints with error strictly below τ·torso."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    P, G = _pair(pred, gt, skeleton)
    P = P - P[:, :1]
    G = G - G[:, :1]
    neck = skeleton.joint_index("neck")
    torso = np.linalg.norm(G[:, neck] - G[:, 0], axis=-1)
    err = np.linalg.norm(P - G, axis=-1)
    return float(np.mean(err < tau * torso[:, None]) * 100.0)


def accel_error(pred, observations, skeleton, sensors=None):
    """Mean ‖stencil(predicted sensor midpoints) − measured A_n‖ over interior frames.

    ``sensors`` defaults to the skeleton's input IMUs; measured values are
    the calibrated camera-frame accelerations in ``observations``.
    """
    if len(pred) < 3:
        raise SequenceTooShort("acceleration error needs at least 3 frames")
    if len(pred) != len(observations):
        raise LengthMismatch(f"prediction has {len(pred)} frames, observations {len(observations)}")
    names = sensors or [skeleton.bones[i].name for i in skeleton.imu_map]
    bidx = [skeleton.bone_index(n) for n in names]
    rows = observations.sensor_rows(names)
    P = bone_midpoints(skeleton, _positions(pred, skeleton), bidx)
    A = kernels.second_difference(P, pred.st)
    meas = observations.acceleration[1:-1, rows]
    return float(np.linalg.norm(A - meas, axis=-1).mean())


def accel_mean(pred, skeleton):
    """Mean ‖stencil(joint positions)‖ over interior frames and all joints."""
    if len(pred) < 3:
        raise SequenceTooShort("mean acceleration needs at least 3 frames")
    A = kernels.second_difference(_positions(pred, skeleton), pred.st)
    return float(np.linalg.norm(A, axis=-1).mean())


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)  # per-sequence dicts
    aggregate: dict = field(default_factory=dict)

    def to_dict(self):
        return {"rows": self.rows, "aggregate": self.aggregate}


def evaluate(pairs, skeleton, label=""):
    """Report over ``(name, pred, gt_observations)`` triples; aggregates are frame-weighted means."""
    rows = []
    for name, pred, obs in pairs:
        gt = obs.motion
        rows.append({
            "sequence": name,
            "label": label,
            "frames": len(gt),
            "mpjpe_global": mpjpe(pred, gt, skeleton, aligned=False),
            "mpjpe_root_aligned": mpjpe(pred, gt, skeleton, aligned=True),
            "pck": {f"{t:.1f}": pck(pred, gt, skeleton, t) for t in PCK_THRESHOLDS},
            "accel_error": accel_error(pred, obs, skeleton),
            "accel_mean": accel_mean(pred, skeleton),
        })
    agg = {}
    if rows:
        w = np.array([r["frames"] for r in rows], dtype=np.float64)
        w /= w.sum()
        for key in ("mpjpe_global", "mpjpe_root_aligned", "accel_error", "accel_mean"):
            agg[key] = float(np.dot(w, [r[key] for r in rows]))
        agg["pck"] = {k: float(np.dot(w, [r["pck"][k] for r in rows])) for k in rows[0]["pck"]}
        agg["frames"] = int(sum(r["frames"] for r in rows))
    return MetricsReport(rows, agg)
