"""Motion files (6D rotations + translation) and the matrix export format."""
import numpy as np

from . import textio
from .kinematics import MotionSequence

MOTION_FORMAT_VERSION = 1


def motion_to_dict(motion, meta=None):
    return {
        "format_version": MOTION_FORMAT_VERSION,
        "fps": motion.fps,
        "n_joints": motion.n_joints,
        "meta": meta or {},
        "rot6d": motion.rot6d,
        "trans": motion.trans,
    }


def motion_from_dict(doc):
    if doc.get("format_version") != MOTION_FORMAT_VERSION:
        raise ValueError(f"unsupported motion format_version {doc.get('format_version')!r}")
    rot6d = np.asarray(doc["rot6d"], dtype=np.float64).reshape(-1, int(doc["n_joints"]), 6)
    return MotionSequence(rot6d, np.asarray(doc["trans"], dtype=np.float64).reshape(-1, 3), float(doc["fps"]))


def save_motion(motion, path, meta=None):
    textio.dump(motion_to_dict(motion, meta), path)


def load_motion(path):
    return motion_from_dict(textio.load(path))


def export_records(motion, joint_names=None):
    """One record per frame: index, row-major 3×3 per joint, translation."""
    R = motion.matrices()
    head = {"format_version": MOTION_FORMAT_VERSION, "fps": motion.fps, "frames": len(motion),
            "joints": list(joint_names) if joint_names is not None else list(range(motion.n_joints))}
    return [head] + [{"frame": i, "rotations": R[i].reshape(-1, 9), "t": motion.trans[i]} for i in range(len(motion))]


def export_motion(motion, path, joint_names=None):
    textio.dump_lines(export_records(motion, joint_names), path)


def load_export(path):
    records = textio.load_lines(path)
    head, frames = records[0], records[1:]
    R = np.array([f["rotations"] for f in frames], dtype=np.float64).reshape(len(frames), -1, 3, 3)
    t = np.array([f["t"] for f in frames], dtype=np.float64)
    return MotionSequence.from_matrices(R, t, head["fps"])
