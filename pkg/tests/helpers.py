"""Small hand-built skeletons and problems shared by several test modules."""
import numpy as np

from vimocap.kinematics import SkeletonConfig


def chain_skeleton(lengths, axis=(1.0, 0.0, 0.0), limits_deg=None, imu_bones=None):
    """Root plus a straight chain of ``len(lengths)`` joints along ``axis``.

    ``limits_deg`` maps joint name to [[lo, hi]] * 3; unspecified joints get ±180.
    """
    axis = np.asarray(axis, dtype=float)
    n = len(lengths)
    names = ["root"] + [f"j{i + 1}" for i in range(n)]
    joints = [{"name": "root", "parent": None, "offset": [0.0, 0.0, 0.0]}]
    for i, L in enumerate(lengths):
        joints.append({"name": names[i + 1], "parent": names[i], "offset": list(axis * L)})
    bones = [{"name": f"b{i}", "proximal": names[i], "distal": names[i + 1]} for i in range(n)]
    limits = {nm: [[-180.0, 180.0]] * 3 for nm in names[1:]}
    limits.update(limits_deg or {})
    doc = {
        "format_version": 1,
        "joints": joints,
        "end_sites": [],
        "bones": bones,
        "key_bones": {k: "b0" for k in ("uparm", "lowarm", "upleg", "lowleg", "foot", "clavicle", "spine")},
        "marker_map": names,
        "imu_map": imu_bones or ["b0"],
        "supervision_map": [b["name"] for b in bones],
        "joint_limits_deg": limits,
    }
    return SkeletonConfig.from_dict(doc)


def tiny_dataset(skeleton, rig, n=2, frames=6, seed=0, noise=None, kinds=("dance_loop", "reach")):
    """A few short rendered sequences; zero noise unless ``noise`` is given."""
    from vimocap.synth import NoiseSpec, simulate_dataset

    return simulate_dataset(skeleton, rig, n, frames, 30.0, seed, noise or NoiseSpec.zero(), kinds)
