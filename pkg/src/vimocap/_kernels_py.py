"""Pure-numpy reference kernels.

Every function here has a twin in ``_fastkernels.pyx`` with the same
signature; ``vimocap.kernels`` picks one at import time.  Inputs are assumed
validated by the caller.
"""
import numpy as np


def gram_schmidt(r6):
    """(..., 6) column-major pairs -> (..., 3, 3) rotation matrices."""
    r6 = np.asarray(r6, dtype=np.float64)
    a1 = r6[..., 0:3]
    a2 = r6[..., 3:6]
    b1 = a1 / np.linalg.norm(a1, axis=-1, keepdims=True)
    b2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    b2 = b2 / np.linalg.norm(b2, axis=-1, keepdims=True)
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def euler_xyz_to_matrix(angles):
    """(N, 3) intrinsic X-Y-Z angles -> (N, 3, 3); R = Rx(a) @ Ry(b) @ Rz(c)."""
    angles = np.asarray(angles, dtype=np.float64)
    ca, cb, cc = np.cos(angles[:, 0]), np.cos(angles[:, 1]), np.cos(angles[:, 2])
    sa, sb, sc = np.sin(angles[:, 0]), np.sin(angles[:, 1]), np.sin(angles[:, 2])
    out = np.empty((angles.shape[0], 3, 3))
    out[:, 0, 0] = cb * cc
    out[:, 0, 1] = -cb * sc
    out[:, 0, 2] = sb
    out[:, 1, 0] = ca * sc + sa * sb * cc
    out[:, 1, 1] = ca * cc - sa * sb * sc
    out[:, 1, 2] = -sa * cb
    out[:, 2, 0] = sa * sc - ca * sb * cc
    out[:, 2, 1] = sa * cc + ca * sb * sc
    out[:, 2, 2] = ca * cb
    return out


def forward_kinematics(parents, offsets, local_rot, root_t):
    """Batched FK over T frames.

    parents: (J,) int, parents[0] == -1 and parents[j] < j.
    offsets: (J, 3) rest offsets in the parent frame.
    local_rot: (T, J, 3, 3); entry 0 is the global root rotation.
    root_t: (T, 3).
    Returns positions (T, J, 3) and global rotations (T, J, 3, 3).
    """
    local_rot = np.asarray(local_rot, dtype=np.float64)
    root_t = np.asarray(root_t, dtype=np.float64)
    T, J = local_rot.shape[:2]
    glob = np.empty((T, J, 3, 3))
    pos = np.empty((T, J, 3))
    glob[:, 0] = local_rot[:, 0]
    pos[:, 0] = root_t
    for j in range(1, J):
        p = parents[j]
        glob[:, j] = glob[:, p] @ local_rot[:, j]
        pos[:, j] = pos[:, p] + glob[:, p] @ offsets[j]
    return pos, glob


def project_points(points, rot, trans, fx, fy, cx, cy):
    """Pinhole projection of (N, 3) points; returns pixels (N, 2) and depths (N,)."""
    points = np.asarray(points, dtype=np.float64)
    cam = points @ np.asarray(rot).T + np.asarray(trans)
    depth = cam[:, 2]
    uv = np.empty((points.shape[0], 2))
    with np.errstate(divide="ignore", invalid="ignore"):
        uv[:, 0] = fx * cam[:, 0] / depth + cx
        uv[:, 1] = fy * cam[:, 1] / depth + cy
    return uv, depth


def second_difference(positions, st):
    """(P[t+1] - 2 P[t] + P[t-1]) / st**2 along axis 0; output has T - 2 rows."""
    positions = np.asarray(positions, dtype=np.float64)
    return (positions[2:] - 2.0 * positions[1:-1] + positions[:-2]) / (st * st)
