"""Differentiable twins of the numpy geometry used by the losses and the energy."""
import numpy as np
import torch

DTYPE = torch.float64
BEHIND_CAMERA_RESIDUAL = 1e4  # px, per behind-camera marker, constant w.r.t. parameters
MIN_DEPTH = 1e-6


def gram_schmidt(r6):
    """(..., 6) column-major 6D tuples to (..., 3, 3) rotations."""
    a, b = r6[..., :3], r6[..., 3:]
    x = a / a.norm(dim=-1, keepdim=True)
    y = b - (x * b).sum(-1, keepdim=True) * x
    y = y / y.norm(dim=-1, keepdim=True)
    z = torch.cross(x, y, dim=-1)
    return torch.stack([x, y, z], dim=-1)


def euler_xyz(theta):
    """Intrinsic XYZ Euler angles (..., 3) to matrices, R = Rx(a) Ry(b) Rz(c)."""
    ca, cb, cc = torch.cos(theta).unbind(-1)
    sa, sb, sc = torch.sin(theta).unbind(-1)
    rows = [
        torch.stack([cb * cc, -cb * sc, sb], -1),
        torch.stack([ca * sc + sa * sb * cc, ca * cc - sa * sb * sc, -sa * cb], -1),
        torch.stack([sa * sc - ca * sb * cc, sa * cc + ca * sb * sc, ca * cb], -1),
    ]
    return torch.stack(rows, dim=-2)


def forward_kinematics(skeleton, local_rot, root_t=None):
    """Joint positions and global rotations from (..., J, 3, 3) local rotations.

    Without ``root_t`` positions are root-relative.
    """
    offsets = torch.tensor(np.array(skeleton.offsets), dtype=DTYPE)
    glob = [local_rot[..., 0, :, :]]
    zero = torch.zeros(local_rot.shape[:-3] + (3,), dtype=DTYPE)
    pos = [zero if root_t is None else root_t]
    for j in range(1, skeleton.n_joints):
        p = int(skeleton.parents[j])
        pos.append(pos[p] + glob[p] @ offsets[j])
        glob.append(glob[p] @ local_rot[..., j, :, :])
    return torch.stack(pos, dim=-2), torch.stack(glob, dim=-3)


def midpoints(skeleton, positions, bone_indices):
    prox = [skeleton.bones[i].proximal for i in bone_indices]
    dist = [skeleton.bones[i].distal for i in bone_indices]
    return 0.5 * (positions[..., prox, :] + positions[..., dist, :])


def bone_frames(skeleton, glob, bone_indices):
    return glob[..., [skeleton.bones[i].proximal for i in bone_indices], :, :]


class TorchCamera:
    """Pinhole camera parameters as tensors."""

    def __init__(self, camera):
        self.R = torch.tensor(np.array(camera.rotation), dtype=DTYPE)
        self.t = torch.tensor(np.array(camera.translation), dtype=DTYPE)
        self.fx, self.fy, self.cx, self.cy = (float(v) for v in (camera.fx, camera.fy, camera.cx, camera.cy))

    def project(self, X):
        """(..., 3) points to (uv, depth, behind) with behind-camera depth clamped."""
        Y = X @ self.R.T + self.t
        depth = Y[..., 2]
        behind = depth <= MIN_DEPTH
        z = torch.where(behind, torch.ones_like(depth), depth)
        u = self.fx * Y[..., 0] / z + self.cx
        v = self.fy * Y[..., 1] / z + self.cy
        return torch.stack([u, v], -1), depth, behind


def reprojection_sq(camera, X, p, sigma):
    """σ-weighted squared pixel residuals per point; behind-camera points cost σ·1e4²."""
    uv, _, behind = camera.project(X)
    sq = ((uv - p) ** 2).sum(-1)
    sq = torch.where(behind, torch.full_like(sq, BEHIND_CAMERA_RESIDUAL ** 2), sq)
    return sigma * sq


def second_difference(P, st):
    return (P[..., 2:, :, :] - 2.0 * P[..., 1:-1, :, :] + P[..., :-2, :, :]) / (st * st)
