"""Weakly supervised tracker and IK losses.

All terms are plain sums (no averaging) of non-negative squares, in the
units of their observations: pixels² for reprojection, (m/s²)² for
acceleration, squared Frobenius norms for rotations, m² for bones and
translation.
"""
from dataclasses import dataclass, fields

import numpy as np
import torch

from ..errors import SequenceTooShort
from ..synth import assemble_inputs
from . import torchgeom as tg

DTYPE = torch.float64


@dataclass(frozen=True)
class LossWeights:
    l2d: float = 1.0
    acc: float = 10.0
    ori: float = 30.0
    prior: float = 0.01
    trans: float = 0.01

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be non-negative")

    @classmethod
    def zero(cls):
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(eq=False)
class Batch:
    """Stacked training tensors for B equal-length chunks.

    ``keypoints``/``sigma`` hold every camera (weak multi-view supervision);
    ``orientation``/``acceleration`` hold the supervision sensors in
    ``sensor_bones`` order.  ``ref_rot``/``ref_t`` are the reference pose.
    """

    x: torch.Tensor  # (B, T, D)
    keypoints: torch.Tensor  # (C, B, T, M, 2)
    sigma: torch.Tensor  # (C, B, T, M)
    orientation: torch.Tensor  # (B, T, N, 3, 3)
    acceleration: torch.Tensor  # (B, T, N, 3)
    ref_rot: torch.Tensor  # (B, T, J, 3, 3)
    ref_t: torch.Tensor  # (B, T, 3)
    st: float
    sensor_bones: tuple

    def __len__(self):
        return self.x.shape[0]


def make_batch(chunks, skeleton, rig):
    """Batch from a list of :class:`SequenceObservations` of equal length."""
    sup = [skeleton.bones[i].name for i in skeleton.supervision_map]
    xs, kp, sg, ori, acc, rr, rt = [], [], [], [], [], [], []
    for obs in chunks:
        rows = obs.sensor_rows(sup)
        xs.append(assemble_inputs(obs, skeleton, rig))
        kp.append(obs.keypoints)
        sg.append(obs.confidence)
        ori.append(obs.orientation[:, rows])
        acc.append(obs.acceleration[:, rows])
        rr.append(obs.motion.matrices())
        rt.append(obs.motion.trans)
    t = lambda a, axis=0: torch.as_tensor(np.stack(a, axis=axis), dtype=DTYPE)  # noqa: E731
    return Batch(t(xs), t(kp, 1), t(sg, 1), t(ori), t(acc), t(rr), t(rt), float(chunks[0].st),
                 tuple(skeleton.bone_index(n) for n in sup))


def _cameras(cameras):
    return [c if isinstance(c, tg.TorchCamera) else tg.TorchCamera(c) for c in cameras]


def loss_joint(pred, t, keypoints, sigma, cameras):
    """Σ σ‖Π_c(Ĵ + t) − p‖² over cameras, frames and points.

    ``pred`` (..., K, 3) root-relative, ``t`` (..., 3), ``keypoints``
    (C, ..., K, 2), ``sigma`` (C, ..., K).
    """
    X = pred + t.unsqueeze(-2)
    total = pred.new_zeros(())
    for c, cam in enumerate(_cameras(cameras)):
        total = total + tg.reprojection_sq(cam, X, keypoints[c], sigma[c]).sum()
    return total


def loss_bone(positions, pairs, lengths):
    """Σ (‖J_a − J_b‖ − L)² over frames and (a, b) index pairs into ``positions`` (..., K, 3)."""
    a = torch.as_tensor([p[0] for p in pairs])
    b = torch.as_tensor([p[1] for p in pairs])
    L = torch.as_tensor(np.asarray(lengths, dtype=np.float64))
    d = (positions[..., a, :] - positions[..., b, :]).norm(dim=-1)
    return ((d - L) ** 2).sum()


def tracked_positions(skeleton, limb, body):
    """Scatter limb/body endpoint outputs into a (..., J, 3) array, root at 0.

    Joints that no tracker emits stay at zero; no bone used by the bone
    losses touches them.
    """
    shape = limb.shape[:-2] + (skeleton.n_joints, 3)
    pos = limb.new_zeros(shape)
    pos = pos.index_copy(-2, torch.as_tensor(list(skeleton.limb_endpoints)), limb)
    pos = pos.index_copy(-2, torch.as_tensor(list(skeleton.body_endpoints)), body)
    return pos


def _bone_pairs(skeleton, bone_indices):
    pairs = [(skeleton.bones[i].proximal, skeleton.bones[i].distal) for i in bone_indices]
    return pairs, skeleton.bone_lengths[list(bone_indices)]


def _marker_keypoints(skeleton, keypoints, sigma, joints):
    """Restrict per-marker observations to the marker ids of ``joints``."""
    marker_of = {j: m for m, j in enumerate(skeleton.marker_map)}
    cols = [marker_of[j] for j in joints]
    return keypoints[..., cols, :], sigma[..., cols]


def loss_limb(skeleton, limb, t, keypoints, sigma, cameras, body=None):
    """L_joint + L_bone over the limb endpoints and limb bones (equal weights)."""
    kp, sg = _marker_keypoints(skeleton, keypoints, sigma, skeleton.limb_endpoints)
    pos = tracked_positions(skeleton, limb, body if body is not None else limb.new_zeros(
        limb.shape[:-2] + (len(skeleton.body_endpoints), 3)))
    pairs, lengths = _bone_pairs(skeleton, skeleton.limb_bones)
    return loss_joint(limb, t, kp, sg, cameras) + loss_bone(pos, pairs, lengths)


def loss_body(skeleton, limb, body, t, keypoints, sigma, cameras):
    """L_joint + L_bone over the body endpoints and body bones.

    Body bones reaching into the limb set (upper arms) or the root (hips)
    read those endpoints from the limb output and the origin.
    """
    kp, sg = _marker_keypoints(skeleton, keypoints, sigma, skeleton.body_endpoints)
    pos = tracked_positions(skeleton, limb, body)
    pairs, lengths = _bone_pairs(skeleton, skeleton.body_bones)
    return loss_joint(body, t, kp, sg, cameras) + loss_bone(pos, pairs, lengths)


@dataclass(frozen=True)
class IkLoss:
    total: torch.Tensor
    terms: dict  # name -> unweighted tensor

    def breakdown(self):
        return {k: float(v) for k, v in self.terms.items()}


def loss_ik(skeleton, theta6d, t_hat, batch, cameras, weights=LossWeights()):
    """λ_2D L_2D + λ_acc L_acc + λ_ori L_ori + λ_prior L_prior + λ_trans L_trans.

    ``theta6d`` (B, T, J, 6), ``t_hat`` (B, T, 3).  L_acc compares the
    second difference of predicted sensor midpoints with the measured
    accelerations at interior frames.
    """
    T = theta6d.shape[-3]
    if T < 3:
        raise SequenceTooShort(f"loss_ik needs at least 3 frames, got {T}")
    R = tg.gram_schmidt(theta6d)
    joints, glob = tg.forward_kinematics(skeleton, R, t_hat)
    markers = joints[..., list(skeleton.marker_map), :]
    terms = {}
    cams = _cameras(cameras)
    l2d = markers.new_zeros(())
    for c, cam in enumerate(cams):
        l2d = l2d + tg.reprojection_sq(cam, markers, batch.keypoints[c], batch.sigma[c]).sum()
    terms["l2d"] = l2d
    sup = list(batch.sensor_bones)
    P = tg.midpoints(skeleton, joints, sup)
    acc_hat = tg.second_difference(P, batch.st)
    terms["acc"] = ((acc_hat - batch.acceleration[..., 1:-1, :, :]) ** 2).sum()
    Rb = tg.bone_frames(skeleton, glob, sup)
    terms["ori"] = ((Rb - batch.orientation) ** 2).sum()
    terms["prior"] = ((R - batch.ref_rot) ** 2).sum()
    terms["trans"] = ((t_hat - batch.ref_t) ** 2).sum()
    total = (weights.l2d * terms["l2d"] + weights.acc * terms["acc"] + weights.ori * terms["ori"]
             + weights.prior * terms["prior"] + weights.trans * terms["trans"])
    return IkLoss(total, terms)
