"""Limb → body → IK → root tracker stack, its forward pass and weights file."""
from dataclasses import dataclass

import numpy as np
import torch

from ..errors import DimensionMismatch
from ..kinematics import MotionSequence, default_skeleton
from ..synth import assemble_inputs, input_size
from . import torchgeom as tg
from .gru import DTYPE, GruBlock, gru_forward, init_block, param_shapes

WEIGHTS_FORMAT_VERSION = 1
BLOCKS = ("limb", "body", "ik", "root")
IDENTITY_6D = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)


def stack_dims(skeleton):
    """(input, output) size per block.

    The IK solver reads the raw input plus all limb and body endpoints; the
    root tracker reads the raw input plus every FK-refined joint.
    """
    D = input_size(skeleton)
    n_limb, n_body, J = len(skeleton.limb_endpoints), len(skeleton.body_endpoints), skeleton.n_joints
    return {
        "limb": (D, 3 * n_limb),
        "body": (D + 3 * n_limb, 3 * n_body),
        "ik": (D + 3 * (n_limb + n_body), 6 * J),
        "root": (D + 3 * J, 3),
    }


@dataclass(eq=False)
class TrackerStack:
    skeleton: object
    limb: GruBlock
    body: GruBlock
    ik: GruBlock
    root: GruBlock

    def __post_init__(self):
        for name, (d, o) in stack_dims(self.skeleton).items():
            blk = getattr(self, name)
            if (blk.input_size, blk.output_size) != (d, o):
                raise DimensionMismatch(f"{name} block must map {d} -> {o}, got "
                                        f"{blk.input_size} -> {blk.output_size}")

    @property
    def hidden_size(self):
        return self.limb.hidden_size

    def blocks(self):
        return {name: getattr(self, name) for name in BLOCKS}

    def parameters(self, names=BLOCKS):
        return [p for n in names for p in getattr(self, n).parameters()]

    def clone(self):
        return TrackerStack(self.skeleton, *(getattr(self, n).clone() for n in BLOCKS))

    def state(self):
        return {f"{n}.{k}": v.detach().clone() for n in BLOCKS for k, v in getattr(self, n).params.items()}

    def load_state(self, state):
        with torch.no_grad():
            for n in BLOCKS:
                for k, v in getattr(self, n).params.items():
                    v.copy_(state[f"{n}.{k}"])

    def is_finite(self):
        return all(getattr(self, n).is_finite() for n in BLOCKS)


def init_stack(skeleton=None, hidden=64, seed=0, dropout=0.5, dataset=None):
    """Random stack; with ``dataset`` the output biases start at data statistics.

    IK biases start at the identity rotation for every joint, the root bias
    at the mean training translation and endpoint biases at the mean
    root-relative endpoint positions.  This only moves the starting point;
    it reads ground truth the same way the L_prior/L_trans references do.
    """
    skeleton = skeleton or default_skeleton()
    gen = torch.Generator().manual_seed(int(seed))
    blocks = {n: init_block(d, hidden, o, gen, dropout) for n, (d, o) in stack_dims(skeleton).items()}
    stack = TrackerStack(skeleton, **blocks)
    with torch.no_grad():
        stack.ik.params["b_out"].copy_(torch.tensor(IDENTITY_6D * skeleton.n_joints, dtype=DTYPE))
        if dataset is not None and dataset.sequences:
            trans = np.concatenate([s.motion.trans for s in dataset.sequences])
            stack.root.params["b_out"].copy_(torch.as_tensor(trans.mean(0)))
            rel = _root_relative_joints(skeleton, dataset.sequences)
            stack.limb.params["b_out"].copy_(torch.as_tensor(rel[:, list(skeleton.limb_endpoints)].mean(0).ravel()))
            stack.body.params["b_out"].copy_(torch.as_tensor(rel[:, list(skeleton.body_endpoints)].mean(0).ravel()))
    return stack


def _root_relative_joints(skeleton, sequences):
    from ..kinematics import fk_arrays

    out = []
    for s in sequences:
        pos, _ = fk_arrays(skeleton, s.motion.matrices(), s.motion.trans)
        out.append(pos - pos[:, :1])
    return np.concatenate(out)


@dataclass(frozen=True, eq=False)
class StackOutput:
    limb: torch.Tensor  # (B, T, 8, 3) root-relative endpoints
    body: torch.Tensor  # (B, T, 7, 3)
    theta6d: torch.Tensor  # (B, T, J, 6)
    rotations: torch.Tensor  # (B, T, J, 3, 3) local
    joints: torch.Tensor  # (B, T, J, 3) FK, root-relative
    global_rot: torch.Tensor  # (B, T, J, 3, 3)
    trans: torch.Tensor  # (B, T, 3)
    hidden: dict


def stack_forward(stack, x, hidden=None, training=False, seed=0, detach_trackers=False):
    """Causal pass of all four blocks over (B, T, D) inputs.

    ``detach_trackers`` stops gradients from the IK/root losses flowing back
    into the limb and body trackers.
    """
    x = torch.as_tensor(x, dtype=DTYPE)
    if x.dim() == 2:
        x = x[None]
    hidden = hidden or {}
    B, T = x.shape[:2]
    sk = stack.skeleton
    h = {}
    limb, h["limb"] = gru_forward(stack.limb, x, hidden.get("limb"), training, seed)
    body, h["body"] = gru_forward(stack.body, torch.cat([x, limb], -1), hidden.get("body"), training, seed + 1)
    ends = torch.cat([limb, body], -1)
    if detach_trackers:
        ends = ends.detach()
    theta, h["ik"] = gru_forward(stack.ik, torch.cat([x, ends], -1), hidden.get("ik"), training, seed + 2)
    theta = theta.reshape(B, T, sk.n_joints, 6)
    R = tg.gram_schmidt(theta)
    joints, glob = tg.forward_kinematics(sk, R)
    t, h["root"] = gru_forward(stack.root, torch.cat([x, joints.reshape(B, T, -1)], -1), hidden.get("root"),
                               training, seed + 3)
    return StackOutput(limb.reshape(B, T, -1, 3), body.reshape(B, T, -1, 3), theta, R, joints, glob, t, h)


def infer_sequence(stack, observations, rig=None, hidden=None):
    """Predicted :class:`MotionSequence` for one sequence, dropout off.

    ``observations`` is a :class:`SequenceObservations` (``rig`` then picks
    the inference camera) or a ready (T, D) input array, in which case the
    result uses 30 fps unless ``observations`` carries its own rate.
    """
    if hasattr(observations, "motion"):
        if rig is None:
            raise ValueError("a rig is needed to assemble inputs from observations")
        x = assemble_inputs(observations, stack.skeleton, rig)
        fps = observations.motion.fps
    else:
        x = np.asarray(observations, dtype=np.float64)
        fps = 30.0
    if x.ndim != 2 or x.shape[1] != stack.limb.input_size:
        raise DimensionMismatch(f"expected (T, {stack.limb.input_size}) inputs, got {x.shape}")
    with torch.no_grad():
        out = stack_forward(stack, x, hidden)
    R = out.rotations[0].numpy()
    return MotionSequence.from_matrices(R, out.trans[0].numpy(), fps)


# --------------------------------------------------------------------------
# weights file: one JSON header line, then little-endian float64 payload


def save_weights(stack, path):
    from .. import textio

    header = {
        "format_version": WEIGHTS_FORMAT_VERSION,
        "hidden_size": stack.hidden_size,
        "dropout": stack.limb.dropout,
        "skeleton": stack.skeleton.to_dict(),
        "blocks": {n: {"input_size": getattr(stack, n).input_size, "output_size": getattr(stack, n).output_size,
                       "shapes": {k: list(v.shape) for k, v in getattr(stack, n).params.items()}}
                   for n in BLOCKS},
    }
    with open(path, "wb") as fh:
        fh.write(textio.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        for n in BLOCKS:
            for v in getattr(stack, n).params.values():
                arr = v.detach().numpy().astype("<f8").ravel()
                fh.write(arr.tobytes())


def load_weights(path):
    import json

    from ..kinematics import SkeletonConfig

    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        payload = fh.read()
    if header.get("format_version") != WEIGHTS_FORMAT_VERSION:
        raise ValueError(f"unsupported weights format_version {header.get('format_version')!r}")
    skeleton = SkeletonConfig.from_dict(header["skeleton"])
    H = int(header["hidden_size"])
    offset = 0
    blocks = {}
    for n in BLOCKS:
        meta = header["blocks"][n]
        D, O = meta["input_size"], meta["output_size"]
        params = {}
        for k, shape in param_shapes(D, H, O).items():
            if list(shape) != meta["shapes"][k]:
                raise DimensionMismatch(f"weights file shape mismatch for {n}.{k}")
            count = int(np.prod(shape))
            if offset + 8 * count > len(payload):
                raise DimensionMismatch("weights payload is truncated")
            arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(shape)
            params[k] = torch.tensor(arr, dtype=DTYPE, requires_grad=True)
            offset += 8 * count
        blocks[n] = GruBlock(D, H, O, float(header["dropout"]), params)
    if offset != len(payload):
        raise DimensionMismatch("weights payload has trailing bytes")
    return TrackerStack(skeleton, **blocks)

