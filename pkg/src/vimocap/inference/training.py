"""Multi-phase trainer: limb, then body, then IK/root pretraining, then full L_IK."""
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from ..errors import Divergence
from ..synth import SequenceObservations
from .losses import LossWeights, loss_body, loss_ik, loss_limb, make_batch
from .trackers import stack_forward

PHASES = ("1a", "1b", "2", "3")


@dataclass(frozen=True)
class Schedule:
    epochs_1a: int = 20
    epochs_1b: int = 20
    epochs_2: int = 10
    epochs_3: int = 100
    lr: float = 1e-4
    decay: float = 0.1
    decay_epochs: int = 50  # final epochs of phase 3 run at lr * decay
    batch_size: int = 16
    seq_len: int = 360
    dropout: float = 0.5
    weights: LossWeights = field(default_factory=LossWeights)

    @classmethod
    def desk(cls):
        """Scaled-down schedule for single-core runs (hidden 64, 20 x 240 frames)."""
        return cls(epochs_1a=5, epochs_1b=5, epochs_2=3, epochs_3=20, lr=1e-3, decay_epochs=5, seq_len=30)

    @classmethod
    def none(cls):
        return cls(epochs_1a=0, epochs_1b=0, epochs_2=0, epochs_3=0)

    def epochs(self, phase):
        return {"1a": self.epochs_1a, "1b": self.epochs_1b, "2": self.epochs_2, "3": self.epochs_3}[phase]

    def to_dict(self):
        d = asdict(self)
        d["weights"] = asdict(self.weights)
        return d

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        if "weights" in doc:
            doc["weights"] = LossWeights(**doc["weights"])
        return cls(**doc)


@dataclass
class TrainingLog:
    curves: dict = field(default_factory=lambda: {p: [] for p in PHASES})  # phase -> per-epoch mean loss
    boundaries: list = field(default_factory=list)  # cumulative epoch count at the end of each phase

    def to_dict(self):
        return {"curves": self.curves, "boundaries": self.boundaries}


def slice_observations(obs, start, stop):
    return SequenceObservations(obs.motion[start:stop], obs.sensors, obs.keypoints[:, start:stop],
                                obs.confidence[:, start:stop], obs.raw_orientation[start:stop],
                                obs.raw_acceleration[start:stop], obs.orientation[start:stop],
                                obs.acceleration[start:stop], obs.kind)


def chunk_sequences(sequences, seq_len):
    """Non-overlapping chunks of ``seq_len`` frames; trailing remainders are dropped."""
    out = []
    for obs in sequences:
        L = min(seq_len, len(obs))
        for k in range(len(obs) // L):
            out.append(slice_observations(obs, k * L, (k + 1) * L))
    return out


def _phase_loss(phase, stack, batch, cameras, weights, seed):
    sk = stack.skeleton
    if phase in ("1a", "1b"):
        out = stack_forward(stack, batch.x, training=True, seed=seed)
        loss = loss_limb(sk, out.limb, batch.ref_t, batch.keypoints, batch.sigma, cameras)
        if phase == "1b":
            loss = loss + loss_body(sk, out.limb, out.body, batch.ref_t, batch.keypoints, batch.sigma, cameras)
        return loss
    out = stack_forward(stack, batch.x, training=True, seed=seed, detach_trackers=True)
    if phase == "2":
        return ((out.rotations - batch.ref_rot) ** 2).sum() + ((out.trans - batch.ref_t) ** 2).sum()
    return loss_ik(sk, out.theta6d, out.trans, batch, cameras, weights).total


_TRAINABLE = {"1a": ("limb",), "1b": ("limb", "body"), "2": ("ik", "root"), "3": ("ik", "root")}


def train_multiphase(stack, dataset, schedule=None, seed=0, progress=None):
    """Train ``stack`` in place; returns ``(stack, TrainingLog)``.

    Each phase gets a fresh Adam optimizer over its own blocks.  Batches are
    drawn from ``schedule.seq_len``-frame chunks shuffled by a generator
    seeded from ``seed``.  A non-finite loss restores the state saved at the
    start of the failing epoch and raises :class:`Divergence` carrying it.
    """
    schedule = schedule or Schedule()
    if len(dataset.rig.cameras) < 2:
        raise ValueError("weak supervision needs at least 2 cameras")
    for blk in stack.blocks().values():
        blk.dropout = schedule.dropout
    sk, rig = stack.skeleton, dataset.rig
    chunks = chunk_sequences(dataset.sequences, schedule.seq_len)
    rng = np.random.default_rng(seed)
    log = TrainingLog()
    total_epochs = 0
    for phase in PHASES:
        n_epochs = schedule.epochs(phase)
        params = stack.parameters(_TRAINABLE[phase])
        opt = torch.optim.Adam(params, lr=schedule.lr) if n_epochs else None
        for epoch in range(n_epochs):
            if phase == "3" and epoch == max(n_epochs - schedule.decay_epochs, 0):
                for g in opt.param_groups:
                    g["lr"] = schedule.lr * schedule.decay
            checkpoint = stack.state()
            order = rng.permutation(len(chunks))
            losses = []
            for start in range(0, len(order), schedule.batch_size):
                batch = make_batch([chunks[i] for i in order[start:start + schedule.batch_size]], sk, rig)
                opt.zero_grad()
                loss = _phase_loss(phase, stack, batch, rig.cameras, schedule.weights,
                                   int(rng.integers(0, 2**31 - 1)))
                if not torch.isfinite(loss):
                    stack.load_state(checkpoint)
                    raise Divergence(f"non-finite loss in phase {phase}, epoch {epoch}", checkpoint=stack)
                loss.backward()
                opt.step()
                losses.append(float(loss.detach()) / len(batch))
            if not stack.is_finite():
                stack.load_state(checkpoint)
                raise Divergence(f"non-finite parameters after phase {phase}, epoch {epoch}", checkpoint=stack)
            log.curves[phase].append(float(np.mean(losses)))
            if progress is not None:
                progress(phase, epoch, log.curves[phase][-1])
        total_epochs += n_epochs
        log.boundaries.append(total_epochs)
    return stack, log
