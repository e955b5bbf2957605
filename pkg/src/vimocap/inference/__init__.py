"""Learned trackers, hybrid IK and their weakly supervised training."""
from .gru import GradCheckResult, GruBlock, grad_check, gru_backward, gru_forward, init_block
from .losses import Batch, IkLoss, LossWeights, loss_body, loss_bone, loss_ik, loss_joint, loss_limb, make_batch
from .trackers import (
    StackOutput,
    TrackerStack,
    infer_sequence,
    init_stack,
    load_weights,
    save_weights,
    stack_dims,
    stack_forward,
)
from .training import Schedule, TrainingLog, chunk_sequences, slice_observations, train_multiphase

__all__ = [
    "Batch", "GradCheckResult", "GruBlock", "IkLoss", "LossWeights", "Schedule", "StackOutput",
    "TrackerStack", "TrainingLog", "chunk_sequences", "grad_check", "gru_backward", "gru_forward",
    "infer_sequence", "init_block", "init_stack", "load_weights", "loss_body", "loss_bone", "loss_ik",
    "loss_joint", "loss_limb", "make_batch", "save_weights", "slice_observations", "stack_dims",
    "stack_forward", "train_multiphase",
]
