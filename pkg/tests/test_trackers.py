import numpy as np
import pytest
import torch

from helpers import tiny_dataset
from vimocap.errors import DimensionMismatch
from vimocap.inference import trackers as Tr
from vimocap.inference.gru import GruBlock
from vimocap.kinematics import default_skeleton
from vimocap.synth import assemble_inputs


@pytest.fixture(scope="module")
def stack():
    return Tr.init_stack(default_skeleton(), hidden=8, seed=3)


@pytest.fixture(scope="module")
def seq(skeleton, rig):
    return tiny_dataset(skeleton, rig, n=1, frames=12, seed=4).sequences[0]


def test_block_dimensions(skeleton):
    dims = Tr.stack_dims(skeleton)
    assert dims == {"limb": (112, 24), "body": (136, 21), "ik": (157, 114), "root": (169, 3)}


def test_wrong_block_shape_rejected(skeleton):
    blocks = {n: GruBlock(d, 2, o) for n, (d, o) in Tr.stack_dims(skeleton).items()}
    blocks["root"] = GruBlock(10, 2, 3)
    with pytest.raises(DimensionMismatch):
        Tr.TrackerStack(skeleton, **blocks)


def test_frame_count_preserved(stack, seq, rig):
    m = Tr.infer_sequence(stack, seq, rig)
    assert len(m) == len(seq)
    assert m.fps == seq.motion.fps


def test_zero_stack_outputs_biases(skeleton, rig, seq):
    blocks = {n: GruBlock(d, 4, o) for n, (d, o) in Tr.stack_dims(skeleton).items()}
    stack = Tr.TrackerStack(skeleton, **blocks)
    with torch.no_grad():
        stack.ik.params["b_out"].copy_(torch.tensor(Tr.IDENTITY_6D * skeleton.n_joints, dtype=torch.float64))
        stack.root.params["b_out"].copy_(torch.tensor([0.1, 0.2, 3.0], dtype=torch.float64))
    out = Tr.stack_forward(stack, assemble_inputs(seq, skeleton, rig))
    assert torch.all(out.limb == 0.0)
    assert torch.all(out.trans == torch.tensor([0.1, 0.2, 3.0], dtype=torch.float64))
    assert torch.allclose(out.rotations, torch.eye(3, dtype=torch.float64).expand_as(out.rotations))


def test_causality(stack, seq, skeleton, rig):
    x = assemble_inputs(seq, skeleton, rig)
    y = x.copy()
    y[7:] += 0.5
    a = Tr.stack_forward(stack, x)
    b = Tr.stack_forward(stack, y)
    assert torch.equal(a.trans[:, :7], b.trans[:, :7])
    assert torch.equal(a.theta6d[:, :7], b.theta6d[:, :7])
    assert not torch.equal(a.trans[:, 7:], b.trans[:, 7:])


def test_inference_is_deterministic(stack, seq, rig):
    a = Tr.infer_sequence(stack, seq, rig)
    b = Tr.infer_sequence(stack, seq, rig)
    assert np.array_equal(a.rot6d, b.rot6d) and np.array_equal(a.trans, b.trans)


def test_fk_joints_keep_bone_lengths(stack, seq, skeleton, rig):
    # the IK stage exists to make joints rigid even when endpoint outputs are not
    out = Tr.stack_forward(stack, assemble_inputs(seq, skeleton, rig))
    J = out.joints[0].detach().numpy()
    d = np.linalg.norm(J[:, skeleton.bone_distal] - J[:, skeleton.bone_proximal], axis=-1)
    np.testing.assert_allclose(d, np.broadcast_to(skeleton.bone_lengths, d.shape), atol=1e-12)


def test_hidden_state_streaming(stack, seq, skeleton, rig):
    x = assemble_inputs(seq, skeleton, rig)
    full = Tr.stack_forward(stack, x)
    first = Tr.stack_forward(stack, x[:5])
    rest = Tr.stack_forward(stack, x[5:], hidden=first.hidden)
    assert torch.allclose(torch.cat([first.trans, rest.trans], 1), full.trans, atol=1e-14)


def test_weights_round_trip(stack, seq, rig, tmp_path):
    path = tmp_path / "w.bin"
    Tr.save_weights(stack, path)
    back = Tr.load_weights(path)
    assert back.hidden_size == stack.hidden_size
    for k, v in stack.state().items():
        assert torch.equal(back.state()[k], v)
    a = Tr.infer_sequence(stack, seq, rig)
    b = Tr.infer_sequence(back, seq, rig)
    assert np.array_equal(a.rot6d, b.rot6d)


def test_weights_payload_layout(stack, tmp_path):
    path = tmp_path / "w.bin"
    Tr.save_weights(stack, path)
    raw = path.read_bytes()
    header, payload = raw.split(b"\n", 1)
    n = sum(p.numel() for p in stack.parameters())
    assert len(payload) == 8 * n
    first = next(iter(stack.limb.params.values())).detach().numpy().ravel()
    assert np.array_equal(np.frombuffer(payload[:8 * first.size], dtype="<f8"), first)


def test_truncated_weights_rejected(stack, tmp_path):
    path = tmp_path / "w.bin"
    Tr.save_weights(stack, path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(DimensionMismatch):
        Tr.load_weights(path)


def test_infer_needs_rig_and_shape(stack, seq):
    with pytest.raises(ValueError):
        Tr.infer_sequence(stack, seq)
    with pytest.raises(DimensionMismatch):
        Tr.infer_sequence(stack, np.zeros((4, 7)))


def test_data_dependent_biases(skeleton, rig):
    ds = tiny_dataset(skeleton, rig, n=2, frames=5)
    stack = Tr.init_stack(skeleton, hidden=4, seed=0, dataset=ds)
    mean_t = np.concatenate([s.motion.trans for s in ds.sequences]).mean(0)
    np.testing.assert_allclose(stack.root.params["b_out"].detach().numpy(), mean_t, atol=1e-14)
