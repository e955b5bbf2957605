import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import tiny_dataset
from vimocap.errors import SequenceTooShort
from vimocap.inference import losses as Lo
from vimocap.inference import torchgeom as tg
from vimocap.inference.gru import grad_check
from vimocap.kinematics import fk_arrays, matrix_to_rotation6d
from vimocap.synth import NoiseSpec, project_many

D = torch.float64


def tt(a):
    return torch.tensor(np.array(a, dtype=np.float64), dtype=D)


@pytest.fixture(scope="module")
def data(skeleton, rig):
    ds = tiny_dataset(skeleton, rig, n=2, frames=6)
    return ds, Lo.make_batch(ds.sequences, skeleton, rig)


def gt_joints(skeleton, obs):
    pos, glob = fk_arrays(skeleton, obs.motion.matrices(), obs.motion.trans)
    return pos, glob


# --------------------------------------------------------------------------
# reprojection and bone terms


def test_loss_joint_one_pixel_is_one(rig):
    cam = rig.cameras[0]
    X = np.array([[0.1, -0.2, 3.0]])
    p = project_many(cam, X)[0] + np.array([[1.0, 0.0]])
    val = Lo.loss_joint(tt(X), tt(np.zeros(3)), tt(p[None]), tt(np.ones((1, 1))), [cam])
    assert float(val) == pytest.approx(1.0, abs=1e-9)


def test_loss_joint_zero_on_ground_truth(skeleton, rig, data):
    ds, _ = data
    obs = ds.sequences[0]
    pos, _ = gt_joints(skeleton, obs)
    rel = pos - pos[:, :1]
    markers = list(skeleton.marker_map)
    val = Lo.loss_joint(tt(rel[:, markers]), tt(obs.motion.trans), tt(obs.keypoints), tt(obs.confidence),
                        rig.cameras)
    assert float(val) < 1e-12


def test_loss_joint_zero_sigma_is_zero(rig):
    kp = tt(np.full((len(rig.cameras), 3, 2), 1e3))
    val = Lo.loss_joint(tt(np.ones((3, 3))), tt(np.ones(3)), kp, tt(np.zeros((len(rig.cameras), 3))), rig.cameras)
    assert float(val) == 0.0


def test_behind_camera_is_a_large_constant(rig):
    cam = rig.cameras[0]
    X = tt([[0.0, 0.0, -2.0]]).requires_grad_(True)
    val = Lo.loss_joint(X, tt(np.zeros(3)), tt(np.zeros((1, 1, 2))), tt(np.ones((1, 1))), [cam])
    assert val.item() == tg.BEHIND_CAMERA_RESIDUAL ** 2
    (g,) = torch.autograd.grad(val, X)
    assert torch.all(g == 0.0)


def test_loss_bone_stretched_bone():
    P = tt([[0.0, 0.0, 0.0], [0.35, 0.0, 0.0]])
    assert float(Lo.loss_bone(P, [(0, 1)], [0.25])) == pytest.approx(0.01, abs=1e-15)


@given(st.floats(0.05, 2.0), st.floats(0.05, 2.0))
def test_loss_bone_doubling(length, target):
    P = tt([[0.0, 0.0, 0.0], [0.0, length, 0.0]])
    val = float(Lo.loss_bone(2.0 * P, [(0, 1)], [target]))
    assert val == pytest.approx((2.0 * length - target) ** 2, rel=1e-12, abs=1e-15)


def reference_limb_loss(skeleton, rig, limb, body, t, kp, sigma, endpoints, bones):
    """Independent numpy evaluation of the tracker loss on one sequence."""
    marker_of = {j: m for m, j in enumerate(skeleton.marker_map)}
    own = limb if endpoints is skeleton.limb_endpoints else body
    total = 0.0
    for c, cam in enumerate(rig.cameras):
        uv, _ = project_many(cam, own + t[:, None])
        cols = [marker_of[j] for j in endpoints]
        total += np.sum(sigma[c][:, cols] * np.sum((uv - kp[c][:, cols]) ** 2, axis=-1))
    pos = np.zeros(limb.shape[:1] + (skeleton.n_joints, 3))
    pos[:, list(skeleton.limb_endpoints)] = limb
    pos[:, list(skeleton.body_endpoints)] = body
    for b in bones:
        bone = skeleton.bones[b]
        d = np.linalg.norm(pos[:, bone.proximal] - pos[:, bone.distal], axis=-1)
        total += np.sum((d - skeleton.bone_lengths[b]) ** 2)
    return total


@pytest.mark.parametrize("seed", range(3))
def test_limb_and_body_losses_match_reference(skeleton, rig, data, seed):
    ds, _ = data
    obs = ds.sequences[0]
    rng = np.random.default_rng(seed)
    T = len(obs)
    limb = rng.normal(0.0, 0.4, (T, 8, 3))
    body = rng.normal(0.0, 0.4, (T, 7, 3))
    t = obs.motion.trans + rng.normal(0.0, 0.05, (T, 3))
    args = (tt(t), tt(obs.keypoints), tt(obs.confidence), rig.cameras)
    got = float(Lo.loss_limb(skeleton, tt(limb), *args, body=tt(body)))
    ref = reference_limb_loss(skeleton, rig, limb, body, t, obs.keypoints, obs.confidence,
                              skeleton.limb_endpoints, skeleton.limb_bones)
    assert got == pytest.approx(ref, rel=1e-12)
    got = float(Lo.loss_body(skeleton, tt(limb), tt(body), *args))
    ref = reference_limb_loss(skeleton, rig, limb, body, t, obs.keypoints, obs.confidence,
                              skeleton.body_endpoints, skeleton.body_bones)
    assert got == pytest.approx(ref, rel=1e-12)


def test_limb_loss_is_joint_loss_with_exact_bones(skeleton, rig, data):
    ds, _ = data
    obs = ds.sequences[0]
    pos, _ = gt_joints(skeleton, obs)
    rel = pos - pos[:, :1]
    limb = tt(rel[:, list(skeleton.limb_endpoints)])
    body = tt(rel[:, list(skeleton.body_endpoints)])
    args = (tt(obs.motion.trans), tt(obs.keypoints), tt(obs.confidence), rig.cameras)
    assert float(Lo.loss_limb(skeleton, limb, *args, body=body)) < 1e-12
    assert float(Lo.loss_body(skeleton, limb, body, *args)) < 1e-12


# --------------------------------------------------------------------------
# IK loss


def gt_predictions(batch):
    R = batch.ref_rot.numpy()
    return tt(matrix_to_rotation6d(R)), batch.ref_t.clone()


def test_ik_loss_zero_at_ground_truth(skeleton, rig, data):
    _, batch = data
    th, t = gt_predictions(batch)
    res = Lo.loss_ik(skeleton, th, t, batch, rig.cameras)
    for name, v in res.breakdown().items():
        assert v < 1e-10, name
    assert float(Lo.loss_ik(skeleton, th + 0.3, t + 1.0, batch, rig.cameras, Lo.LossWeights.zero()).total) == 0.0


def test_ik_translation_shift(skeleton, rig, data):
    _, batch = data
    th, t = gt_predictions(batch)
    delta = torch.tensor([0.01, -0.02, 0.005], dtype=D)
    res = Lo.loss_ik(skeleton, th, t + delta, batch, rig.cameras)
    B, T = t.shape[:2]
    assert res.terms["trans"].item() == pytest.approx(B * T * float(delta @ delta), rel=1e-12)
    # a constant shift has no second difference
    assert res.terms["acc"].item() < 1e-10
    assert res.terms["l2d"].item() > 0.0


def test_ik_too_short(skeleton, rig, data):
    _, batch = data
    th, t = gt_predictions(batch)
    with pytest.raises(SequenceTooShort):
        Lo.loss_ik(skeleton, th[:, :2], t[:, :2], batch, rig.cameras)


@settings(max_examples=10)
@given(st.integers(0, 1000))
def test_ik_terms_non_negative(skeleton, rig, data, seed):
    _, batch = data
    g = torch.Generator().manual_seed(seed)
    th = torch.randn(batch.ref_rot.shape[:3] + (6,), dtype=D, generator=g)
    t = batch.ref_t + 0.3 * torch.randn(batch.ref_t.shape, dtype=D, generator=g)
    res = Lo.loss_ik(skeleton, th, t, batch, rig.cameras)
    assert all(v >= 0.0 for v in res.breakdown().values())


def test_ik_matches_numpy_reference(skeleton, rig, data):
    ds, batch = data
    g = torch.Generator().manual_seed(3)
    th6, t = gt_predictions(batch)
    th6 = th6 + 0.05 * torch.randn(th6.shape, dtype=D, generator=g)
    res = Lo.loss_ik(skeleton, th6, t, batch, rig.cameras)
    R = tg.gram_schmidt(th6).numpy()
    sup = list(batch.sensor_bones)
    ori = acc = prior = 0.0
    for b, obs in enumerate(ds.sequences):
        pos, glob = fk_arrays(skeleton, R[b], t[b].numpy())
        prox = [skeleton.bones[i].proximal for i in sup]
        dist = [skeleton.bones[i].distal for i in sup]
        rows = obs.sensor_rows([skeleton.bones[i].name for i in sup])
        ori += np.sum((glob[:, prox] - obs.orientation[:, rows]) ** 2)
        mid = 0.5 * (pos[:, prox] + pos[:, dist])
        a = (mid[2:] - 2 * mid[1:-1] + mid[:-2]) / obs.st ** 2
        acc += np.sum((a - obs.acceleration[1:-1, rows]) ** 2)
        prior += np.sum((R[b] - obs.motion.matrices()) ** 2)
    assert res.terms["ori"].item() == pytest.approx(ori, rel=1e-10)
    assert res.terms["acc"].item() == pytest.approx(acc, rel=1e-10)
    assert res.terms["prior"].item() == pytest.approx(prior, rel=1e-10)


@pytest.mark.parametrize("term", ["l2d", "acc", "ori", "prior", "trans"])
def test_ik_term_gradients(skeleton, rig, term):
    ds = tiny_dataset(skeleton, rig, n=1, frames=4, seed=2, noise=NoiseSpec())
    batch = Lo.make_batch(ds.sequences, skeleton, rig)
    th, t = gt_predictions(batch)
    g = torch.Generator().manual_seed(1)
    leaves = {"theta": th + 0.05 * torch.randn(th.shape, dtype=D, generator=g),
              "t": t + 0.02 * torch.randn(t.shape, dtype=D, generator=g)}
    res = grad_check(leaves, lambda: Lo.loss_ik(skeleton, leaves["theta"], leaves["t"], batch,
                                                rig.cameras).terms[term])
    assert res.passed, res.max_rel_error


def test_weights_validation():
    with pytest.raises(ValueError):
        Lo.LossWeights(acc=-1.0)
