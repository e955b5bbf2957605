import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from helpers import chain_skeleton
from vimocap import kinematics as K
from vimocap.errors import DegenerateInput, DimensionMismatch, GimbalLockWarning, NotARotation

angle = st.floats(-3.0, 3.0, allow_nan=False)


def rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# --------------------------------------------------------------------------
# rotations


def test_6d_round_trip_on_random_rotations(rng):
    R = K.random_rotations(1000, rng)
    back = K.rotation6d_to_matrix(K.matrix_to_rotation6d(R))
    assert np.abs(back - R).max() < 1e-12


def test_6d_layout_is_first_two_columns():
    R = Rotation.from_rotvec([0.3, -0.2, 0.9]).as_matrix()
    r6 = K.matrix_to_rotation6d(R)
    np.testing.assert_array_equal(r6[:3], R[:, 0])
    np.testing.assert_array_equal(r6[3:], R[:, 1])


@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_gram_schmidt_scale_invariance(a, b):
    r6 = np.array([0.3, -1.2, 0.5, 0.7, 0.1, -0.4])
    scaled = np.concatenate([a * r6[:3], b * r6[3:]])
    assert np.abs(K.rotation6d_to_matrix(scaled) - K.rotation6d_to_matrix(r6)).max() < 1e-12


def test_gram_schmidt_matches_scipy_polar_of_columns():
    # the first column of the output is the normalized first input column, independent of the second
    r6 = np.array([2.0, 0.0, 0.0, 1.0, 3.0, 0.0])
    np.testing.assert_allclose(K.rotation6d_to_matrix(r6), np.eye(3), atol=1e-15)


def test_degenerate_6d_inputs_raise():
    with pytest.raises(DegenerateInput):
        K.rotation6d_to_matrix(np.array([0.0, 0.0, 0.0, 0.0, 1.0, 0.0]))
    with pytest.raises(DegenerateInput):
        K.rotation6d_to_matrix(np.array([1.0, 0.0, 0.0, 2.0, 0.0, 0.0]))
    with pytest.raises(DimensionMismatch):
        K.rotation6d_to_matrix(np.zeros(5))


def test_matrix_to_6d_rejects_non_rotation():
    with pytest.raises(NotARotation):
        K.matrix_to_rotation6d(np.diag([1.0, 1.0, -1.0]))


def test_euler_convention_is_intrinsic_xyz():
    a, b, c = 0.3, -0.5, 1.1
    ref = Rotation.from_euler("XYZ", [a, b, c]).as_matrix()  # upper case = intrinsic in scipy
    np.testing.assert_allclose(K.euler_to_matrix(np.array([a, b, c])), ref, atol=1e-15)


def test_euler_round_trip_on_random_rotations(rng):
    R = K.random_rotations(1000, rng)
    with warnings.catch_warnings():
        warnings.simplefilter("error", GimbalLockWarning)
        back = K.euler_to_matrix(K.matrix_to_euler(R))
    assert np.abs(back - R).max() < 1e-9


def test_gimbal_lock_warns_and_sets_third_angle_zero():
    R = K.euler_to_matrix(np.array([0.4, np.pi / 2, 0.7]))
    with pytest.warns(GimbalLockWarning):
        e = K.matrix_to_euler(R)
    assert e[2] == 0.0
    assert K.gimbal_mask(R)
    np.testing.assert_allclose(K.euler_to_matrix(e), R, atol=1e-12)


@given(angle, st.floats(-1.5, 1.5), angle)
def test_euler_round_trip_property(a, b, c):
    theta = np.array([a, b, c])
    R = K.euler_to_matrix(theta)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GimbalLockWarning)
        back = K.euler_to_matrix(K.matrix_to_euler(R))
    assert np.abs(back - R).max() < 1e-9


def test_geodesic_distance_known_angle():
    R = Rotation.from_rotvec([0.0, 0.0, 0.25]).as_matrix()
    assert K.geodesic_distance(np.eye(3), R) == pytest.approx(0.25, abs=1e-15)
    assert K.rotation_angle(np.eye(3)) == 0.0


def test_project_to_so3_returns_nearest_rotation(rng):
    R = K.random_rotations(1, rng)[0]
    noisy = R + 1e-3 * rng.normal(size=(3, 3))
    P = K.project_to_so3(noisy)
    assert K.is_rotation(P, 1e-12)
    assert K.geodesic_distance(P, R) < 5e-3


def test_slerp_endpoints_and_midpoint():
    R0 = np.eye(3)
    R1 = rz(1.0)
    np.testing.assert_allclose(K.slerp_matrices(R0, R1, 0.0), R0, atol=1e-15)
    np.testing.assert_allclose(K.slerp_matrices(R0, R1, 1.0), R1, atol=1e-15)
    np.testing.assert_allclose(K.slerp_matrices(R0, R1, 0.5), rz(0.5), atol=1e-15)


# --------------------------------------------------------------------------
# skeleton


def test_default_skeleton_shape(skeleton):
    assert skeleton.n_joints == 19
    assert skeleton.n_markers == 19
    assert skeleton.n_imus == 4
    assert len(skeleton.key_bones) == 7
    assert len(skeleton.limb_endpoints) == 8
    assert len(skeleton.body_endpoints) == 7
    assert len(skeleton.limb_bones) == 4
    assert len(skeleton.body_bones) == 8


def test_skeleton_file_round_trip(skeleton, tmp_path):
    path = tmp_path / "sk.json"
    K.save_skeleton(skeleton, path)
    back = K.load_skeleton(path)
    assert back.joint_names == skeleton.joint_names
    np.testing.assert_array_equal(back.offsets, skeleton.offsets)
    np.testing.assert_allclose(back.limits.lower, skeleton.limits.lower, atol=1e-15)
    assert back.imu_map == skeleton.imu_map
    assert back.to_dict()["format_version"] == 1


def test_skeleton_rejects_bad_version(skeleton):
    doc = skeleton.to_dict()
    doc["format_version"] = 99
    with pytest.raises(ValueError):
        K.SkeletonConfig.from_dict(doc)


def test_key_bone_lengths_use_toe_end_site(skeleton):
    L = dict(zip(K.KEY_BONE_ORDER, skeleton.key_bone_lengths))
    assert L["foot"] == pytest.approx(np.hypot(0.06, 0.14))
    assert L["lowarm"] == pytest.approx(0.25)
    assert L["uparm"] == pytest.approx(0.28)


def test_with_imus_changes_only_the_input_map(skeleton):
    two = skeleton.with_imus(["lowarm_l", "lowarm_r"])
    assert two.n_imus == 2
    assert two.supervision_map == skeleton.supervision_map


def test_joint_limits_root_unbounded(skeleton):
    assert np.all(np.isinf(skeleton.limits.lower[0]))
    theta = np.zeros((skeleton.n_joints, 3))
    assert skeleton.limits.contains(theta)


# --------------------------------------------------------------------------
# forward kinematics


def planar_oracle(L1, L2, a0, a1, a2):
    """Closed form for a root + 2-link chain along x with rotations about z."""
    p1 = L1 * np.array([np.cos(a0), np.sin(a0), 0.0])
    p2 = p1 + L2 * np.array([np.cos(a0 + a1), np.sin(a0 + a1), 0.0])
    return np.stack([np.zeros(3), p1, p2])


def test_fk_planar_chain_matches_closed_form(rng):
    sk = chain_skeleton([0.4, 0.3])
    angles = rng.uniform(-np.pi, np.pi, size=(1000, 3))
    R = np.stack([np.stack([rz(a) for a in row]) for row in angles])
    pos, _ = K.fk_arrays(sk, R, np.zeros((1000, 3)))
    oracle = np.stack([planar_oracle(0.4, 0.3, *row) for row in angles])
    assert np.abs(pos - oracle).max() < 1e-9


def test_fk_rigid_bones(skeleton, rng):
    T = 20
    R = K.random_rotations(T * skeleton.n_joints, rng).reshape(T, skeleton.n_joints, 3, 3)
    pos, _ = K.fk_arrays(skeleton, R, rng.normal(size=(T, 3)))
    d = np.linalg.norm(pos[:, skeleton.bone_distal] - pos[:, skeleton.bone_proximal], axis=-1)
    np.testing.assert_allclose(d, np.broadcast_to(skeleton.bone_lengths, d.shape), atol=1e-12)


def test_fk_global_equivariance(skeleton, rng):
    T = 10
    R = K.random_rotations(T * skeleton.n_joints, rng).reshape(T, skeleton.n_joints, 3, 3)
    t = rng.normal(size=(T, 3))
    G = K.random_rotations(1, rng)[0]
    g = rng.normal(size=3)
    motion = K.MotionSequence.from_matrices(R, t, 30.0)
    moved = K.transform_motion(motion, G, g)
    p0 = K.forward_kinematics(skeleton, motion).joint_positions
    p1 = K.forward_kinematics(skeleton, moved).joint_positions
    np.testing.assert_allclose(p1, p0 @ G.T + g, atol=1e-12)


def test_fk_rest_pose(skeleton):
    pose = K.PoseFrame.identity(skeleton.n_joints)
    fk = K.forward_kinematics(skeleton, pose)
    np.testing.assert_allclose(fk.joint_positions, skeleton.rest_positions(), atol=1e-15)
    assert fk.imu_positions.shape == (4, 3)
    np.testing.assert_allclose(fk.imu_orientations, np.broadcast_to(np.eye(3), (4, 3, 3)))


def test_imu_at_bone_midpoint(skeleton):
    fk = K.forward_kinematics(skeleton, K.PoseFrame.identity(skeleton.n_joints))
    b = skeleton.bones[skeleton.imu_map[0]]
    np.testing.assert_allclose(fk.imu_positions[0], 0.5 * (fk.joint_positions[b.proximal] + fk.joint_positions[b.distal]))


def test_fk_dimension_mismatch(skeleton):
    with pytest.raises(DimensionMismatch):
        K.fk_arrays(skeleton, np.zeros((2, 5, 3, 3)), np.zeros((2, 3)))


def test_motion_euler_round_trip(skeleton, rng):
    T = 4
    R = K.random_rotations(T * skeleton.n_joints, rng).reshape(T, skeleton.n_joints, 3, 3)
    m = K.MotionSequence.from_matrices(R, rng.normal(size=(T, 3)), 60.0)
    back = K.euler_to_motion(K.motion_to_euler(m))
    np.testing.assert_allclose(back.matrices(), m.matrices(), atol=1e-9)
    assert back.fps == 60.0


def test_pose_frame_is_immutable(skeleton):
    pose = K.PoseFrame.identity(skeleton.n_joints)
    with pytest.raises(ValueError):
        pose.theta_6d[0, 0] = 2.0
