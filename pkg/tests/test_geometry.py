import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evopt.geometry import (BehindCameraError, Intrinsics, Pose, interpolate_pose,
                            interpolate_trajectory, motion_field, pointmap_from_depth, project,
                            se3_exp, se3_log, se3_right_jacobian, slerp, so3_exp_quat, unproject,
                            warp_depth)

K = Intrinsics(100.0, 100.0, 50.0, 50.0)


def random_pose(rng, rot=1.0, trans=2.0):
    w = rng.normal(size=3)
    w *= rng.uniform(0, rot) / np.linalg.norm(w)
    return Pose(so3_exp_quat(w), rng.normal(0, trans, 3))


seeds = st.integers(0, 2**31)


def rotz(angle):
    return Pose(np.array([np.cos(angle / 2), 0, 0, np.sin(angle / 2)]), np.zeros(3))


def test_unproject_examples():
    np.testing.assert_allclose(unproject(np.array([50.0, 50.0]), 2.0, K), [0, 0, 2])
    np.testing.assert_allclose(unproject(np.array([150.0, 50.0]), 1.0, K), [1, 0, 1])
    with pytest.raises(ValueError):
        unproject(np.array([1.0, 1.0]), 0.0, K)


def test_project_examples():
    np.testing.assert_allclose(project(np.array([0.0, 0.0, 1.0]), K), [50, 50])
    np.testing.assert_allclose(project(np.array([1.0, 0.0, 1.0]), K), [150, 50])
    with pytest.raises(BehindCameraError):
        project(np.array([0.0, 0.0, -1.0]), K)


@settings(max_examples=50)
@given(st.floats(-200, 200), st.floats(-200, 200), st.floats(0.01, 100))
def test_project_unproject_roundtrip(x, y, d):
    u = np.array([x, y])
    np.testing.assert_allclose(project(unproject(u, d, K), K), u, atol=1e-9)


def test_intrinsics_positive():
    with pytest.raises(ValueError):
        Intrinsics(0.0, 1.0, 0, 0)


def test_pointmap_examples():
    D = np.ones((4, 5))
    pm = pointmap_from_depth(D, K, Pose.identity())
    np.testing.assert_allclose(pm.points[..., 2], 1.0)
    ys, xs = np.mgrid[0:4, 0:5]
    np.testing.assert_allclose(pm.points[..., 0], (xs - 50) / 100)
    moved = pointmap_from_depth(D, K, Pose(translation=[0, 0, -1]))
    np.testing.assert_allclose(moved.points[..., 2], pm.points[..., 2] - 1)


def test_pointmap_oracle_and_invalid():
    rng = np.random.default_rng(0)
    P = random_pose(rng)
    D = rng.uniform(0.5, 5, (3, 4))
    D[1, 2] = 0.0
    pm = pointmap_from_depth(D, K, P)
    for y in range(3):
        for x in range(4):
            if D[y, x] > 0:
                want = P.R @ unproject(np.array([x, y], float), D[y, x], K) + P.translation
                np.testing.assert_allclose(pm.points[y, x], want, atol=1e-12)
    assert pm.confidence[1, 2] == 0 and pm.confidence.sum() == 11


@settings(max_examples=25)
@given(seeds)
def test_pointmap_equivariance(seed):
    rng = np.random.default_rng(seed)
    P, Q = random_pose(rng), random_pose(rng)
    D = rng.uniform(0.5, 5, (3, 3))
    a = pointmap_from_depth(D, K, Q @ P).points
    b = Q.apply(pointmap_from_depth(D, K, P).points)
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_motion_field_examples():
    rng = np.random.default_rng(1)
    P = random_pose(rng)
    D = rng.uniform(1, 4, (6, 7))
    mf = motion_field(D, K, P, K, P)
    assert mf.valid.all()
    np.testing.assert_allclose(mf.du, 0.0, atol=1e-9)

    b, d = 0.1, 2.0
    mf = motion_field(np.full((6, 7), d), K, Pose.identity(), K, Pose(translation=[b, 0, 0]))
    np.testing.assert_allclose(mf.du[..., 0], -K.fx * b / d, atol=1e-12)
    np.testing.assert_allclose(mf.du[..., 1], 0.0, atol=1e-12)

    behind = motion_field(np.full((2, 2), 1.0), K, Pose.identity(), K, Pose(translation=[0, 0, 2]))
    assert not behind.valid.any()
    inv = np.ones((2, 2))
    inv[0, 0] = -1
    assert not motion_field(inv, K, Pose.identity(), K, Pose.identity()).valid[0, 0]


@settings(max_examples=30)
@given(seeds)
def test_group_axioms(seed):
    rng = np.random.default_rng(seed)
    P, Q, R = (random_pose(rng) for _ in range(3))
    assert ((P @ Q) @ R).allclose(P @ (Q @ R), 1e-9)
    assert (P @ P.inverse()).allclose(Pose.identity(), 1e-9)
    assert abs(np.linalg.norm((P @ Q).rotation) - 1) < 1e-9
    np.testing.assert_allclose((P @ Q).matrix(), P.matrix() @ Q.matrix(), atol=1e-9)


def test_log_examples():
    np.testing.assert_array_equal(se3_log(Pose.identity()), np.zeros(6))
    xi = se3_log(rotz(np.pi / 2))
    np.testing.assert_allclose(xi, [0, 0, np.pi / 2, 0, 0, 0], atol=1e-12)
    # translation part through the closed-form V matrix
    th = np.pi / 2
    W = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 0]]) * th
    V = np.eye(3) + (1 - np.cos(th)) / th ** 2 * W + (th - np.sin(th)) / th ** 3 * W @ W
    t = np.array([1.0, 2.0, 3.0])
    xi = se3_log(Pose(rotz(th).rotation, t))
    np.testing.assert_allclose(xi[3:], np.linalg.solve(V, t), atol=1e-12)


def test_exp_examples():
    assert se3_exp(np.zeros(6)).allclose(Pose.identity(), 0)
    P = se3_exp([0, 0, 0, 1, 2, 3])
    np.testing.assert_allclose(P.translation, [1, 2, 3])
    np.testing.assert_allclose(P.rotation, [1, 0, 0, 0])


def test_exp_branch_continuity():
    d = np.array([0.3, -0.5, 0.8]) / np.linalg.norm([0.3, -0.5, 0.8])
    v = np.array([0.4, 0.1, -0.7])
    lo = se3_exp(np.concatenate([d * (1e-8 * (1 - 1e-9)), v]))
    hi = se3_exp(np.concatenate([d * (1e-8 * (1 + 1e-9)), v]))
    assert np.abs(lo.rotation - hi.rotation).max() < 1e-12
    assert np.abs(lo.translation - hi.translation).max() < 1e-12


def test_exp_log_roundtrip_100():
    rng = np.random.default_rng(2)
    err = 0.0
    for _ in range(100):
        P = random_pose(rng, rot=np.pi - 1e-3)
        Q = se3_exp(se3_log(P))
        err = max(err, np.abs(Q.matrix() - P.matrix()).max())
    assert err < 1e-9


@settings(max_examples=60)
@given(seeds, st.floats(0, np.pi - 1e-6))
def test_log_exp_inverse(seed, th):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=3)
    w = w / np.linalg.norm(w) * th
    xi = np.concatenate([w, rng.normal(size=3)])
    np.testing.assert_allclose(se3_log(se3_exp(xi)), xi, atol=1e-6 if th > 3.1 else 1e-9)


def test_right_jacobian_first_order():
    rng = np.random.default_rng(3)
    xi = rng.normal(size=6)
    d = rng.normal(size=6) * 1e-6
    lhs = se3_exp(xi + d)
    rhs = se3_exp(xi) @ se3_exp(se3_right_jacobian(xi) @ d)
    assert np.abs(lhs.matrix() - rhs.matrix()).max() < 1e-10


def test_interpolate_examples():
    rng = np.random.default_rng(4)
    A, B = random_pose(rng), random_pose(rng)
    assert interpolate_pose(A, 1.0, B, 2.0, 1.0) is A
    mid = interpolate_pose(Pose.identity(), 0.0, rotz(np.pi / 2), 1.0, 0.5)
    assert mid.allclose(rotz(np.pi / 4), 1e-12)
    mid = interpolate_pose(Pose.identity(), 0.0, Pose(translation=[2, 4, 6]), 1.0, 0.5)
    np.testing.assert_allclose(mid.translation, [1, 2, 3])
    with pytest.raises(IndexError):
        interpolate_pose(A, 0.0, B, 1.0, 1.5)
    with pytest.raises(ValueError):
        interpolate_pose(A, 1.0, B, 1.0, 1.0)


def test_slerp_shortest_arc():
    q0 = rotz(0.1).rotation
    q1 = -rotz(0.3).rotation
    np.testing.assert_allclose(slerp(q0, q1, 0.5), rotz(0.2).rotation, atol=1e-12)


@settings(max_examples=50)
@given(seeds, st.floats(0, 1))
def test_slerp_unit_norm(seed, a):
    rng = np.random.default_rng(seed)
    q0, q1 = random_pose(rng, 3).rotation, random_pose(rng, 3).rotation
    assert abs(np.linalg.norm(slerp(q0, q1, a)) - 1) < 1e-12


def test_interpolate_trajectory_span():
    poses = [Pose(translation=[i, 0, 0]) for i in range(3)]
    np.testing.assert_allclose(interpolate_trajectory([0, 1, 2], poses, 1.5).translation, [1.5, 0, 0])
    assert interpolate_trajectory([0, 1, 2], poses, 2.0) is poses[2]
    with pytest.raises(IndexError):
        interpolate_trajectory([0, 1, 2], poses, -0.1)


def test_warp_examples():
    P = Pose(translation=[0.3, -1, 2])
    X = np.array([1.0, 2.0, 3.0])
    np.testing.assert_allclose(warp_depth(X, P, P), X)
    got = warp_depth(np.array([5.0, 0, 0]), Pose(translation=[1, 0, 0]), Pose.identity())
    np.testing.assert_allclose(got, [4, 0, 0])
    with pytest.raises(ValueError):
        warp_depth(X, P, P, form="other")


def test_warp_tracks_rigid_point():
    # world-to-camera poses make the printed form exact; camera-to-world
    # poses need the standard form
    rng = np.random.default_rng(5)
    times = np.linspace(0, 1, 6)
    c2w = [random_pose(rng, 0.5, 1.0) for _ in times]
    w2c = [P.inverse() for P in c2w]
    Xw = rng.normal(size=(20, 3)) + [0, 0, 5]
    for t_d, t_i in ((0.13, 0.71), (0.5, 0.2), (0.95, 0.05)):
        Cd, Ci = (interpolate_trajectory(times, c2w, t) for t in (t_d, t_i))
        Wd, Wi = (interpolate_trajectory(times, w2c, t) for t in (t_d, t_i))
        X_d = Wd.apply(Xw)
        np.testing.assert_allclose(warp_depth(X_d, Wd, Wi, "printed"), Wi.apply(Xw), atol=1e-9)
        X_d = Cd.inverse().apply(Xw)
        np.testing.assert_allclose(warp_depth(X_d, Cd, Ci, "standard"), Ci.inverse().apply(Xw),
                                   atol=1e-9)
