import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from camfit.bodykin import (
    BodyParams,
    JointSet2D,
    SkeletonTemplate,
    body_height,
    default_template,
    fk_backward,
    fk_batch,
    forward_kinematics,
    heights_batch,
    load_template,
    orthonormalize,
    rodrigues,
    rodrigues_jacobian,
    skew,
)
from camfit.camgeom import rot_y
from camfit.errors import DomainError, ShapeMismatchError
from camfit.fitter import finite_difference_check

TPL = default_template()
K = TPL.joint_count
ARM_BONES = [j - 1 for j in range(K) if TPL.names[j].split("_")[-1] in ("clavicle", "shoulder", "elbow", "wrist")]


def _hat(v):
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])


def _naive_fk(tpl, theta, beta, rb, tb):
    """Joint-by-joint forward kinematics with matrix exponentials."""
    G = [None] * tpl.joint_count
    P = np.zeros((tpl.joint_count, 3))
    G[0] = rb @ expm(_hat(theta[0]))
    for j in range(1, tpl.joint_count):
        p = tpl.parents[j]
        P[j] = P[p] + G[p] @ (math.exp(beta[j - 1]) * tpl.offsets[j])
        G[j] = G[p] @ expm(_hat(theta[j]))
    return P + tb


def _random_params(rng, scale=0.4):
    theta = rng.normal(0, scale, (K, 3))
    beta = rng.normal(0, 0.1, K - 1)
    rb = rodrigues(rng.normal(0, 1.0, 3))
    tb = rng.normal(0, 1.0, 3)
    return BodyParams(theta, beta, rb, tb)


# rotations


@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_rodrigues_matches_matrix_exponential(v):
    v = np.array(v)
    assert np.allclose(rodrigues(v), expm(_hat(v)), atol=1e-12)


def test_rodrigues_small_angles():
    for v in (np.zeros(3), np.array([1e-9, 0, 0]), np.array([3e-7, -2e-7, 1e-7])):
        assert np.allclose(rodrigues(v), expm(_hat(v)), atol=1e-15)


def test_rodrigues_jacobian_matches_differences():
    rng = np.random.default_rng(0)
    W = rng.normal(size=(3, 3))
    for v in list(rng.normal(0, 1, (20, 3))) + [np.zeros(3), np.array([1e-8, 0, 0])]:
        fn = lambda x: (np.sum(W * rodrigues(x)), np.einsum("iab,ab->i", rodrigues_jacobian(x), W))  # noqa: E731
        assert finite_difference_check(fn, v, floor=1e-6) < 1e-6


def test_skew_and_orthonormalize():
    a, b = np.array([1.0, 2, 3]), np.array([-1.0, 0.5, 2])
    assert np.allclose(skew(a) @ b, np.cross(a, b))
    R = rodrigues(np.array([0.3, -0.2, 1.0]))
    noisy = R + 1e-4 * np.random.default_rng(1).normal(size=(3, 3))
    Q = orthonormalize(noisy)
    assert np.allclose(Q.T @ Q, np.eye(3), atol=1e-12) and np.linalg.det(Q) == pytest.approx(1.0)
    assert np.abs(Q - R).max() < 1e-3


# template


def test_default_template_shape():
    assert K == 17
    assert sum(p == -1 for p in TPL.parents) == 1
    assert all(0 <= p < j for j, p in enumerate(TPL.parents) if j)
    assert np.array_equal(TPL.offsets[0], np.zeros(3))


def test_rest_height():
    P = forward_kinematics(TPL, BodyParams.zeros(TPL))
    assert P[:, 1].max() - P[:, 1].min() == pytest.approx(1.70, abs=1e-12)
    assert P[TPL.names.index("head"), 1] > 0  # +y is up
    assert body_height(TPL, np.zeros(K - 1)) == pytest.approx(1.70, abs=1e-12)


def test_template_validation():
    with pytest.raises(DomainError):
        SkeletonTemplate((0, 0), np.zeros((2, 3)))
    with pytest.raises(DomainError):
        SkeletonTemplate((-1, 2, 0), np.zeros((3, 3)))
    with pytest.raises(DomainError):
        SkeletonTemplate((-1, 0), np.ones((2, 3)))
    with pytest.raises(ShapeMismatchError):
        SkeletonTemplate((-1, 0), np.zeros((3, 3)))


def test_template_json_round_trip(tmp_path):
    path = tmp_path / "tpl.json"
    path.write_text(json.dumps(TPL.to_json()))
    back = load_template(path)
    assert back == TPL and hash(back) == hash(TPL)
    assert back != SkeletonTemplate((-1, 0), np.array([[0, 0, 0], [0, 1, 0]]))


# forward kinematics


def test_fk_matches_naive_oracle():
    rng = np.random.default_rng(2)
    for _ in range(20):
        p = _random_params(rng)
        assert np.allclose(forward_kinematics(TPL, p), _naive_fk(TPL, p.theta, p.beta, p.rb, p.tb), atol=1e-12)


def test_fk_rest_pose():
    P = forward_kinematics(TPL, BodyParams.zeros(TPL))
    assert np.allclose(P, TPL.ancestors @ TPL.offsets, atol=1e-15)


def test_fk_translation():
    p = _random_params(np.random.default_rng(3))
    a = forward_kinematics(TPL, p.replace(tb=np.zeros(3)))
    b = forward_kinematics(TPL, p.replace(tb=np.array([1.0, 2.0, 3.0])))
    assert np.allclose(b - a, [1, 2, 3], atol=1e-14)


def test_fk_global_rotation_example():
    R = rot_y(math.pi / 2)
    rest = forward_kinematics(TPL, BodyParams.zeros(TPL))
    assert np.allclose(forward_kinematics(TPL, BodyParams.zeros(TPL, rb=R)), rest @ R.T, atol=1e-12)


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_fk_rotation_equivariance(seed):
    rng = np.random.default_rng(seed)
    p = _random_params(rng).replace(rb=np.eye(3), tb=np.zeros(3))
    R = rodrigues(rng.normal(0, 2, 3))
    assert np.allclose(forward_kinematics(TPL, p.replace(rb=R)), forward_kinematics(TPL, p) @ R.T, atol=1e-12)


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_bone_lengths_independent_of_pose(seed):
    rng = np.random.default_rng(seed)
    p = _random_params(rng, scale=1.5)
    P = forward_kinematics(TPL, p)
    par = np.array(TPL.parents[1:])
    lengths = np.linalg.norm(P[1:] - P[par], axis=1)
    assert np.allclose(lengths, np.exp(p.beta) * np.linalg.norm(TPL.offsets[1:], axis=1), atol=1e-12)


def test_fk_dimension_errors():
    with pytest.raises(ShapeMismatchError):
        fk_batch(TPL, np.zeros((1, K - 1, 3)), np.zeros((1, K - 1)), np.eye(3)[None])
    with pytest.raises(ShapeMismatchError):
        fk_batch(TPL, np.zeros((1, K, 3)), np.zeros((1, K)), np.eye(3)[None])


def test_fk_batch_reuses_rotations():
    rng = np.random.default_rng(4)
    th = rng.normal(0, 0.3, (3, K, 3))
    rb = rodrigues(rng.normal(0, 1, (3, 3)))
    c = fk_batch(TPL, th, np.zeros((3, K - 1)), rb)
    beta = rng.normal(0, 0.1, (3, K - 1))
    assert np.allclose(fk_batch(TPL, th, beta, rb, rotations=c).positions, fk_batch(TPL, th, beta, rb).positions)


def test_fk_backward_matches_differences():
    rng = np.random.default_rng(5)
    for _ in range(10):
        p = _random_params(rng)
        W = rng.normal(size=(K, 3))

        def fn(x):
            th, be = x[: 3 * K].reshape(K, 3), x[3 * K :]
            c = fk_batch(TPL, th[None], be[None], p.rb[None])
            g = fk_backward(TPL, c, W[None])
            return np.sum(W * c.positions[0]), np.concatenate([g["theta"][0].ravel(), g["beta"][0]])

        assert finite_difference_check(fn, np.concatenate([p.theta.ravel(), p.beta])) < 1e-4


def test_fk_backward_orientation_gradient():
    rng = np.random.default_rng(6)
    p = _random_params(rng)
    W = rng.normal(size=(K, 3))
    c = fk_batch(TPL, p.theta[None], p.beta[None], p.rb[None])
    g = fk_backward(TPL, c, W[None], want_theta=False)["rb_delta"][0]
    eps = 1e-6
    for i in range(3):
        d = np.zeros(3)
        d[i] = eps
        fp = np.sum(W * fk_batch(TPL, p.theta[None], p.beta[None], (rodrigues(d) @ p.rb)[None]).positions[0])
        fm = np.sum(W * fk_batch(TPL, p.theta[None], p.beta[None], (rodrigues(-d) @ p.rb)[None]).positions[0])
        assert g[i] == pytest.approx((fp - fm) / (2 * eps), rel=1e-6, abs=1e-8)


# height


def test_height_uniform_scale():
    assert body_height(TPL, np.full(K - 1, math.log(1.1))) == pytest.approx(1.87, abs=1e-9)


def test_height_arm_bones_only():
    beta = np.zeros(K - 1)
    beta[ARM_BONES] = 0.3
    P = forward_kinematics(TPL, BodyParams(np.zeros((K, 3)), beta))
    assert body_height(TPL, beta) == pytest.approx(P[:, 1].max() - P[:, 1].min(), abs=1e-12)
    assert body_height(TPL, beta) == pytest.approx(1.70, abs=1e-12)


def test_height_gradient():
    rng = np.random.default_rng(7)
    for _ in range(20):
        b = rng.normal(0, 0.1, K - 1)
        fn = lambda x: tuple(a[0] for a in heights_batch(TPL, x[None]))  # noqa: E731
        assert finite_difference_check(fn, b) < 1e-6


def test_height_dimension_error():
    with pytest.raises(ShapeMismatchError):
        body_height(TPL, np.zeros(3))


# parameter containers


def test_body_params_validation_and_json():
    p = _random_params(np.random.default_rng(8))
    back = BodyParams.from_json(json.loads(json.dumps(p.to_json())))
    assert np.allclose(back.theta, p.theta) and np.allclose(back.rb, p.rb) and np.allclose(back.tb, p.tb)
    from_angles = BodyParams.from_json({"theta": p.theta.tolist(), "beta": p.beta.tolist(), "rb_angles_deg": p.to_json()["rb_angles_deg"]})
    assert np.allclose(from_angles.rb, p.rb, atol=1e-9)
    with pytest.raises(DomainError):
        p.replace(rb=np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ShapeMismatchError):
        BodyParams(np.zeros(3), np.zeros(2))


def test_joint_set_2d():
    js = JointSet2D.from_rows([[1, 2, 0.5], [3, 4, 1.0]])
    assert js.confidence.tolist() == [0.5, 1.0]
    assert JointSet2D.from_rows([[1, 2]]).confidence.tolist() == [1.0]
    with pytest.raises(DomainError):
        JointSet2D.from_rows([[1, 2, 1.5]])
    with pytest.raises(DomainError):
        JointSet2D(np.array([[np.nan, 0.0]]), np.ones(1))
