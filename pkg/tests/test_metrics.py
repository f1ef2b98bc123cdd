import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from camfit.camgeom import euler_rotation
from camfit.errors import DegenerateInputError, DomainError, ShapeMismatchError
from camfit.metrics import (
    BucketSpec,
    EvalSample,
    angular_error,
    bucket_breakdown,
    format_table,
    mpjpe,
    pa_mpjpe,
    pa_pve,
    procrustes_align,
    pve,
    w_mpjpe,
    w_pve,
)


def _points(seed, n=17):
    return np.random.default_rng(seed).normal(0, 0.5, (n, 3))


def _random_similarity(rng):
    R = Rotation.random(random_state=rng).as_matrix()
    return math.exp(rng.uniform(-2, 2)), R, rng.normal(0, 5, 3)


# alignment


def test_align_identity():
    X = _points(0)
    s, R, t = procrustes_align(X, X)
    assert s == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(R, np.eye(3), atol=1e-12) and np.allclose(t, 0, atol=1e-12)


def test_align_recovers_known_transform():
    X = _points(1)
    R0 = euler_rotation(0.3, -0.5, 1.2)
    t0 = np.array([1.0, -2.0, 0.5])
    s, R, t = procrustes_align(X, 2 * X @ R0.T + t0)
    assert s == pytest.approx(2.0, abs=1e-9)
    assert np.allclose(R, R0, atol=1e-9) and np.allclose(t, t0, atol=1e-9)
    assert np.linalg.det(R) == pytest.approx(1.0)


def test_align_beats_random_similarities():
    rng = np.random.default_rng(2)
    X, Y = _points(3), _points(4)
    best = procrustes_align(X, Y)
    res = np.sum((best.apply(X) - Y) ** 2)
    for _ in range(1000):
        s, R, t = _random_similarity(rng)
        assert res <= np.sum((s * X @ R.T + t - Y) ** 2) + 1e-12


def test_align_handles_reflection():
    X = _points(5)
    Y = X * [1, 1, -1]  # mirror image: the best proper rotation is not a reflection
    _, R, _ = procrustes_align(X, Y)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


def test_align_degenerate_inputs():
    with pytest.raises(DegenerateInputError):
        procrustes_align(np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(DegenerateInputError):
        procrustes_align(np.ones((5, 3)), _points(6, 5))
    line = np.outer(np.arange(5.0), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateInputError):
        procrustes_align(line, _points(7, 5))
    with pytest.raises(ShapeMismatchError):
        procrustes_align(_points(8, 5), _points(8, 6))


# joint errors


def test_mpjpe_units():
    gt = _points(9)
    assert mpjpe(gt + [0.01, 0, 0], gt) == pytest.approx(10.0, abs=1e-9)


def test_pa_mpjpe_examples():
    gt = _points(10)
    assert pa_mpjpe(gt, gt) == pytest.approx(0.0, abs=1e-9)
    s, R, t = _random_similarity(np.random.default_rng(11))
    assert pa_mpjpe(s * gt @ R.T + t, gt) < 1e-9
    pred = gt.copy()
    pred[3] += [0.01, 0, 0]
    al = procrustes_align(pred, gt)
    expected = np.mean(np.linalg.norm(al.scale * pred @ al.rotation.T + al.translation - gt, axis=1)) * 1000
    assert pa_mpjpe(pred, gt) == pytest.approx(expected, rel=1e-12)
    # aligned squared error <= unaligned squared error, so the mean is bounded by the RMS
    assert 0 < pa_mpjpe(pred, gt) <= math.sqrt(10.0**2 / len(gt)) + 1e-9


@settings(max_examples=50)
@given(st.integers(0, 100_000))
def test_pa_zero_under_similarity(seed):
    rng = np.random.default_rng(seed)
    gt = rng.normal(0, 0.5, (17, 3))
    s, R, t = _random_similarity(rng)
    assert pa_mpjpe(s * gt @ R.T + t, gt) < 1e-9


def test_w_mpjpe_examples():
    gt = _points(12)
    assert w_mpjpe(EvalSample(gt, gt)) == 0.0
    Rc = euler_rotation(0.2, -0.05, 1.0)
    assert w_mpjpe(EvalSample(gt @ Rc.T, gt, "camera", Rc)) < 1e-9
    shifted = EvalSample(gt + [0.01, 0, 0], gt)
    assert w_mpjpe(shifted, root_align=True) == pytest.approx(0.0, abs=1e-9)
    assert w_mpjpe(shifted, root_align=False) == pytest.approx(10.0, abs=1e-9)


def test_w_mpjpe_camera_variant_matches_world_variant():
    rng = np.random.default_rng(13)
    for _ in range(100):
        gt = rng.normal(0, 0.5, (17, 3))
        world_pred = gt + rng.normal(0, 0.03, gt.shape)
        Rc = Rotation.random(random_state=rng).as_matrix()
        cam = EvalSample(world_pred @ Rc.T, gt, "camera", Rc)
        for root in (True, False):
            assert abs(w_mpjpe(cam, root) - w_mpjpe(EvalSample(world_pred, gt), root)) < 1e-9


def test_alignment_order_on_realistic_errors():
    rng = np.random.default_rng(14)
    for _ in range(100):
        gt = rng.normal(0, 0.4, (17, 3))
        pred = gt + rng.normal(0, 0.2, 3) + rng.normal(0, 0.03, gt.shape)
        s = EvalSample(pred, gt)
        assert pa_mpjpe(pred, gt) <= w_mpjpe(s, True) <= w_mpjpe(s, False)


def test_camera_sample_needs_rotation():
    gt = _points(15)
    with pytest.raises(DomainError):
        w_mpjpe(EvalSample(gt, gt, "camera"))
    with pytest.raises(DomainError):
        EvalSample(gt, gt, "screen")
    with pytest.raises(ShapeMismatchError):
        EvalSample(gt, gt, "camera", np.eye(2))


def test_vertex_aliases():
    assert pve is mpjpe and pa_pve is pa_mpjpe and w_pve is w_mpjpe
    verts = _points(16, 200)
    assert pve(verts + [0, 0.002, 0], verts) == pytest.approx(2.0)


# angles


def test_angular_error_examples():
    assert angular_error(92, 90) == 2
    assert angular_error(359, 1) == pytest.approx(2.0)
    assert np.mean(angular_error(np.array([1.0, 93.0]), np.array([0.0, 90.0]))) == pytest.approx(2.0)


@given(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4))
def test_angular_error_symmetric_and_bounded(a, b):
    e = angular_error(a, b)
    assert 0 <= e <= 180
    assert e == pytest.approx(angular_error(b, a), abs=1e-9)


# buckets

SPEC = BucketSpec((0, 500, 1000), (-30, 0, 30))


def _sample(focal, pitch):
    p = np.zeros((3, 3))
    return EvalSample(p, p, focal_px=focal, pitch_deg=pitch)


def test_buckets_single_bucket_mean():
    samples = [_sample(100 + i, -10) for i in range(5)]
    vals = [1.0, 2.0, 3.0, 4.0, 10.0]
    rows = bucket_breakdown(samples, vals, SPEC)
    focal = [r for r in rows if r.axis == "focal" and r.count]
    assert len(focal) == 1 and focal[0].mean == pytest.approx(np.mean(vals))


def test_buckets_empty_mean_absent_and_overflow():
    samples = [_sample(100, -10), _sample(600, 10), _sample(5000, 45), _sample(-1, -40)]
    rows = bucket_breakdown(samples, [10, 20, 30, 40], SPEC)
    focal = [r for r in rows if r.axis == "focal"]
    assert [r.count for r in focal] == [1, 1, 1, 1]
    assert focal[0].overflow and focal[-1].overflow and focal[-1].mean == 30
    assert sum(r.count for r in rows if r.axis == "pitch") == len(samples)
    empty = bucket_breakdown([_sample(100, -10)], [5.0], SPEC)
    assert any(r.count == 0 and r.mean is None for r in empty)
    assert all(r.to_json()["mean"] is None for r in empty if r.count == 0)


def test_buckets_half_open_edges():
    rows = bucket_breakdown([_sample(500, 0)], [1.0], SPEC)
    hit = [r for r in rows if r.count]
    assert (hit[0].lo, hit[0].hi) == (500, 1000) and (hit[1].lo, hit[1].hi) == (0, 30)


def test_buckets_reconstruct_overall_mean():
    samples = [_sample(100, -10), _sample(200, -10), _sample(600, 10), _sample(700, 10)]
    rows = bucket_breakdown(samples, [10, 10, 20, 20], SPEC)
    focal = [r for r in rows if r.axis == "focal" and r.count]
    total = sum(r.mean * r.count for r in focal) / sum(r.count for r in focal)
    assert total == 15


def test_bucket_spec_validation_and_json():
    with pytest.raises(DomainError):
        BucketSpec((0, 0), (1, 2))
    with pytest.raises(DomainError):
        BucketSpec((0,), (1, 2))
    assert BucketSpec.from_json(SPEC.to_json()) == SPEC
    with pytest.raises(ShapeMismatchError):
        bucket_breakdown([_sample(1, 1)], [1, 2], SPEC)


def test_format_table():
    rows = bucket_breakdown([_sample(100, -10)], [5.0], SPEC)
    text = format_table(rows)
    lines = text.strip().split("\n")
    assert len(lines) == len(rows) + 1
    assert "5.000" in text and "-" in lines[-1]
