import math

import numpy as np
import pytest

from densebody.bodymodel import skin
from densebody.errors import NumericalError, ShapeError
from densebody.metrics import (
    COCO_KAPPA,
    Detection,
    GroundTruth,
    keypoint_ap,
    match_detections,
    mpjpe,
    mpjpe_pa,
    oks,
    procrustes_align,
    pve,
    pve_p,
    pve_s,
)
from densebody.rotation import axis_angle_to_matrix, random_rotations, rotz


def _residual(T, a, b):
    return np.sum((T.apply(a) - b) ** 2)


def test_procrustes_identity_and_exact_fit():
    rng = np.random.default_rng(0)
    P = rng.normal(size=(10, 3))
    T = procrustes_align(P, P)
    assert T.scale == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(T.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(T.translation, 0.0, atol=1e-12)
    G = 2 * P @ rotz(np.pi / 2).T + [1, 2, 3]
    T = procrustes_align(P, G)
    assert T.scale == pytest.approx(2.0, abs=1e-12)
    np.testing.assert_allclose(T.rotation, rotz(np.pi / 2), atol=1e-12)
    np.testing.assert_allclose(T.translation, [1, 2, 3], atol=1e-12)


def test_procrustes_reflection_corrected():
    rng = np.random.default_rng(1)
    P = rng.normal(size=(8, 3))
    T = procrustes_align(P, P * [1, 1, -1])
    assert np.linalg.det(T.rotation) == pytest.approx(1.0, abs=1e-12)


def test_procrustes_stochastic_minimality():
    rng = np.random.default_rng(2)
    P = rng.normal(size=(15, 3))
    G = 1.3 * P @ random_rotations(1, rng)[0].T + [0.2, -0.1, 0.5] + 0.1 * rng.normal(size=P.shape)
    best = _residual(procrustes_align(P, G), P, G)
    Rs = random_rotations(10_000, rng)
    s = rng.uniform(0.5, 2.0, size=10_000)
    t = rng.normal(size=(10_000, 3))
    cand = s[:, None, None] * np.einsum("nij,mj->nmi", Rs, P) + t[:, None, :]
    assert np.all(np.sum((cand - G) ** 2, axis=(1, 2)) >= best)
    assert best <= np.sum((P - G) ** 2)


def test_procrustes_degenerate():
    with pytest.raises(NumericalError):
        procrustes_align(np.zeros((2, 3)), np.zeros((2, 3)))
    line = np.outer(np.arange(5.0), [1, 0, 0])
    with pytest.raises(NumericalError):
        procrustes_align(line, line)
    with pytest.raises(ShapeError):
        procrustes_align(np.zeros((4, 3)), np.zeros((5, 3)))


def test_pve():
    rng = np.random.default_rng(3)
    V = rng.normal(size=(50, 3))
    assert pve(V, V) == 0
    assert pve(np.tile([0.003, 0.004, 0.0], (50, 1)), np.zeros((50, 3))) == 5.0
    assert pve(V + [0.003, 0.004, 0.0], V) == pytest.approx(5.0, abs=1e-9)
    W = rng.normal(size=(50, 3))
    assert pve(V, W) == pytest.approx(1000 * np.mean(np.sqrt(np.sum((V - W) ** 2, axis=1))), rel=1e-12)


def test_pve_s(model):
    rng = np.random.default_rng(4)
    b = rng.normal(size=10)
    th1, th2 = rng.normal(size=(24, 3)), rng.normal(size=(24, 3))
    assert pve_s(model, (th1, b), (th2, b)) == 0
    b2 = b.copy()
    b2[3] += 0.5
    expect = 1000 * np.mean(np.linalg.norm(0.5 * model.shape_dirs[:, :, 3], axis=1))
    assert pve_s(model, (th1, b2), (th2, b)) == pytest.approx(expect, rel=1e-9)
    assert pve_s(model, (rng.normal(size=(24, 3)), b2), (np.zeros((24, 3)), b)) == pve_s(model, (th1, b2), (th2, b))


def test_pve_p(model):
    rng = np.random.default_rng(5)
    th = rng.uniform(-0.5, 0.5, size=(24, 3))
    assert pve_p(model, (th, rng.normal(size=10)), (th, rng.normal(size=10))) == 0
    th2 = rng.uniform(-0.5, 0.5, size=(24, 3))
    a = pve_p(model, (th, np.zeros(10)), (th2, np.zeros(10)))
    assert pve_p(model, (th, rng.normal(size=10)), (th2, rng.normal(size=10))) == a
    R = axis_angle_to_matrix([0.3, -0.2, 0.4])
    root = np.zeros((24, 3))
    root[0] = [0.3, -0.2, 0.4]
    expect = 1000 * np.mean(np.linalg.norm(model.template @ (R - np.eye(3)).T, axis=1))
    assert pve_p(model, (root, np.zeros(10)), (np.zeros((24, 3)), np.zeros(10))) == pytest.approx(expect, rel=1e-9)


def test_mpjpe():
    rng = np.random.default_rng(6)
    J = rng.normal(size=(24, 3))
    assert mpjpe(J, J) == 0
    assert mpjpe(J + [1, 2, 3], J) == pytest.approx(0.0, abs=1e-9)
    K = J.copy()
    K[7] += [0.010, 0.0, 0.0]
    assert mpjpe(K, J) == pytest.approx(10 / 24, abs=1e-9)
    with pytest.raises(IndexError):
        mpjpe(J, J, root_index=30)


def test_mpjpe_pa():
    rng = np.random.default_rng(7)
    for _ in range(10):
        J = rng.normal(size=(24, 3))
        S = rng.uniform(0.3, 3) * J @ random_rotations(1, rng)[0].T + rng.normal(size=3)
        assert mpjpe_pa(S, J) < 1e-9
        noisy = J + 0.05 * rng.normal(size=J.shape)
        assert mpjpe_pa(noisy, J) <= pve(noisy, J) + 1e-9
        T = procrustes_align(noisy, J)
        assert mpjpe_pa(noisy, J) == pytest.approx(pve(T.apply(noisy), J), rel=1e-12)


def test_mpjpe_pa_similarity_invariant():
    rng = np.random.default_rng(8)
    J, P = rng.normal(size=(24, 3)), rng.normal(size=(24, 3))
    base = mpjpe_pa(P, J)
    moved = 0.7 * P @ random_rotations(1, rng)[0].T + [3, -1, 2]
    assert abs(mpjpe_pa(moved, J) - base) < 1e-9


def test_oks_examples():
    rng = np.random.default_rng(9)
    g = rng.random((17, 2))
    vis = np.ones(17)
    assert oks(g, g, vis, 0.2) == 1.0
    area, kappa = 0.3, np.full(17, 0.1)
    vis1 = np.zeros(17)
    vis1[4] = 1
    p = g.copy()
    p[4, 0] += math.sqrt(2 * area * 0.01)
    assert oks(p, g, vis1, area, kappa) == pytest.approx(math.exp(-1), abs=1e-12)
    assert math.exp(-1) == pytest.approx(0.36788, abs=1e-5)
    q = g + 0.05 * rng.normal(size=g.shape)
    half = g + 0.5 * (q - g)
    assert 0 < oks(q, g, vis, 0.2) < oks(half, g, vis, 0.2) < 1
    assert COCO_KAPPA[0] == pytest.approx(0.052)
    with pytest.raises(ValueError):
        oks(g, g, np.zeros(17), 0.2)
    with pytest.raises(ValueError):
        oks(g, g, vis, 0.0)


def _gt(i, x):
    return GroundTruth(1, np.array([[x, 0.0]]), np.array([1]), 0.5)


def _det(score, x, target_oks):
    # one keypoint, kappa 1, area 0.5: OKS = exp(-d^2)
    return Detection(1, score, np.array([[x + math.sqrt(-math.log(target_oks)), 0.0]]))


def _ap_oracle(tp, n_gt):
    tp = list(tp)
    prec, rec = [], []
    hits = 0
    for i, t in enumerate(tp):
        hits += t
        prec.append(hits / (i + 1))
        rec.append(hits / n_gt)
    total = 0.0
    for k in range(101):
        r = k / 100
        total += max([p for p, q in zip(prec, rec) if q >= r - 1e-12], default=0.0)
    return total / 101


def test_three_instance_ap():
    gts = [_gt(0, 0.0), _gt(1, 10.0), _gt(2, 20.0)]
    dets = [_det(0.9, 0.0, 0.93), _det(0.8, 0.0, 0.72), _det(0.7, 10.0, 0.62), _det(0.6, 20.0, 0.82)]
    kappa = [1.0]
    thresholds = np.linspace(0.5, 0.95, 10)
    expected_tp = {}
    for t in thresholds:
        expected_tp[t] = [t <= 0.93, False, t <= 0.62, t <= 0.82]
        np.testing.assert_array_equal(match_detections(dets, gts, t, kappa), expected_tp[t])
    res = keypoint_ap(dets, gts, kappa=kappa)
    assert res["AP50"] == pytest.approx((34 + 67 * 0.75) / 101, abs=1e-12)
    assert res["AP75"] == pytest.approx(0.5, abs=1e-12)
    assert res["AP"] == pytest.approx(np.mean([_ap_oracle(expected_tp[t], 3) for t in thresholds]), abs=1e-12)


def test_single_detection_ap():
    gts = [_gt(0, 0.0)]
    assert keypoint_ap([_det(1.0, 0.0, 0.9)], gts, kappa=[1.0])["AP75"] == 1.0
    r = keypoint_ap([_det(1.0, 0.0, 0.6)], gts, kappa=[1.0])
    assert r["AP50"] == 1.0 and r["AP75"] == 0.0


def test_matching_respects_images_and_invisible_gts():
    gts = [_gt(0, 0.0), GroundTruth(2, np.array([[0.0, 0.0]]), np.array([1]), 0.5),
           GroundTruth(1, np.array([[5.0, 0.0]]), np.array([0]), 0.5)]
    dets = [Detection(2, 0.5, np.array([[0.0, 0.0]])), _det(0.9, 0.0, 0.99)]
    res = keypoint_ap(dets, gts, kappa=[1.0])
    assert res["AP"] == 1.0
