import numpy as np
import pytest

from densebody.bodymodel import SMPL_TREE, KinematicTree
from densebody.maps import encode_iuv, foreground_bbox
from densebody.roipool import (
    RoiConfig,
    RoiWindow,
    crop_resample,
    jitter,
    kept_parts,
    pool_joint,
    roi_params,
    simplify_partial,
)

CFG = RoiConfig()


def test_roi_params_examples():
    w = roi_params((0.5, 0.5), (0.4, 0.3), CFG, 0)
    assert w.center == (0.5, 0.5) and w.side == pytest.approx(0.3, abs=1e-15)
    assert roi_params((0.2, 0.7), (0.0, 0.0), CFG, 3).side == 0.1
    a = roi_params((0.1, 0.1), (0.2, 0.15), CFG, 5).side - 0.1
    b = roi_params((0.1, 0.1), (0.4, 0.3), CFG, 5).side - 0.1
    assert b == pytest.approx(2 * a, abs=1e-15)


def test_roi_params_hand_computed():
    rng = np.random.default_rng(0)
    for _ in range(20):
        alpha, delta = rng.uniform(0.1, 1.0), rng.uniform(0.0, 0.3)
        wb, hb = rng.uniform(0, 1, size=2)
        cfg = RoiConfig(alpha=(alpha,) * 24, delta=delta)
        win = roi_params((0.3, 0.4), (wb, hb), cfg, 7)
        assert win.side == alpha * max(wb, hb) + delta


def test_roi_translation_equivariance():
    a = roi_params((0.1, 0.2), (0.5, 0.6), CFG, 1)
    b = roi_params((0.6, 0.9), (0.5, 0.6), CFG, 1)
    assert a.side == b.side
    assert np.allclose(np.subtract(b.center, a.center), (0.5, 0.7))


def test_config_validation():
    with pytest.raises(ValueError):
        RoiConfig(out_res=0)
    with pytest.raises(ValueError):
        RoiConfig(delta=-0.1)
    with pytest.raises(ValueError):
        RoiWindow((0.5, 0.5), 0.0)
    with pytest.raises(ValueError):
        roi_params((0, 0), (-0.1, 0.2), CFG, 0)


def test_full_frame_window_reproduces_input():
    src = np.random.default_rng(1).random((4, 12, 12))
    out = crop_resample(src, RoiWindow((0.5, 0.5), 1.0), 12)
    np.testing.assert_allclose(out, src, atol=1e-14)


def test_background_outside():
    m = encode_iuv(np.zeros((20, 20), int), num_parts=24)
    out = crop_resample(m, RoiWindow((0.0, 0.0), 0.5), 16, fill="background")
    np.testing.assert_allclose(out.data[0, ..., 0], 1.0, atol=1e-15)
    assert not out.data[1:].any()
    # zero fill leaves out-of-frame samples empty
    z = crop_resample(m, RoiWindow((-2.0, -2.0), 0.5), 8, fill="zero")
    assert not z.data.any()


def test_constant_map_constant_output():
    src = np.full((2, 10, 10), 0.7)
    out = crop_resample(src, RoiWindow((0.45, 0.55), 0.6), 9)
    np.testing.assert_allclose(out, 0.7, atol=1e-15)


def test_background_fill_needs_map():
    with pytest.raises(ValueError):
        crop_resample(np.zeros((1, 4, 4)), RoiWindow((0.5, 0.5), 0.5), 4, fill="background")


def test_crop_commutes_with_channel_selection(body_map):
    win = RoiWindow((0.45, 0.4), 0.35)
    a = simplify_partial(crop_resample(body_map, win, 20, "background"), 5, SMPL_TREE)
    b = crop_resample(simplify_partial(body_map, 5, SMPL_TREE), win, 20, "background")
    np.testing.assert_allclose(a.data, b.data, atol=1e-15)


def test_cropped_index_sums(body_map):
    out = crop_resample(body_map, RoiWindow((0.5, 0.4), 0.7), 33, "background")
    s = out.data[..., 0].sum(axis=0)
    assert s.min() >= -1e-12 and s.max() <= 1 + 1e-12
    np.testing.assert_allclose(s, 1.0, atol=1e-12)


def test_simplify_examples(body_map):
    assert kept_parts(0, SMPL_TREE) == [1, 2, 3, 4]
    out = simplify_partial(body_map, 0, SMPL_TREE)
    alive = np.flatnonzero(out.data.any(axis=(1, 2, 3)))
    assert set(alive) <= {0, 1, 2, 3, 4}
    assert kept_parts(10, SMPL_TREE) == [8, 11]
    lab = np.arange(25).reshape(5, 5)
    leaf = simplify_partial(encode_iuv(lab, num_parts=24), 10, SMPL_TREE)
    assert np.flatnonzero(leaf.data[..., 0].any(axis=(1, 2))).tolist() == [0, 8, 11]
    again = simplify_partial(out, 0, SMPL_TREE)
    np.testing.assert_array_equal(again.data, out.data)


def test_simplify_needs_table_when_counts_differ():
    m = encode_iuv(np.zeros((4, 4), int), num_parts=5)
    with pytest.raises(ValueError):
        simplify_partial(m, 0, SMPL_TREE)
    tree = KinematicTree([-1, 0, 1])
    out = simplify_partial(m, 2, tree, joint_parts={0: [1], 1: [2, 3], 2: [4, 5]})
    assert out.data.shape == m.data.shape


def test_jitter():
    w = RoiWindow((0.5, 0.5), 0.3)
    assert jitter(w) == w
    assert jitter(w, (0.05, 0.1), seed=4) == jitter(w, (0.05, 0.1), seed=4)
    offsets = np.array([np.subtract(jitter(w, (0.02, 0.0), seed=s).center, w.center) for s in range(10_000)])
    assert np.all(np.abs(offsets.mean(axis=0)) < 0.001)
    assert np.abs(offsets).max() <= 0.02
    with pytest.raises(ValueError):
        jitter(w, (-0.1, 0.0))


def test_pool_joint(body_map, model):
    from densebody.bodymodel import WeakPerspectiveCamera, project_weak_perspective, skin
    from conftest import upright_pose
    _, joints = skin(model, upright_pose(), np.zeros(10), return_joints=True)
    j2d = project_weak_perspective(joints, WeakPerspectiveCamera(0.5, (0.5, 0.5)))
    part, win = pool_joint(body_map, j2d, 15, RoiConfig(out_res=24), SMPL_TREE)
    wb, hb, _ = foreground_bbox(body_map)
    assert win.side == pytest.approx(0.5 * max(wb, hb) + 0.1)
    assert part.data.shape == (25, 24, 24, 3)
    alive = set(np.flatnonzero(part.data[1:, ..., 0].any(axis=(1, 2))) + 1)
    assert alive and alive <= set(kept_parts(15, SMPL_TREE))
