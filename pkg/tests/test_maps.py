import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from densebody.errors import ShapeError
from densebody.maps import (
    DropConfig,
    IuvMap,
    apply_drop,
    block_mask,
    decode_index,
    drop_block,
    drop_unit,
    dropped_fraction,
    encode_iuv,
    foreground_bbox,
    foreground_mask,
    part_drop,
    soft_argmax,
)


def test_iuv_map_shape_checked():
    with pytest.raises(ShapeError):
        IuvMap(np.zeros((3, 4, 4)))
    with pytest.raises(ShapeError):
        encode_iuv(np.full((2, 2), 5), num_parts=4)


def test_decode_examples():
    assert not decode_index(encode_iuv(np.zeros((4, 4), int), num_parts=24)).any()
    lab = np.zeros((4, 4), int)
    lab[1, 2] = 5
    assert decode_index(encode_iuv(lab, num_parts=24))[1, 2] == 5


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.int64, st.tuples(st.integers(1, 8), st.integers(1, 8)), elements=st.integers(0, 24)))
def test_encode_decode_identity(labels):
    np.testing.assert_array_equal(decode_index(encode_iuv(labels, num_parts=24)), labels)


def test_ties_go_to_lowest_way():
    m = encode_iuv(np.zeros((1, 1), int), num_parts=3)
    m.data[2, 0, 0, 0] = 1.0
    assert decode_index(m)[0, 0] == 0


def test_bbox_examples():
    assert foreground_bbox(encode_iuv(np.zeros((56, 56), int), num_parts=24)) is None
    lab = np.zeros((56, 56), int)
    lab[5:15, 10:20] = 7
    w, h, c = foreground_bbox(encode_iuv(lab, num_parts=24))
    assert w == 10 / 56 and h == 10 / 56
    assert c == pytest.approx((15 / 56, 10 / 56))
    w, h, c = foreground_bbox(encode_iuv(np.ones((56, 56), int), num_parts=24))
    assert w == h == 1.0


def test_soft_argmax_examples():
    x, y = soft_argmax(np.zeros((10, 20)))
    assert x == pytest.approx(0.5) and y == pytest.approx(0.5)
    hm = np.zeros((20, 30))
    hm[10, 3] = 50.0
    x, y = soft_argmax(hm)
    assert abs(x - 3.5 / 30) < 1e-6 and abs(y - 10.5 / 20) < 1e-6
    hm = np.full((9, 12), -100.0)
    hm[4, 0] = hm[4, 11] = 5.0
    x, y = soft_argmax(hm)
    assert x == pytest.approx(0.5, abs=1e-12) and y == pytest.approx(4.5 / 9, abs=1e-12)


def _background_and_uv_preserved(before, after):
    np.testing.assert_array_equal(after.data[0], before.data[0])
    alive = after.data[1:, ..., 0] > 0
    np.testing.assert_array_equal(after.data[1:][alive], before.data[1:][alive])


@pytest.mark.parametrize("strategy", ["part", "block", "unit"])
def test_drop_gamma_zero_identity_and_invariants(body_map, strategy):
    np.testing.assert_array_equal(apply_drop(body_map, DropConfig(0.0, strategy)).data, body_map.data)
    cfg = DropConfig(0.5, strategy, rng_seed=3)
    out = apply_drop(body_map, cfg)
    _background_and_uv_preserved(body_map, out)
    np.testing.assert_array_equal(apply_drop(body_map, cfg).data, out.data)
    assert out.data[..., 0].sum(axis=0).max() <= 1.0


def test_part_drop_all(body_map):
    out = part_drop(body_map, DropConfig(1.0, "part"))
    assert not out.data[1:].any()
    np.testing.assert_array_equal(out.data[0], body_map.data[0])
    # dropped pixels are not reassigned to background
    fg = foreground_mask(body_map)
    assert (out.data[:, fg, 0].sum(axis=0) == 0).all()


def test_part_drop_frequency():
    lab = np.arange(25).reshape(5, 5)
    m = encode_iuv(lab, num_parts=24)
    hits = np.zeros(24)
    trials = 10_000
    for s in range(trials):
        out = part_drop(m, DropConfig(0.3, "part", rng_seed=s))
        hits += ~out.data[1:, ..., 0].any(axis=(1, 2))
    assert np.all(np.abs(hits / trials - 0.3) < 0.02)


def test_single_block_geometry():
    seeds = np.zeros((21, 21), bool)
    seeds[10, 10] = True
    mask = block_mask(seeds, 7)
    expect = np.zeros((21, 21), bool)
    expect[7:14, 7:14] = True
    np.testing.assert_array_equal(mask, expect)
    corner = np.zeros((21, 21), bool)
    corner[0, 20] = True
    assert block_mask(corner, 7).sum() == 16
    even = np.zeros((10, 10), bool)
    even[5, 5] = True
    assert block_mask(even, 4).sum() == 16


def test_drop_block_calibration(body_map):
    fr = [dropped_fraction(body_map, drop_block(body_map, DropConfig(0.3, "block", rng_seed=s))) for s in range(1000)]
    assert abs(np.mean(fr) - 0.3) < 0.05


def test_drop_block_zeroes_whole_blocks(body_map):
    out = drop_block(body_map, DropConfig(0.2, "block", rng_seed=1))
    gone = foreground_mask(body_map) & ~out.data[1:, ..., 0].any(axis=0)
    assert gone.sum() > 0
    assert not out.data[1:, gone].any()


def test_drop_unit():
    m = encode_iuv(np.ones((100, 100), int), num_parts=24)
    out = drop_unit(m, DropConfig(1.0, "unit"))
    assert dropped_fraction(m, out) == 1.0
    fr = dropped_fraction(m, drop_unit(m, DropConfig(0.3, "unit", rng_seed=5)))
    assert abs(fr - 0.3) < 0.01


def test_drop_config_validation():
    with pytest.raises(ValueError):
        DropConfig(1.5)
    with pytest.raises(ValueError):
        DropConfig(0.3, "block", block_size=0)
    with pytest.raises(ValueError):
        DropConfig(0.3, "spatial")


def test_drop_empty_foreground():
    m = encode_iuv(np.zeros((8, 8), int), num_parts=24)
    for s in ("part", "block", "unit"):
        np.testing.assert_array_equal(apply_drop(m, DropConfig(0.9, s)).data, m.data)
    assert dropped_fraction(m, m) == 0.0
