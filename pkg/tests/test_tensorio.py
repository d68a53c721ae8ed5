import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from densebody.bodymodel import toy_model
from densebody.errors import FormatError, ModelValidationError
from densebody.maps import encode_iuv
from densebody.tensorio import (
    body_model_from_dict,
    body_model_to_dict,
    decode_tensor,
    encode_tensor,
    iuv_to_rgb,
    load_body_model,
    read_tensor,
    save_body_model,
    write_ppm_iuv,
    write_tensor,
)


def test_zeros_2x3_f64_is_70_bytes(tmp_path):
    p = tmp_path / "z.dnt"
    write_tensor(np.zeros((2, 3)), p)
    assert p.stat().st_size == 70
    out = read_tensor(p)
    assert out.dtype == np.float64 and out.shape == (2, 3) and not out.any()


def test_scalar_f32_layout(tmp_path):
    p = tmp_path / "s.dnt"
    write_tensor(np.float32(1.5), p)
    raw = p.read_bytes()
    assert len(raw) == 10
    assert raw == b"DNT1" + bytes([1, 0]) + bytes.fromhex("0000c03f")
    assert read_tensor(p).shape == ()
    assert read_tensor(p)[()] == np.float32(1.5)


def test_header_fields_little_endian():
    buf = encode_tensor(np.zeros((3, 5), dtype=np.uint8))
    assert buf[:4] == b"DNT1" and buf[4] == 3 and buf[5] == 2
    assert struct.unpack("<2Q", buf[6:22]) == (3, 5)


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(
    dtype=st.sampled_from([np.float32, np.float64, np.uint8]),
    shape=hnp.array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=5),
))
def test_round_trip_values_and_bytes(arr):
    buf = encode_tensor(arr)
    back = decode_tensor(buf)
    assert back.dtype == arr.dtype and back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()
    assert encode_tensor(back) == buf


def test_big_endian_input_is_normalized():
    a = np.arange(6, dtype=">f8").reshape(2, 3)
    back = decode_tensor(encode_tensor(a.astype("<f8")))
    np.testing.assert_array_equal(back, a)


def test_bad_magic(tmp_path):
    p = tmp_path / "x.dnt"
    p.write_bytes(b"XXXX" + bytes(20))
    with pytest.raises(FormatError, match="magic"):
        read_tensor(p)


def test_unknown_dtype_code():
    buf = bytearray(encode_tensor(np.zeros(2)))
    buf[4] = 9
    with pytest.raises(FormatError, match="dtype code"):
        decode_tensor(bytes(buf))


def test_truncated_payload_names_counts():
    buf = encode_tensor(np.zeros((2, 3)))
    with pytest.raises(FormatError, match="expected 48 bytes, got 40"):
        decode_tensor(buf[:-8])


def test_truncated_header():
    with pytest.raises(FormatError, match="header"):
        decode_tensor(encode_tensor(np.zeros((2, 3)))[:10])


def test_rank_limit():
    with pytest.raises(FormatError):
        encode_tensor(np.zeros((1,) * 9))


def test_unsupported_dtype():
    with pytest.raises(FormatError):
        encode_tensor(np.zeros(3, dtype=np.int32))


def test_body_model_round_trip(tmp_path):
    m = toy_model(3)
    p = tmp_path / "m.json"
    save_body_model(m, p)
    back = load_body_model(p)
    assert back.num_joints == 24
    for name in ("template", "faces", "skin_weights", "shape_dirs", "joint_regressor",
                 "keypoint_regressor", "vertex_part", "vertex_uv"):
        np.testing.assert_array_equal(getattr(back, name), getattr(m, name))
    assert back.tree == m.tree


def test_body_model_json_is_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    save_body_model(toy_model(42), a)
    save_body_model(toy_model(42), b)
    assert a.read_bytes() == b.read_bytes()


def _toy_dict():
    return json.loads(json.dumps(body_model_to_dict(toy_model(0))))


def test_skin_row_not_normalized():
    d = _toy_dict()
    d["skin_weights"][5] = [w * 0.9 for w in d["skin_weights"][5]]
    with pytest.raises(ModelValidationError) as e:
        body_model_from_dict(d)
    assert e.value.field == "skin_weights"


def test_root_must_be_minus_one():
    d = _toy_dict()
    d["parents"][0] = 0
    with pytest.raises(ModelValidationError) as e:
        body_model_from_dict(d)
    assert e.value.field == "parents"


def test_parent_cycle():
    d = _toy_dict()
    d["parents"][1] = 4  # 4's parent is 1
    with pytest.raises(ModelValidationError, match="cycle"):
        body_model_from_dict(d)


def test_part_index_out_of_range():
    d = _toy_dict()
    d["vertex_part"][0] = 99
    with pytest.raises(ModelValidationError) as e:
        body_model_from_dict(d)
    assert e.value.field == "vertex_part"


def test_missing_field():
    d = _toy_dict()
    del d["vertex_uv"]
    with pytest.raises(ModelValidationError) as e:
        body_model_from_dict(d)
    assert e.value.field == "vertex_uv"


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(FormatError):
        load_body_model(p)


def test_ppm_background_black(tmp_path):
    m = encode_iuv(np.zeros((4, 6), dtype=int), num_parts=24)
    p = tmp_path / "bg.ppm"
    write_ppm_iuv(m, p)
    raw = p.read_bytes()
    assert raw.startswith(b"P6\n6 4\n255\n")
    assert raw[len(b"P6\n6 4\n255\n"):] == bytes(4 * 6 * 3)


def test_ppm_full_part_white():
    m = encode_iuv(np.full((3, 3), 24), np.ones((3, 3)), np.ones((3, 3)), 24)
    assert (iuv_to_rgb(m) == 255).all()


def test_ppm_56_size(tmp_path):
    m = encode_iuv(np.zeros((56, 56), dtype=int), num_parts=24)
    p = tmp_path / "m.ppm"
    write_ppm_iuv(m, p)
    raw = p.read_bytes()
    header = b"P6\n56 56\n255\n"
    assert raw.startswith(header) and len(raw) - len(header) == 9408
