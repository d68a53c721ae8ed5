"""On-disk formats: ``.dnt`` binary tensors, body-model JSON and PPM previews.

A ``.dnt`` file is the 4-byte magic ``DNT1``, one dtype byte (1=f32, 2=f64,
3=u8), one rank byte, ``rank`` little-endian uint64 extents and the row-major
little-endian payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .bodymodel import BodyModel, KinematicTree
from .errors import FormatError, ModelValidationError
from .maps import IuvMap, decode_index

MAGIC = b"DNT1"
MAX_RANK = 8
_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("u1")}
_DTYPES = {np.dtype("float32"): 1, np.dtype("float64"): 2, np.dtype("uint8"): 3}


def encode_tensor(t) -> bytes:
    arr = np.asarray(t)
    code = _DTYPES.get(arr.dtype)
    if code is None:
        raise FormatError(f"unsupported dtype {arr.dtype}; use float32, float64 or uint8")
    if arr.ndim > MAX_RANK:
        raise FormatError(f"rank {arr.ndim} exceeds maximum {MAX_RANK}")
    header = MAGIC + struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_CODES[code]).tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    code, rank = buf[4], buf[5]
    if code not in _CODES:
        raise FormatError(f"unknown dtype code {code}")
    if rank > MAX_RANK:
        raise FormatError(f"rank {rank} exceeds maximum {MAX_RANK}")
    end = 6 + 8 * rank
    if len(buf) < end:
        raise FormatError(f"truncated header: expected {end} bytes, got {len(buf)}")
    shape = struct.unpack(f"<{rank}Q", buf[6:end])
    dtype = _CODES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    actual = len(buf) - end
    if actual != expected:
        kind = "truncated payload" if actual < expected else "trailing bytes after payload"
        raise FormatError(f"{kind}: expected {expected} bytes, got {actual}")
    arr = np.frombuffer(buf, dtype=dtype, offset=end).reshape(shape)
    return arr.astype(dtype.newbyteorder("="), copy=True)


def write_tensor(t, path) -> None:
    Path(path).write_bytes(encode_tensor(t))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# body model JSON

_REQUIRED = (
    "vertices", "faces", "parents", "skin_weights", "shape_dirs",
    "joint_regressor", "keypoint_regressor", "vertex_part", "vertex_uv",
)


def body_model_to_dict(model: BodyModel) -> dict:
    d = {
        "vertices": model.template.tolist(),
        "faces": model.faces.tolist(),
        "parents": list(model.tree.parents),
        "skin_weights": model.skin_weights.tolist(),
        "shape_dirs": model.shape_dirs.reshape(-1).tolist(),
        "joint_regressor": model.joint_regressor.tolist(),
        "keypoint_regressor": model.keypoint_regressor.tolist(),
        "vertex_part": model.vertex_part.tolist(),
        "vertex_uv": model.vertex_uv.tolist(),
        "num_parts": int(model.num_parts),
    }
    if model.pose_dirs is not None:
        d["pose_dirs"] = model.pose_dirs.reshape(-1).tolist()
    return d


def save_body_model(model: BodyModel, path) -> None:
    Path(path).write_text(json.dumps(body_model_to_dict(model), separators=(",", ":")))


def _array(d: dict, key: str, ndim: int | None = None, dtype=np.float64) -> np.ndarray:
    try:
        arr = np.asarray(d[key], dtype=dtype)
    except (TypeError, ValueError) as exc:
        raise ModelValidationError(key, f"not a dense numeric array ({exc})") from None
    if ndim is not None and arr.ndim != ndim and arr.size:
        raise ModelValidationError(key, f"expected a rank-{ndim} array, got rank {arr.ndim}")
    return arr


def body_model_from_dict(d: dict) -> BodyModel:
    missing = [k for k in _REQUIRED if k not in d]
    if missing:
        raise ModelValidationError(missing[0], "missing field")
    V = _array(d, "vertices", 2)
    N = V.shape[0]
    tree = KinematicTree(_array(d, "parents", 1, np.int64).tolist())
    K = len(tree)

    def flat3(key: str, depth: int | None) -> np.ndarray:
        arr = _array(d, key)
        if arr.ndim == 3:
            return arr
        if N == 0 or arr.size % (3 * N):
            raise ModelValidationError(key, f"{arr.size} values do not factor as {N} x 3 x S")
        arr = arr.reshape(N, 3, -1)
        if depth is not None and arr.shape[2] != depth:
            raise ModelValidationError(key, f"expected last extent {depth}, got {arr.shape[2]}")
        return arr

    pose_dirs = flat3("pose_dirs", 9 * (K - 1)) if "pose_dirs" in d else None
    return BodyModel(
        template=V,
        faces=_array(d, "faces", 2, np.int64).reshape(-1, 3),
        tree=tree,
        skin_weights=_array(d, "skin_weights", 2),
        shape_dirs=flat3("shape_dirs", None),
        pose_dirs=pose_dirs,
        joint_regressor=_array(d, "joint_regressor", 2),
        keypoint_regressor=_array(d, "keypoint_regressor", 2),
        vertex_part=_array(d, "vertex_part", 1, np.int64),
        vertex_uv=_array(d, "vertex_uv", 2),
        num_parts=int(d.get("num_parts", K)),
    )


def load_body_model(path) -> BodyModel:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(d, dict):
        raise FormatError(f"{path}: top level must be an object")
    return body_model_from_dict(d)


# ---------------------------------------------------------------------------
# PPM preview


def iuv_to_rgb(m: IuvMap) -> np.ndarray:
    """``h x w x 3`` uint8 image: R from the part index, G from U, B from V."""
    label = decode_index(m)
    rows, cols = np.indices(label.shape)
    uv = m.data[label, rows, cols, 1:3]
    rgb = np.zeros(label.shape + (3,))
    rgb[..., 0] = 255.0 * label / max(m.num_parts, 1)
    rgb[..., 1:] = 255.0 * np.clip(uv, 0.0, 1.0)
    rgb[label == 0] = 0.0
    return np.rint(rgb).astype(np.uint8)


def write_ppm_iuv(m: IuvMap, path) -> None:
    rgb = iuv_to_rgb(m)
    h, w = rgb.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes())
