"""Rotation representations: axis-angle, 3x3 matrices and the 6D (two-column) form.

All functions accept leading batch dimensions and compute in float64.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError

ORTHO_TOL = 1e-6
_NEAR_PI = 1e-3


def _f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def skew(v: np.ndarray) -> np.ndarray:
    v = _f64(v)
    z = np.zeros(v.shape[:-1])
    x, y, w = v[..., 0], v[..., 1], v[..., 2]
    return np.stack(
        [np.stack([z, -w, y], -1), np.stack([w, z, -x], -1), np.stack([-y, x, z], -1)],
        axis=-2,
    )


def axis_angle_to_matrix(v) -> np.ndarray:
    """Rodrigues' formula. ``(..., 3) -> (..., 3, 3)``; a zero vector maps to identity."""
    v = _f64(v)
    angle = np.linalg.norm(v, axis=-1)[..., None, None]
    K = skew(v)
    # sin(a)/a and (1-cos(a))/a^2 with series fallbacks near zero
    small = angle < 1e-8
    safe = np.where(small, 1.0, angle)
    a = np.where(small, 1.0 - angle**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - angle**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + a * K + b * (K @ K)


def orthogonality_residual(R) -> np.ndarray:
    """Frobenius norm of ``R R^T - I``; zero exactly for orthogonal matrices."""
    R = _f64(R)
    d = R @ np.swapaxes(R, -1, -2) - np.eye(3)
    return np.sqrt(np.sum(d * d, axis=(-2, -1)))


def _check_orthogonal(R: np.ndarray, what: str) -> None:
    res = orthogonality_residual(R)
    if np.any(~np.isfinite(res)) or np.any(res >= ORTHO_TOL):
        raise NumericalError(f"{what}: non-orthogonal input (residual {np.max(res):.3g})")


def _matrix_to_axis_angle_single(R: np.ndarray) -> np.ndarray:
    w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    sin_a = np.linalg.norm(w)
    cos_a = 0.5 * (np.trace(R) - 1.0)
    angle = np.arctan2(sin_a, cos_a)
    if angle < np.pi - _NEAR_PI:
        if sin_a < 1e-300:
            return np.zeros(3)
        return w * (angle / sin_a)
    # near pi the antisymmetric part vanishes; read the axis from the symmetric part
    S = 0.5 * (R + R.T)
    aat = (S - cos_a * np.eye(3)) / (1.0 - cos_a)
    i = int(np.argmax(np.diag(aat)))  # argmax breaks ties by first index
    axis = aat[:, i] / np.sqrt(aat[i, i])
    axis /= np.linalg.norm(axis)
    if axis @ w < 0:
        axis = -axis
    return axis * angle


def matrix_to_axis_angle(R) -> np.ndarray:
    """Inverse of :func:`axis_angle_to_matrix` with the angle in ``[0, pi]``."""
    R = _f64(R)
    _check_orthogonal(R, "matrix_to_axis_angle")
    flat = R.reshape(-1, 3, 3)
    out = np.stack([_matrix_to_axis_angle_single(r) for r in flat]) if len(flat) else np.zeros((0, 3))
    return out.reshape(R.shape[:-2] + (3,))


def sixd_to_matrix(r) -> np.ndarray:
    """Gram-Schmidt on the two stacked 3-vectors; they become the first two columns."""
    r = _f64(r)
    a1, a2 = r[..., :3], r[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 < 1e-12):
        raise NumericalError("sixd_to_matrix: zero first vector")
    b1 = a1 / n1
    u2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(u2, axis=-1, keepdims=True)
    if np.any(n2 <= 1e-12 * np.maximum(np.linalg.norm(a2, axis=-1, keepdims=True), 1e-300)):
        raise NumericalError("sixd_to_matrix: vectors are zero or parallel")
    b2 = u2 / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def matrix_to_sixd(R) -> np.ndarray:
    R = _f64(R)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def geodesic_distance(R1, R2) -> np.ndarray:
    """Angle in radians of the relative rotation ``R1^T R2``."""
    R1, R2 = _f64(R1), _f64(R2)
    _check_orthogonal(R1, "geodesic_distance")
    _check_orthogonal(R2, "geodesic_distance")
    tr = np.trace(np.swapaxes(R1, -1, -2) @ R2, axis1=-2, axis2=-1)
    return np.arccos(np.clip(0.5 * (tr - 1.0), -1.0, 1.0))


def project_to_so3(M) -> np.ndarray:
    """Nearest rotation in Frobenius norm (SVD polar factor with det forced to +1)."""
    M = _f64(M)
    U, S, Vt = np.linalg.svd(M)
    if np.any(~np.isfinite(S)) or np.any(S[..., -1] <= 1e-12 * np.maximum(S[..., 0], 1e-300)):
        raise NumericalError("project_to_so3: singular input")
    d = np.sign(np.linalg.det(U @ Vt))
    D = np.ones(S.shape)
    D[..., -1] = d
    return (U * D[..., None, :]) @ Vt


def random_rotations(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotations via QR of Gaussian matrices."""
    Q, Rq = np.linalg.qr(rng.standard_normal((n, 3, 3)))
    Q = Q * np.sign(np.diagonal(Rq, axis1=-2, axis2=-1))[:, None, :]
    flip = np.linalg.det(Q) < 0
    Q[flip, :, 0] *= -1
    return Q


def rotx(a: float) -> np.ndarray:
    return axis_angle_to_matrix([a, 0.0, 0.0])


def roty(a: float) -> np.ndarray:
    return axis_angle_to_matrix([0.0, a, 0.0])


def rotz(a: float) -> np.ndarray:
    return axis_angle_to_matrix([0.0, 0.0, a])
