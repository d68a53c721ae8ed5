"""SMPL-style parametric body: shape blend, forward kinematics and linear blend skinning.

Also builds a deterministic capsule mannequin on the 24-joint SMPL tree so the
rest of the package can be exercised without licensed assets.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import ModelValidationError, NumericalError, ShapeError
from .rotation import axis_angle_to_matrix

SMPL_PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21)

SMPL_JOINT_NAMES = (
    "pelvis", "l_hip", "r_hip", "spine1", "l_knee", "r_knee", "spine2", "l_ankle",
    "r_ankle", "spine3", "l_foot", "r_foot", "neck", "l_collar", "r_collar", "head",
    "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist", "l_hand", "r_hand",
)


class KinematicTree:
    """Joint hierarchy given by a parent array with the root at index 0."""

    def __init__(self, parents: Sequence[int]):
        parents = tuple(int(p) for p in parents)
        K = len(parents)
        if K == 0:
            raise ModelValidationError("parents", "empty kinematic tree")
        if parents[0] != -1:
            raise ModelValidationError("parents", "parents[0] must be -1 (root at index 0)")
        for k, p in enumerate(parents[1:], start=1):
            if p == -1:
                raise ModelValidationError("parents", f"second root at joint {k}")
            if not 0 <= p < K or p == k:
                raise ModelValidationError("parents", f"joint {k} has invalid parent {p}")
        # every walk to the root must terminate
        for k in range(K):
            seen, j = set(), k
            while j != -1:
                if j in seen:
                    raise ModelValidationError("parents", f"cycle through joint {k}")
                seen.add(j)
                j = parents[j]
        self.parents = parents

    def __len__(self) -> int:
        return len(self.parents)

    def __eq__(self, other) -> bool:
        return isinstance(other, KinematicTree) and self.parents == other.parents

    def __repr__(self) -> str:
        return f"KinematicTree({list(self.parents)})"

    def _check(self, k: int) -> None:
        if not 0 <= k < len(self):
            raise IndexError(f"joint index {k} out of range for K={len(self)}")

    def ancestors(self, k: int) -> list[int]:
        """Proper ancestors ordered parent, grandparent, ..., root."""
        self._check(k)
        out = []
        j = self.parents[k]
        while j != -1:
            out.append(j)
            j = self.parents[j]
        return out

    def children(self, k: int) -> list[int]:
        self._check(k)
        return [j for j, p in enumerate(self.parents) if p == k]

    def parent(self, k: int) -> int:
        self._check(k)
        return self.parents[k]

    @cached_property
    def order(self) -> tuple[int, ...]:
        """Breadth-first order from the root; parents always precede children."""
        out, queue = [], deque([0])
        while queue:
            k = queue.popleft()
            out.append(k)
            queue.extend(self.children(k))
        return tuple(out)

    def incidence(self) -> np.ndarray:
        """Undirected parent/child adjacency, zero diagonal."""
        K = len(self)
        A = np.zeros((K, K))
        for k, p in enumerate(self.parents):
            if p >= 0:
                A[k, p] = A[p, k] = 1.0
        return A

    def distances(self) -> np.ndarray:
        """All-pairs hop distance along the tree."""
        K = len(self)
        nbrs = [np.flatnonzero(row) for row in self.incidence()]
        D = np.full((K, K), -1, dtype=np.int64)
        for s in range(K):
            D[s, s] = 0
            queue = deque([s])
            while queue:
                u = queue.popleft()
                for v in nbrs[u]:
                    if D[s, v] < 0:
                        D[s, v] = D[s, u] + 1
                        queue.append(v)
        return D


SMPL_TREE = KinematicTree(SMPL_PARENTS)


@dataclass(frozen=True)
class WeakPerspectiveCamera:
    s: float
    t: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.s > 0:
            raise NumericalError(f"camera scale must be positive, got {self.s}")


@dataclass
class BodyModel:
    """Immutable container for every quantity the deformation needs.

    ``shape_dirs`` is ``N x 3 x S``; ``pose_dirs`` is ``N x 3 x 9(K-1)`` or None.
    Part labels run from 1 to ``num_parts``; 0 is reserved for background.
    """

    template: np.ndarray
    faces: np.ndarray
    tree: KinematicTree
    skin_weights: np.ndarray
    shape_dirs: np.ndarray
    joint_regressor: np.ndarray
    keypoint_regressor: np.ndarray
    vertex_part: np.ndarray
    vertex_uv: np.ndarray
    pose_dirs: np.ndarray | None = None
    num_parts: int | None = None

    def __post_init__(self):
        self.template = np.asarray(self.template, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        self.skin_weights = np.asarray(self.skin_weights, dtype=np.float64)
        self.shape_dirs = np.asarray(self.shape_dirs, dtype=np.float64)
        self.joint_regressor = np.asarray(self.joint_regressor, dtype=np.float64)
        self.keypoint_regressor = np.asarray(self.keypoint_regressor, dtype=np.float64)
        self.vertex_part = np.asarray(self.vertex_part, dtype=np.int64)
        self.vertex_uv = np.asarray(self.vertex_uv, dtype=np.float64)
        if self.pose_dirs is not None:
            self.pose_dirs = np.asarray(self.pose_dirs, dtype=np.float64)
        if self.num_parts is None:
            self.num_parts = len(self.tree)
        self.validate()

    @property
    def num_vertices(self) -> int:
        return self.template.shape[0]

    @property
    def num_joints(self) -> int:
        return len(self.tree)

    @property
    def num_betas(self) -> int:
        return self.shape_dirs.shape[2]

    def validate(self) -> None:
        N, K = self.template.shape[0], len(self.tree)
        if self.template.ndim != 2 or self.template.shape[1] != 3:
            raise ModelValidationError("vertices", f"expected N x 3, got {self.template.shape}")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= N):
            raise ModelValidationError("faces", "face index outside vertex range")
        W = self.skin_weights
        if W.shape != (N, K):
            raise ModelValidationError("skin_weights", f"expected {(N, K)}, got {W.shape}")
        if np.any(W < 0):
            raise ModelValidationError("skin_weights", "negative skinning weight")
        bad = np.flatnonzero(np.abs(W.sum(axis=1) - 1.0) > 1e-9)
        if bad.size:
            raise ModelValidationError(
                "skin_weights", f"row {bad[0]} sums to {W[bad[0]].sum():.12g}, expected 1"
            )
        if self.shape_dirs.ndim != 3 or self.shape_dirs.shape[:2] != (N, 3):
            raise ModelValidationError("shape_dirs", f"expected N x 3 x S, got {self.shape_dirs.shape}")
        if self.pose_dirs is not None and self.pose_dirs.shape != (N, 3, 9 * (K - 1)):
            raise ModelValidationError("pose_dirs", f"expected {(N, 3, 9 * (K - 1))}, got {self.pose_dirs.shape}")
        if self.joint_regressor.shape != (K, N):
            raise ModelValidationError("joint_regressor", f"expected {(K, N)}, got {self.joint_regressor.shape}")
        bad = np.flatnonzero(np.abs(self.joint_regressor.sum(axis=1) - 1.0) > 1e-6)
        if bad.size:
            raise ModelValidationError("joint_regressor", f"row {bad[0]} does not sum to 1")
        if self.keypoint_regressor.ndim != 2 or self.keypoint_regressor.shape[1] != N:
            raise ModelValidationError("keypoint_regressor", f"expected J x {N}, got {self.keypoint_regressor.shape}")
        if self.vertex_part.shape != (N,):
            raise ModelValidationError("vertex_part", f"expected {N} labels")
        if N and (self.vertex_part.min() < 1 or self.vertex_part.max() > self.num_parts):
            raise ModelValidationError("vertex_part", f"part index outside 1..{self.num_parts}")
        if self.vertex_uv.shape != (N, 2):
            raise ModelValidationError("vertex_uv", f"expected {(N, 2)}, got {self.vertex_uv.shape}")
        if np.any(self.vertex_uv < 0) or np.any(self.vertex_uv > 1):
            raise ModelValidationError("vertex_uv", "UV outside [0, 1]")

    @cached_property
    def face_part(self) -> np.ndarray:
        """Part label per face: majority vertex label, ties to the lowest label."""
        if not len(self.faces):
            return np.zeros(0, dtype=np.int64)
        labels = self.vertex_part[self.faces]
        a, b, c = labels[:, 0], labels[:, 1], labels[:, 2]
        out = np.minimum(np.minimum(a, b), c)
        out = np.where((a == b) | (a == c), a, out)
        out = np.where(b == c, b, out)
        return out


def _betas(model: BodyModel, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    if beta.shape[0] != model.num_betas:
        raise ShapeError(f"beta has {beta.shape[0]} entries, model expects {model.num_betas}")
    return beta


def as_rotations(theta, K: int) -> np.ndarray:
    """Accept ``K x 3`` axis-angle, flat ``3K`` or ``K x 3 x 3`` matrices."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape == (K, 3, 3):
        return theta
    if theta.size == 3 * K:
        return axis_angle_to_matrix(theta.reshape(K, 3))
    raise ShapeError(f"pose of shape {theta.shape} does not match K={K}")


def rest_vertices(model: BodyModel, beta) -> np.ndarray:
    beta = _betas(model, beta)
    return model.template + model.shape_dirs @ beta


def joints_rest(model: BodyModel, beta) -> np.ndarray:
    return model.joint_regressor @ rest_vertices(model, beta)


def forward_kinematics(tree: KinematicTree, rotations, j_rest) -> tuple[np.ndarray, np.ndarray]:
    """Compose local rigid transforms root-to-leaf.

    Returns ``(G, joints)`` with ``G`` the ``K x 4 x 4`` global transforms and
    ``joints`` their translation parts. Rotation matrices may carry leading
    batch axes (``... x K x 3 x 3``); the outputs then carry them too.
    """
    K = len(tree)
    rotations = np.asarray(rotations, dtype=np.float64)
    if rotations.ndim > 3 and rotations.shape[-3:] == (K, 3, 3):
        R = rotations
    else:
        R = as_rotations(rotations, K)
    j_rest = np.asarray(j_rest, dtype=np.float64)
    if j_rest.shape != (K, 3):
        raise ShapeError(f"rest joints must be {(K, 3)}, got {j_rest.shape}")
    # Translations are accumulated as displacements from the rest joints so the
    # identity pose reproduces j_rest bit-for-bit.
    eye = np.eye(3)
    G = np.zeros(R.shape[:-3] + (K, 4, 4))
    G[..., 3, 3] = 1.0
    disp = np.zeros(R.shape[:-3] + (K, 3))
    for k in tree.order:
        p = tree.parents[k]
        if p < 0:
            G[..., k, :3, :3] = R[..., k, :, :]
        else:
            G[..., k, :3, :3] = G[..., p, :3, :3] @ R[..., k, :, :]
            disp[..., k, :] = (G[..., p, :3, :3] - eye) @ (j_rest[k] - j_rest[p]) + disp[..., p, :]
    joints = j_rest + disp
    G[..., :3, 3] = joints
    return G, joints


def pose_blend_offsets(model: BodyModel, R: np.ndarray) -> np.ndarray:
    if model.pose_dirs is None:
        return np.zeros_like(model.template)
    feat = (R[1:] - np.eye(3)).reshape(-1)
    return model.pose_dirs @ feat


def skin(model: BodyModel, theta, beta, return_joints: bool = False):
    """Posed mesh M(theta, beta) by linear blend skinning.

    theta may be axis-angle (K x 3) or rotation matrices (K x 3 x 3).
    """
    K = model.num_joints
    R = as_rotations(theta, K)
    v_shaped = rest_vertices(model, beta)
    J = model.joint_regressor @ v_shaped
    G, joints = forward_kinematics(model.tree, R, J)
    # v' = v + sum_k w_k [(R_k - I)(v - j_k) + (g_k - j_k)], exact at identity
    v = v_shaped + pose_blend_offsets(model, R)
    A = G[:, :3, :3] - np.eye(3)
    off = np.einsum("kij,nkj->nki", A, v[:, None, :] - J[None, :, :]) + (joints - J)[None]
    verts = v + np.einsum("nk,nki->ni", model.skin_weights, off)
    if return_joints:
        return verts, joints
    return verts


def regress_keypoints(model: BodyModel, vertices) -> np.ndarray:
    vertices = np.asarray(vertices, dtype=np.float64)
    if vertices.shape != (model.num_vertices, 3):
        raise ShapeError(f"vertices must be {(model.num_vertices, 3)}, got {vertices.shape}")
    return model.keypoint_regressor @ vertices


def project_weak_perspective(points, cam: WeakPerspectiveCamera) -> np.ndarray:
    """Drop depth, then scale and shift: ``(x, y) -> (s x + tx, s y + ty)``."""
    points = np.asarray(points, dtype=np.float64)
    return cam.s * points[..., :2] + np.asarray(cam.t, dtype=np.float64)


def numerical_jacobian(f: Callable[[np.ndarray], np.ndarray], x, eps: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian, output shape ``f(x).shape + x.shape``."""
    x = np.asarray(x, dtype=np.float64)
    y0 = np.asarray(f(x))
    J = np.zeros(y0.shape + x.shape)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += eps
        xm[idx] -= eps
        J[(...,) + idx] = (np.asarray(f(xp)) - np.asarray(f(xm))) / (2 * eps)
    return J


# ---------------------------------------------------------------------------
# procedural mannequin

# rest joint locations in metres, y up, subject facing +z
_REST_JOINTS = np.array([
    [0.00, 0.00, 0.00], [0.09, -0.09, 0.00], [-0.09, -0.09, 0.00], [0.00, 0.11, -0.01],
    [0.10, -0.47, 0.01], [-0.10, -0.47, 0.01], [0.00, 0.24, -0.01], [0.10, -0.87, -0.03],
    [-0.10, -0.87, -0.03], [0.00, 0.30, 0.00], [0.11, -0.92, 0.10], [-0.11, -0.92, 0.10],
    [0.00, 0.52, -0.01], [0.08, 0.44, 0.00], [-0.08, 0.44, 0.00], [0.00, 0.60, 0.02],
    [0.18, 0.47, -0.01], [-0.18, 0.47, -0.01], [0.44, 0.47, -0.02], [-0.44, 0.47, -0.02],
    [0.69, 0.47, -0.01], [-0.69, 0.47, -0.01], [0.77, 0.47, -0.01], [-0.77, 0.47, -0.01],
])

_RADII = np.array([
    0.13, 0.08, 0.08, 0.12, 0.055, 0.055, 0.12, 0.045, 0.045, 0.12, 0.035, 0.035,
    0.05, 0.05, 0.05, 0.09, 0.045, 0.045, 0.04, 0.04, 0.035, 0.035, 0.03, 0.03,
])

# segment end for joints with several children; leaves extend their parent bone
_SEGMENT_CHILD = {0: 3, 9: 12}
_LEAF_LENGTH = {10: 0.10, 11: 0.10, 15: 0.20, 22: 0.09, 23: 0.09}

# 17 COCO-style keypoints; body ones sit on SMPL joints, face ones on head-surface proxies
_COCO_BODY = {5: 16, 6: 17, 7: 18, 8: 19, 9: 20, 10: 21, 11: 1, 12: 2, 13: 4, 14: 5, 15: 7, 16: 8}
_COCO_FACE = {
    0: (0.00, 0.08, 1.0), 1: (0.035, 0.11, 0.8), 2: (-0.035, 0.11, 0.8),
    3: (0.09, 0.09, 0.0), 4: (-0.09, 0.09, 0.0),
}

_RING = 8


def _frame(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(axis, ref)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(axis, e1)


def toy_model(seed: int = 0, segments_per_bone: int = 4) -> BodyModel:
    """Deterministic capsule-limb mannequin on the canonical 24-joint tree.

    Each joint owns one tube (``segments_per_bone`` ring intervals plus end caps);
    tube vertices weigh mostly on their joint and blend into the single child
    near the far end. Parts equal joints, labelled ``k + 1``.
    """
    if segments_per_bone < 1:
        raise ValueError("segments_per_bone must be >= 1")
    rng = np.random.default_rng(seed)
    tree = SMPL_TREE
    K = len(tree)
    joints = _REST_JOINTS + rng.uniform(-0.005, 0.005, size=_REST_JOINTS.shape)
    joints[0] = 0.0
    radii = _RADII * rng.uniform(0.9, 1.1, size=K)

    verts, faces, weights, parts, uvs, axes = [], [], [], [], [], []
    ring_members: dict[int, list[int]] = {}
    n_rings = segments_per_bone + 1
    for k in range(K):
        kids = tree.children(k)
        if k in _SEGMENT_CHILD:
            end, blend = joints[_SEGMENT_CHILD[k]], None
        elif len(kids) == 1:
            end, blend = joints[kids[0]], kids[0]
        else:
            d = joints[k] - joints[tree.parents[k]]
            end, blend = joints[k] + _LEAF_LENGTH[k] * d / np.linalg.norm(d), None
        axis = end - joints[k]
        length = np.linalg.norm(axis)
        axis = axis / length
        e1, e2 = _frame(axis)
        base = len(verts)
        for r in range(n_rings):
            t = r / segments_per_bone
            centre = joints[k] + t * length * axis
            w_child = 0.0 if blend is None else 0.4 * max(0.0, (t - 0.6) / 0.4)
            for q in range(_RING + 1):  # last column duplicates the seam with U = 1
                phi = 2 * np.pi * q / _RING
                verts.append(centre + radii[k] * (np.cos(phi) * e1 + np.sin(phi) * e2))
                w = np.zeros(K)
                w[k] = 1.0 - w_child
                if blend is not None:
                    w[blend] = w_child
                weights.append(w)
                parts.append(k + 1)
                uvs.append((q / _RING, t))
                axes.append(axis)
        ring_members[k] = list(range(base, base + _RING))
        for r in range(segments_per_bone):
            for q in range(_RING):
                a = base + r * (_RING + 1) + q
                b, c, d = a + 1, a + _RING + 1, a + _RING + 2
                faces += [(a, b, d), (a, d, c)]
        # end caps: fans around a centre vertex
        for r, t in ((0, 0.0), (segments_per_bone, 1.0)):
            centre = len(verts)
            verts.append(joints[k] + t * length * axis)
            weights.append(weights[base + r * (_RING + 1)].copy())
            parts.append(k + 1)
            uvs.append((0.5, t))
            axes.append(axis)
            ring0 = base + r * (_RING + 1)
            for q in range(_RING):
                faces.append((centre, ring0 + q, ring0 + q + 1))

    V = np.array(verts)
    N = len(V)
    W = np.array(weights)
    W /= W.sum(axis=1, keepdims=True)
    J_reg = np.zeros((K, N))
    for k, members in ring_members.items():
        J_reg[k, members] = 1.0 / len(members)

    kp = np.zeros((17, N))
    for i, k in _COCO_BODY.items():
        kp[i] = J_reg[k]
    head = np.array(ring_members[15] + [m + (_RING + 1) * r for r in range(1, n_rings) for m in ring_members[15]])
    for i, (dx, dy, dz) in _COCO_FACE.items():
        target = joints[15] + np.array([dx, dy, dz * radii[15]])
        d = np.linalg.norm(V[head] - target, axis=1)
        nearest = head[np.argsort(d, kind="stable")[:2]]
        kp[i, nearest] = 0.5

    # smooth shape directions: random affine fields plus a limb-thickness mode
    S = 10
    centred = V - V.mean(axis=0)
    shape_dirs = np.zeros((N, 3, S))
    offset = V - joints[W.argmax(axis=1)]
    axes = np.array(axes)
    radial = offset - np.sum(offset * axes, axis=1, keepdims=True) * axes
    for s in range(S):
        A = rng.normal(scale=0.04, size=(3, 3))
        b = rng.normal(scale=0.01, size=3)
        shape_dirs[:, :, s] = centred @ A.T + b
    shape_dirs[:, :, 0] += 0.05 * radial

    return BodyModel(
        template=V,
        faces=np.array(faces, dtype=np.int64),
        tree=tree,
        skin_weights=W,
        shape_dirs=shape_dirs,
        pose_dirs=np.zeros((N, 3, 9 * (K - 1))),
        joint_regressor=J_reg,
        keypoint_regressor=kp,
        vertex_part=np.array(parts, dtype=np.int64),
        vertex_uv=np.array(uvs),
        num_parts=K,
    )
