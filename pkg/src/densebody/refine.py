"""Graph-convolutional refinement of per-joint rotation features.

Three steps: rotation features are collected along each kinematic chain into a
position feature space, refined there over a neighbour graph with a learnable
edge mask, then converted back to rotation features through parent/child
links. A direct variant refines the rotation features in place for ablations.

Feature tensors are ``[B x] K x C``; graphs act on the joint axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Node, Parameter
from .bodymodel import KinematicTree
from .errors import ShapeError

VARIANTS = ("none", "direct", "position-aided")


@dataclass(frozen=True)
class GraphAdjacency:
    A: np.ndarray
    mode: str = "row"  # "row" or "symmetric"

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.float64)
        object.__setattr__(self, "A", A)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ShapeError(f"adjacency must be square, got {A.shape}")
        if np.any(A < 0):
            raise ValueError("adjacency must be non-negative")
        if self.mode not in ("row", "symmetric"):
            raise ValueError(f"unknown normalization mode {self.mode!r}")
        if self.mode == "symmetric" and not np.array_equal(A, A.T):
            raise ValueError("symmetric normalization needs A == A^T")


def build_collection_graph(tree: KinematicTree) -> GraphAdjacency:
    """Each joint gathers from itself and all of its ancestors."""
    K = len(tree)
    A = np.eye(K)
    for i in range(K):
        A[i, tree.ancestors(i)] = 1.0
    return GraphAdjacency(A, "row")


def build_refinement_graph(tree: KinematicTree, hops: int = 2) -> GraphAdjacency:
    """Support of the neighbour graph: joints 1..hops apart, zero diagonal."""
    if hops < 1:
        raise ValueError("hops must be >= 1")
    D = tree.distances()
    return GraphAdjacency(((D >= 1) & (D <= hops)).astype(np.float64), "symmetric")


def build_conversion_graph(tree: KinematicTree) -> GraphAdjacency:
    return GraphAdjacency(np.eye(len(tree)) + tree.incidence(), "symmetric")


def normalize_adjacency(g: GraphAdjacency) -> np.ndarray:
    """``D^-1/2 A D^-1/2`` for symmetric graphs, ``D^-1 A`` otherwise."""
    d = g.A.sum(axis=1)
    if np.any(d <= 0):
        raise ValueError(f"zero-degree row {int(np.flatnonzero(d <= 0)[0])}")
    if g.mode == "symmetric":
        r = 1.0 / np.sqrt(d)
        return r[:, None] * g.A * r[None, :]
    return g.A / d[:, None]


def gcn_layer(a_hat, z, w, activation: str | None = "relu") -> Node:
    """``sigma(A_hat Z W)`` as a graph node; ``activation`` is ``"relu"`` or None."""
    out = ad.matmul(ad.matmul(a_hat, z), w)
    if activation == "relu":
        return ad.relu(out)
    if activation is None:
        return out
    raise ValueError(f"unknown activation {activation!r}")


def masked_refinement_adjacency(support: np.ndarray, m_logits: Node) -> Node:
    """Row-normalized ``I + sigmoid(M) * support``, rebuilt from the logits on every forward."""
    K = support.shape[0]
    return ad.row_normalize(ad.add(np.eye(K), ad.hadamard(ad.sigmoid(m_logits), support)))


@dataclass
class RefinementGraphs:
    r2p_hat: np.ndarray
    rf_support: np.ndarray
    p2r_hat: np.ndarray

    @classmethod
    def from_tree(cls, tree: KinematicTree, hops: int = 2) -> "RefinementGraphs":
        return cls(
            normalize_adjacency(build_collection_graph(tree)),
            build_refinement_graph(tree, hops).A,
            normalize_adjacency(build_conversion_graph(tree)),
        )

    @classmethod
    def identity(cls, K: int) -> "RefinementGraphs":
        return cls(np.eye(K), np.zeros((K, K)), np.eye(K))


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


class RefinementParams:
    """Weights of the position-aided module plus the two shared prediction heads."""

    def __init__(self, K: int, C: int = 64, L: int = 2, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.K, self.C, self.L = K, C, L
        self.w_collect = Parameter("w_collect", glorot(rng, C, C))
        self.w_refine = [Parameter(f"w_refine{l}", glorot(rng, C, C)) for l in range(L)]
        self.m_logits = Parameter("m_logits", np.zeros((K, K)))
        self.w_convert = Parameter("w_convert", glorot(rng, C, C))
        self.head_rot = Parameter("head_rot", glorot(rng, C, 9))
        self.head_pos = Parameter("head_pos", glorot(rng, C, 3))

    def parameters(self) -> list[Parameter]:
        return [self.w_collect, *self.w_refine, self.m_logits, self.w_convert,
                self.head_rot, self.head_pos]

    @property
    def edge_mask(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.m_logits.value))


class DirectParams:
    """``L + 2`` layers on the masked neighbour graph acting on rotation features."""

    def __init__(self, K: int, C: int = 64, L: int = 2, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.K, self.C, self.L = K, C, L
        self.w_layers = [Parameter(f"w_direct{l}", glorot(rng, C, C)) for l in range(L + 2)]
        self.m_logits = Parameter("m_logits", np.zeros((K, K)))
        self.head_rot = Parameter("head_rot", glorot(rng, C, 9))

    def parameters(self) -> list[Parameter]:
        return [*self.w_layers, self.m_logits, self.head_rot]

    @property
    def edge_mask(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.m_logits.value))


class HeadParams:
    """No refinement: rotations predicted straight from the input features."""

    def __init__(self, K: int, C: int = 64, L: int = 2, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.K, self.C, self.L = K, C, L
        self.head_rot = Parameter("head_rot", glorot(rng, C, 9))

    def parameters(self) -> list[Parameter]:
        return [self.head_rot]


@dataclass
class RefineNodes:
    y: Node
    y_last: Node
    y_hat: Node
    x_hat: Node


def build_refine(x: Node, params: RefinementParams, graphs: RefinementGraphs) -> RefineNodes:
    """Wire the three steps onto ``x`` and return the intermediate feature nodes."""
    y = gcn_layer(graphs.r2p_hat, x, ad.param(params.w_collect), "relu")
    a_rf = masked_refinement_adjacency(graphs.rf_support, ad.param(params.m_logits))
    z = y
    for w in params.w_refine:
        z = gcn_layer(a_rf, z, ad.param(w), "relu")
    y_hat = ad.add(y, z)
    x_hat = gcn_layer(graphs.p2r_hat, y_hat, ad.param(params.w_convert), None)
    return RefineNodes(y, z, y_hat, x_hat)


def build_direct(x: Node, params: DirectParams, graphs: RefinementGraphs) -> Node:
    a_rf = masked_refinement_adjacency(graphs.rf_support, ad.param(params.m_logits))
    z = x
    last = len(params.w_layers) - 1
    for l, w in enumerate(params.w_layers):
        z = gcn_layer(a_rf, z, ad.param(w), None if l == last else "relu")
    return ad.add(x, z)


def _check_features(X: np.ndarray, K: int, C: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-2:] != (K, C):
        raise ShapeError(f"features must be [B x] {K} x {C}, got {X.shape}")
    return X


def refine_forward(X, params: RefinementParams, graphs: RefinementGraphs):
    """Evaluate ``(Y, Y_L, Y_hat, X_hat)`` for features ``X``."""
    X = _check_features(X, params.K, params.C)
    nodes = build_refine(ad.const(X), params, graphs)
    return tuple(ad.forward([nodes.y, nodes.y_last, nodes.y_hat, nodes.x_hat]))


def direct_refine_forward(X, params: DirectParams, graphs: RefinementGraphs) -> np.ndarray:
    X = _check_features(X, params.K, params.C)
    return ad.forward(build_direct(ad.const(X), params, graphs))


def predict_heads(X, X_hat, Y, Y_hat, params: RefinementParams):
    """Rotations (``... x K x 3 x 3``) from X and X_hat, positions from Y and Y_hat."""
    shapes = {np.shape(a) for a in (X, X_hat, Y, Y_hat)}
    if len(shapes) != 1:
        raise ShapeError(f"feature shapes differ: {shapes}")
    hr, hp = params.head_rot.value, params.head_pos.value
    rot = [(np.asarray(f) @ hr).reshape(np.shape(f)[:-1] + (3, 3)) for f in (X, X_hat)]
    pos = [np.asarray(f) @ hp for f in (Y, Y_hat)]
    return rot[0], rot[1], pos[0], pos[1]


def orth_penalty(rot9: Node, K: int) -> Node:
    """Batch mean of the per-sample sum over joints of ``||R R^T - I||_F``."""
    R = ad.reshape(rot9, (-1, 3, 3))
    d = ad.add(ad.matmul(R, ad.swap_last(R)), -np.eye(3))
    per_joint = ad.sqrt(ad.reduce_sum(ad.hadamard(d, d), axis=(1, 2)))
    return ad.scale(ad.mean(per_joint), K)


class RefineTrainer:
    """Builds the training graph once and runs Adam steps on it.

    Inputs are bound per step: ``x`` (B x K x C), ``rot`` (B x K x 9) and
    ``pos`` (B x K x 3).
    """

    def __init__(self, variant: str, params, graphs: RefinementGraphs, lr: float = 1e-4,
                 orth_weight: float = 0.0):
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
        self.variant, self.params, self.graphs = variant, params, graphs
        x, rot, pos = ad.inp("x"), ad.inp("rot"), ad.inp("pos")
        head_rot = ad.param(params.head_rot)
        self.rot_pred = ad.matmul(x, head_rot)
        rot_preds = [self.rot_pred]
        terms = {"rot_x": ad.l1_to_target(self.rot_pred, rot)}
        self.features: dict[str, Node] = {"x": x}
        if variant == "position-aided":
            nodes = build_refine(x, params, graphs)
            head_pos = ad.param(params.head_pos)
            self.rot_pred = ad.matmul(nodes.x_hat, head_rot)
            rot_preds.append(self.rot_pred)
            terms["rot_xhat"] = ad.l1_to_target(self.rot_pred, rot)
            terms["pos_y"] = ad.l1_to_target(ad.matmul(nodes.y, head_pos), pos)
            terms["pos_yhat"] = ad.l1_to_target(ad.matmul(nodes.y_hat, head_pos), pos)
            self.features.update(y=nodes.y, y_hat=nodes.y_hat, x_hat=nodes.x_hat)
        elif variant == "direct":
            x_hat = build_direct(x, params, graphs)
            self.rot_pred = ad.matmul(x_hat, head_rot)
            rot_preds.append(self.rot_pred)
            terms["rot_xhat"] = ad.l1_to_target(self.rot_pred, rot)
            self.features["x_hat"] = x_hat
        loss = terms["rot_x"]
        for name, t in terms.items():
            if name != "rot_x":
                loss = ad.add(loss, t)
        self.refine_loss = loss
        if orth_weight > 0:
            orth = orth_penalty(rot_preds[0], params.K)
            for r in rot_preds[1:]:
                orth = ad.add(orth, orth_penalty(r, params.K))
            terms["orth"] = orth
            loss = ad.add(loss, ad.scale(orth, orth_weight))
        self.terms = terms
        self.loss = loss
        self.optimizer = Adam(params.parameters(), lr=lr)

    def _feed(self, X, rot, pos) -> dict:
        X = np.asarray(X, dtype=np.float64)
        rot = np.asarray(rot, dtype=np.float64).reshape(X.shape[:-1] + (9,))
        feed = {"x": X, "rot": rot}
        if pos is not None:
            feed["pos"] = np.asarray(pos, dtype=np.float64)
        elif self.variant == "position-aided":
            raise ValueError("position-aided training needs position targets")
        return feed

    def evaluate(self, X, rot, pos=None) -> dict[str, float]:
        outs = ad.forward([self.loss, self.refine_loss, *self.terms.values()], self._feed(X, rot, pos))
        res = {"loss": float(outs[0]), "refine": float(outs[1])}
        res.update({k: float(v) for k, v in zip(self.terms, outs[2:])})
        return res

    def train_step(self, X, rot, pos=None) -> dict[str, float]:
        """One forward/backward/Adam update; returns the pre-update losses."""
        res = self.evaluate(X, rot, pos)
        ad.backward(self.loss)
        self.optimizer.step()
        return res

    def predict_rotations(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = ad.forward(self.rot_pred, {"x": X})
        return out.reshape(X.shape[:-1] + (3, 3))

    def feature_values(self, X) -> dict[str, np.ndarray]:
        names = list(self.features)
        vals = ad.forward([self.features[n] for n in names], {"x": np.asarray(X, dtype=np.float64)})
        return dict(zip(names, vals))


def make_params(variant: str, K: int, C: int = 64, L: int = 2, seed: int = 0):
    if variant == "position-aided":
        return RefinementParams(K, C, L, seed)
    if variant == "direct":
        return DirectParams(K, C, L, seed)
    if variant == "none":
        return HeadParams(K, C, L, seed)
    raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")


def feature_correlation(F) -> np.ndarray:
    """Pearson correlation between joints, pooling batch and channel samples.

    ``F`` is ``B x K x C`` (or ``K x C`` for a single sample).
    """
    F = np.asarray(F, dtype=np.float64)
    if F.ndim == 2:
        F = F[None]
    B, K, C = F.shape
    S = np.moveaxis(F, 1, 0).reshape(K, B * C)
    S = S - S.mean(axis=1, keepdims=True)
    norm = np.sqrt(np.sum(S * S, axis=1))
    if np.any(norm == 0):
        raise ValueError(f"zero-variance features at joint {int(np.flatnonzero(norm == 0)[0])}")
    corr = (S @ S.T) / np.outer(norm, norm)
    corr = np.clip(corr, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr
