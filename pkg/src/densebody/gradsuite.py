"""Finite-difference checks for every differentiable piece used in training."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter
from .bodymodel import SMPL_TREE
from .losses import l_iuv_node, l_orth_node
from .maps import encode_iuv
from .refine import RefinementGraphs, RefineTrainer, build_refine, gcn_layer, make_params

TOLERANCE = 1e-6


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    checked: int
    skipped: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE and self.checked > 0

    def to_dict(self) -> dict:
        # timing stays out so reports are reproducible byte for byte
        return {
            "name": self.name, "max_rel_error": self.max_rel_error, "checked": self.checked,
            "skipped": self.skipped, "passed": self.passed,
        }


def _run(name: str, build: Callable[[np.random.Generator], tuple], seed: int, epsilon: float) -> CheckResult:
    rng = np.random.default_rng(seed)
    loss, params, feed = build(rng)
    stats: dict = {}
    t0 = time.perf_counter()
    err = ad.grad_check_params(loss, params, epsilon=epsilon, feed=feed, stats=stats)
    return CheckResult(name, err, stats["checked"], stats["skipped"], time.perf_counter() - t0)


def _scalarize(node, rng, shape):
    """Contract ``node`` with a fixed random weight so its Jacobian is fully exercised."""
    return ad.reduce_sum(ad.hadamard(node, rng.normal(size=shape)))


def _unary(op, shape=(3, 4), positive=False):
    def build(rng):
        v = rng.uniform(0.5, 2.0, size=shape) if positive else rng.normal(size=shape)
        p = Parameter("x", v)
        return _scalarize(op(ad.param(p)), rng, shape), [p], None
    return build


def _binary(op, sa, sb, so):
    def build(rng):
        a, b = Parameter("a", rng.normal(size=sa)), Parameter("b", rng.normal(size=sb))
        return _scalarize(op(ad.param(a), ad.param(b)), rng, so), [a, b], None
    return build


def _reduce_build(rng):
    p = Parameter("x", rng.normal(size=(3, 4, 2)))
    x = ad.param(p)
    a = _scalarize(ad.reduce_sum(x, axis=1), rng, (3, 2))
    b = _scalarize(ad.mean(x, axis=(0, 2), keepdims=True), rng, (1, 4, 1))
    return ad.add(a, ad.add(b, ad.mean(x))), [p], None


def _l1_build(rng):
    p = Parameter("x", rng.normal(size=(4, 5)))
    return ad.l1_to_target(ad.param(p), rng.normal(size=(4, 5))), [p], None


def _ce_build(rng):
    p = Parameter("z", rng.normal(size=(6, 5)))
    t = np.eye(5)[rng.integers(0, 5, size=6)]
    return ad.softmax_cross_entropy(ad.param(p), t), [p], None


def _slice_concat_build(rng):
    a, b = Parameter("a", rng.normal(size=(4, 3))), Parameter("b", rng.normal(size=(2, 3)))
    out = ad.concat([ad.slice_(ad.param(a), (slice(1, 3),)), ad.param(b)], axis=0)
    return _scalarize(out, rng, (4, 3)), [a, b], None


def _reshape_transpose_build(rng):
    p = Parameter("x", rng.normal(size=(2, 3, 4)))
    out = ad.swap_last(ad.transpose(ad.reshape(ad.param(p), (4, 3, 2)), (1, 0, 2)))
    return _scalarize(out, rng, (3, 2, 4)), [p], None


def _gcn_build(rng):
    K, C = 6, 5
    a_hat = rng.uniform(0.0, 1.0, size=(K, K))
    a_hat /= a_hat.sum(axis=1, keepdims=True)
    w = Parameter("w", rng.normal(size=(C, C)) / np.sqrt(C))
    z = Parameter("z", rng.normal(size=(2, K, C)))
    out = gcn_layer(a_hat, ad.param(z), ad.param(w), "relu")
    return _scalarize(out, rng, (2, K, C)), [w, z], None


def _refine_forward_build(rng):
    K, C = 24, 6
    params = make_params("position-aided", K, C, 2, int(rng.integers(1 << 31)))
    params.m_logits.value[:] = rng.normal(size=(K, K))
    graphs = RefinementGraphs.from_tree(SMPL_TREE)
    x = ad.inp("x")
    nodes = build_refine(x, params, graphs)
    out = ad.add(_scalarize(nodes.x_hat, rng, (2, K, C)), _scalarize(nodes.y_hat, rng, (2, K, C)))
    return out, None, {"x": rng.normal(size=(2, K, C))}


def _l_orth_build(rng):
    p = Parameter("R", np.eye(3) + 0.3 * rng.normal(size=(5, 3, 3)))
    return l_orth_node(ad.param(p)), [p], None


def _l_iuv_build(rng):
    P, h, w = 6, 5, 4
    gt = encode_iuv(rng.integers(0, P + 1, size=(h, w)), rng.random((h, w)), rng.random((h, w)), P)
    p = Parameter("pred", rng.normal(size=(P + 1, h, w, 3)))
    return l_iuv_node(ad.param(p), gt), [p], None


def _refine_loss_build(variant: str, orth_weight: float):
    def build(rng):
        K, C, B = 24, 6, 2
        params = make_params(variant, K, C, 2, int(rng.integers(1 << 31)))
        if hasattr(params, "m_logits"):
            params.m_logits.value[:] = rng.normal(size=(K, K))
        trainer = RefineTrainer(variant, params, RefinementGraphs.from_tree(SMPL_TREE), orth_weight=orth_weight)
        feed = trainer._feed(rng.normal(size=(B, K, C)), rng.normal(size=(B, K, 9)), rng.normal(size=(B, K, 3)))
        return trainer.loss, None, feed
    return build


CHECKS: dict[str, Callable] = {
    "matmul": _binary(ad.matmul, (2, 3, 4), (4, 5), (2, 3, 5)),
    "add": _binary(ad.add, (3, 4), (4,), (3, 4)),
    "hadamard": _binary(ad.hadamard, (3, 1), (3, 4), (3, 4)),
    "relu": _unary(ad.relu),
    "sigmoid": _unary(ad.sigmoid),
    "scale": _unary(lambda x: ad.scale(x, -2.5)),
    "sqrt": _unary(ad.sqrt, positive=True),
    "row_normalize": _unary(ad.row_normalize, positive=True),
    "reduce_sum": _reduce_build,
    "l1_to_target": _l1_build,
    "softmax_cross_entropy": _ce_build,
    "slice_concat": _slice_concat_build,
    "reshape_transpose": _reshape_transpose_build,
    "gcn_layer": _gcn_build,
    "refine_forward": _refine_forward_build,
    "l_orth": _l_orth_build,
    "l_iuv": _l_iuv_build,
    "l_refine_none": _refine_loss_build("none", 0.0),
    "l_refine_direct": _refine_loss_build("direct", 0.0),
    "l_refine_position_aided": _refine_loss_build("position-aided", 0.0),
    "l_refine_position_aided_orth": _refine_loss_build("position-aided", 0.1),
}


def run_suite(seed: int = 0, epsilon: float = 1e-5, names=None) -> list[CheckResult]:
    names = list(CHECKS) if names is None else list(names)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ValueError(f"unknown checks: {unknown}")
    index = {n: i for i, n in enumerate(CHECKS)}
    return [_run(n, CHECKS[n], seed * 1000 + index[n], epsilon) for n in names]
