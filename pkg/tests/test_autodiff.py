import numpy as np
import pytest

from densebody import autodiff as ad
from densebody.autodiff import Adam, Parameter
from densebody.errors import ShapeError
from densebody.gradsuite import CHECKS, _run

PRIMITIVES = ["matmul", "add", "hadamard", "relu", "sigmoid", "scale", "sqrt", "row_normalize",
              "reduce_sum", "l1_to_target", "softmax_cross_entropy", "slice_concat", "reshape_transpose"]


def test_forward_examples():
    x = ad.inp("x")
    z = np.random.default_rng(0).normal(size=(3, 4))
    np.testing.assert_array_equal(ad.forward(x, {"x": z}), z)
    np.testing.assert_array_equal(ad.forward(ad.matmul(np.eye(3), x), {"x": z}), z)
    np.testing.assert_array_equal(ad.forward(ad.relu(x), {"x": np.array([-1.0, 0.0, 2.0])}), [0, 0, 2])


def test_unbound_input():
    with pytest.raises(KeyError):
        ad.forward(ad.relu(ad.inp("x")), {})


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        ad.forward(ad.matmul(np.ones((2, 3)), np.ones((2, 3))))


def test_square_gradient():
    p = Parameter("x", [3.0])
    loss = ad.reduce_sum(ad.hadamard(ad.param(p), ad.param(p)))
    ad.forward(loss)
    assert ad.backward(loss)["x"][0] == 6.0
    assert ad.grad_check(lambda x: ad.reduce_sum(ad.hadamard(x, x)), np.array([3.0])) < 1e-9


def test_l1_gradient_sign_and_kink():
    p = Parameter("x", [2.0, 5.0, 1.0])
    loss = ad.l1_to_target(ad.param(p), np.array([1.0, 0.0, 1.0]))
    ad.forward(loss)
    np.testing.assert_allclose(ad.backward(loss)["x"], [1 / 3, 1 / 3, 0.0])


def test_relu_subgradient_zero():
    p = Parameter("x", [0.0, 1.0])
    loss = ad.reduce_sum(ad.relu(ad.param(p)))
    ad.forward(loss)
    np.testing.assert_array_equal(ad.backward(loss)["x"], [0.0, 1.0])


def test_sigmoid_at_zero():
    p = Parameter("x", [0.0])
    loss = ad.reduce_sum(ad.sigmoid(ad.param(p)))
    ad.forward(loss)
    assert ad.backward(loss)["x"][0] == 0.25
    stats = {}
    assert ad.grad_check_params(loss, [p], stats=stats) < 1e-9
    assert stats == {"checked": 1, "skipped": 0}


def test_sigmoid_extremes_finite():
    out = ad.forward(ad.sigmoid(ad.inp("x")), {"x": np.array([-1000.0, 1000.0])})
    np.testing.assert_array_equal(out, [0.0, 1.0])


def test_cross_entropy_closed_form():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(5, 7))
    y = np.eye(7)[rng.integers(0, 7, size=5)]
    p = Parameter("z", z)
    loss = ad.softmax_cross_entropy(ad.param(p), y)
    val = ad.forward(loss)
    sm = np.exp(z - z.max(axis=1, keepdims=True))
    sm /= sm.sum(axis=1, keepdims=True)
    assert val == pytest.approx(-np.mean(np.sum(y * np.log(sm), axis=1)), abs=1e-12)
    np.testing.assert_allclose(ad.backward(loss)["z"], (sm - y) / 5, atol=1e-15)


def test_non_scalar_loss_rejected():
    p = Parameter("x", np.ones(3))
    out = ad.relu(ad.param(p))
    ad.forward(out)
    with pytest.raises(ShapeError):
        ad.backward(out)


def test_backward_before_forward():
    with pytest.raises(RuntimeError):
        ad.backward(ad.reduce_sum(ad.param(Parameter("x", np.ones(2)))))


def test_linearity_of_gradients():
    rng = np.random.default_rng(2)
    p = Parameter("w", rng.normal(size=(4, 3)))
    x = rng.normal(size=(5, 4))
    f = ad.reduce_sum(ad.hadamard(ad.sigmoid(ad.matmul(x, ad.param(p))), rng.normal(size=(5, 3))))
    g = ad.l1_to_target(ad.relu(ad.matmul(x, ad.param(p))), rng.normal(size=(5, 3)))
    grads = []
    for loss in (f, g, ad.add(f, g)):
        ad.forward(loss)
        grads.append(ad.backward(loss)["w"].copy())
    np.testing.assert_allclose(grads[0] + grads[1], grads[2], atol=1e-14)


def test_backward_deterministic_and_overwrites():
    rng = np.random.default_rng(3)
    p = Parameter("w", rng.normal(size=(3, 3)))
    loss = ad.reduce_sum(ad.sigmoid(ad.matmul(ad.param(p), ad.param(p))))
    ad.forward(loss)
    a = ad.backward(loss)["w"].copy()
    ad.forward(loss)
    b = ad.backward(loss)["w"].copy()
    np.testing.assert_array_equal(a, b)


def test_shared_parameter_accumulates():
    p = Parameter("x", [2.0])
    n = ad.param(p)
    loss = ad.reduce_sum(ad.add(n, ad.hadamard(n, n)))
    ad.forward(loss)
    assert ad.backward(loss)["x"][0] == 5.0


@pytest.mark.parametrize("name", PRIMITIVES)
def test_primitive_random_points(name):
    worst = max(_run(name, CHECKS[name], seed, 1e-5).max_rel_error for seed in range(100))
    assert worst < 1e-7


def test_kink_straddle_is_skipped():
    p = Parameter("x", [1e-6, 0.5, -0.3])
    loss = ad.reduce_sum(ad.relu(ad.param(p)))
    stats = {}
    err = ad.grad_check_params(loss, [p], epsilon=1e-5, stats=stats)
    # 1e-6 straddles at eps and eps/10 but not at eps/100
    assert stats == {"checked": 3, "skipped": 0} and err < 1e-9
    q = Parameter("x", [0.0, 0.5])
    loss = ad.reduce_sum(ad.relu(ad.param(q)))
    ad.grad_check_params(loss, [q], stats=stats)
    assert stats == {"checked": 1, "skipped": 1}


def test_kink_margin():
    x = ad.inp("x")
    out = ad.relu(x)
    ad.forward(out, {"x": np.array([0.3, -0.01, 2.0])})
    assert ad.kink_margin(out) == pytest.approx(0.01)


def test_operator_sugar():
    x = ad.inp("x")
    v = np.array([1.0, -2.0])
    out = ad.forward((2.0 * x - 1.0) * x + (-x), {"x": v})
    np.testing.assert_allclose(out, (2 * v - 1) * v - v)


def test_adam_first_step_is_lr_sized():
    p = Parameter("w", np.array([1.0, -1.0, 0.5]))
    p.grad = np.array([0.3, -2.0, 0.0])
    opt = Adam([p], lr=1e-4)
    opt.step()
    np.testing.assert_allclose(p.value, [1.0 - 1e-4, -1.0 + 1e-4, 0.5], atol=1e-12)


def test_adam_skips_frozen():
    a, b = Parameter("a", [1.0]), Parameter("b", [1.0], trainable=False)
    a.grad[:] = b.grad[:] = 1.0
    Adam([a, b]).step()
    assert a.value[0] < 1.0 and b.value[0] == 1.0
