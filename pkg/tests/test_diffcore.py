import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from headclip.diffcore import (
    NonDeterministicError,
    ParamSet,
    ShapeError,
    Tensor,
    backward,
    concat,
    finite_diff_check,
    layer_norm,
    quick_gelu,
    softmax,
    stack,
    value_and_grad,
)


def numeric_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[i] += eps
        down[i] -= eps
        g[i] = (f(up) - f(down)) / (2 * eps)
    return g


def grad_of(fn, x):
    t = Tensor(x, requires_grad=True)
    return backward(fn(t), {"x": t})["x"]


def test_matmul_identity_padded():
    a = np.arange(6.0).reshape(2, 3)
    b = np.eye(3)[:, :2]
    np.testing.assert_array_equal((Tensor(a) @ Tensor(b)).data, a[:, :2])


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError) as exc:
        Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((2, 3)))
    assert "matmul" in str(exc.value) and "(2, 3)" in str(exc.value)


def test_add_shape_error():
    with pytest.raises(ShapeError):
        Tensor(np.zeros(3)) + Tensor(np.zeros(4))


def test_softmax_zero_row():
    np.testing.assert_array_equal(softmax(np.zeros((1, 4))).data, np.full((1, 4), 0.25))


def test_layer_norm_constant_row_is_zero():
    out = layer_norm(np.full((2, 5), 3.7)).data
    np.testing.assert_array_equal(out, np.zeros((2, 5)))


def test_linear_grad_is_input():
    x = np.array([1.5, -2.0, 0.25])
    w = Tensor(np.array([0.3, 0.1, -0.7]), requires_grad=True)
    g = backward((w * x).sum(), {"w": w})
    np.testing.assert_array_equal(g["w"], x)


def test_unused_param_gets_zero_grad():
    w = Tensor(np.ones(3), requires_grad=True)
    u = Tensor(np.ones((2, 2)), requires_grad=True)
    g = backward((w * 2.0).sum(), {"w": w, "u": u})
    np.testing.assert_array_equal(g["u"], np.zeros((2, 2)))


def test_quadratic_grad():
    w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    g = backward((w * w).sum(), {"w": w})
    np.testing.assert_array_equal(g["w"], [2.0, 4.0])


def test_non_scalar_loss_rejected():
    w = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        backward(w * 2.0, {"w": w})


def test_no_graph_without_requires_grad():
    t = Tensor(np.ones(3)) * 2.0 + 1.0
    assert not t.requires_grad and t._parents == ()


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([0.5, -1.0]), requires_grad=True)
    y = x * x
    g = backward((y + y * 3.0).sum(), {"x": x})["x"]
    np.testing.assert_allclose(g, 8 * x.data)


UNARY = {
    "exp": lambda t: t.exp(),
    "log": lambda t: (t * t + 1.0).log(),
    "sqrt": lambda t: (t * t + 0.5).sqrt(),
    "sigmoid": lambda t: t.sigmoid(),
    "pow": lambda t: (t * t + 1.0) ** 1.5,
    "div": lambda t: 1.0 / (t * t + 2.0),
    "gelu": quick_gelu,
    "softmax": lambda t: softmax(t, axis=-1),
    "layer_norm": lambda t: layer_norm(t, np.linspace(0.5, 1.5, t.shape[-1]), 0.1),
    "transpose": lambda t: t.transpose(1, 0) @ t,
    "getitem": lambda t: t[1:, ::2] * t[:-1, ::2],
    "mean": lambda t: t.mean(axis=0, keepdims=True) * t,
    "concat": lambda t: concat([t, t * 2.0], axis=1),
    "stack": lambda t: stack([t, t.exp()], axis=0),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_op_grads_match_central_differences(name):
    fn = UNARY[name]
    rng = np.random.default_rng(3)
    x = rng.normal(size=(3, 4))
    proj = rng.normal(size=fn(Tensor(x)).shape)
    loss = lambda t: (fn(t) * proj).sum()
    np.testing.assert_allclose(
        grad_of(loss, x), numeric_grad(lambda a: float(loss(Tensor(a)).data), x), rtol=1e-6, atol=1e-8
    )


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_broadcast_matmul_grads_property(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(4, 5))
    c = rng.normal(size=(5,))
    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    loss = ((ta @ tb + c) * (ta @ tb)).sum()
    g = backward(loss, {"a": ta, "b": tb})
    f = lambda aa, bb: float((((aa @ bb) + c) * (aa @ bb)).sum())
    np.testing.assert_allclose(g["a"], numeric_grad(lambda x: f(x, b), a), rtol=1e-5, atol=1e-7)
    np.testing.assert_allclose(g["b"], numeric_grad(lambda x: f(a, x), b), rtol=1e-5, atol=1e-7)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_forward_is_deterministic_property(seed):
    x = np.random.default_rng(seed).normal(size=(4, 6))
    a = softmax(layer_norm(x) @ x.T).data
    b = softmax(layer_norm(x) @ x.T).data
    assert a.tobytes() == b.tobytes()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_softmax_rows_sum_to_one_property(seed):
    x = np.random.default_rng(seed).normal(scale=30.0, size=(5, 7))
    np.testing.assert_allclose(softmax(x).data.sum(axis=-1), 1.0, atol=1e-12)


def test_clip_has_zero_grad_outside():
    x = Tensor(np.array([-1.0, 0.5, 2.0]), requires_grad=True)
    g = backward(x.clip(0.0, 1.0).sum(), {"x": x})["x"]
    np.testing.assert_array_equal(g, [0.0, 1.0, 0.0])


def test_finite_diff_quadratic():
    params = ParamSet({"w": np.array([0.3, -1.2, 2.0])}, trainable=["w"])
    err = finite_diff_check(lambda p: (p["w"] * p["w"]).sum() * 0.5, params, epsilon=1e-5)
    assert err["w"] < 1e-8


def test_finite_diff_only_trainables():
    params = ParamSet({"w": np.array([1.0, 2.0]), "frozen": np.array([3.0])}, trainable=["w"])
    err = finite_diff_check(lambda p: (p["w"] * p["frozen"]).sum(), params)
    assert set(err) == {"w"}
    _, grads = value_and_grad(lambda p: (p["w"] * p["frozen"]).sum(), params)
    assert set(grads) == {"w"}


def test_finite_diff_detects_nondeterminism():
    rng = np.random.default_rng(0)
    params = ParamSet({"w": np.ones(2)}, trainable=["w"])
    with pytest.raises(NonDeterministicError):
        finite_diff_check(lambda p: p["w"].sum() * float(rng.random()), params)


def test_finite_diff_rejects_bad_epsilon():
    params = ParamSet({"w": np.ones(2)}, trainable=["w"])
    with pytest.raises(ValueError):
        finite_diff_check(lambda p: p["w"].sum(), params, epsilon=0.1)


def test_paramset_assignment_checks_shape_and_copies():
    ps = ParamSet({"a": np.zeros(3)})
    src = np.ones(3)
    ps["a"] = src
    src[0] = 5.0
    assert ps["a"][0] == 1.0
    with pytest.raises(ShapeError):
        ps["a"] = np.ones(4)
    with pytest.raises(KeyError):
        ps["missing"]
