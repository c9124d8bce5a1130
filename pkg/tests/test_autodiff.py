"""Gradient correctness for every primitive, checked against finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rtdkit.autodiff import (
    Parameter,
    ShapeError,
    Tape,
    Tensor,
    add,
    backward,
    binary_cross_entropy,
    cross_entropy,
    dropout,
    embedding,
    gelu,
    layer_norm,
    masked_mean,
    matmul,
    mul,
    numeric_gradient,
    reshape,
    scale,
    select_token,
    softmax,
    transpose,
)
from rtdkit.rng import stream_rng

RNG = np.random.default_rng(7)


def fd_check(build, params, tol=1e-4):
    """Analytic vs central-difference gradients at 64-bit precision."""
    with Tape() as tape:
        loss = build(params)
    grads = backward(tape, loss, params)
    for name, p in params.items():
        assert p.dtype == np.float64, "finite differences need float64"
        num = numeric_gradient(lambda: build(params).item(), p.data)
        denom = np.maximum(np.maximum(np.abs(num), np.abs(grads[name])), 1e-6)
        rel = np.abs(grads[name] - num) / denom
        assert rel.max() < tol, f"{name}: max rel err {rel.max():.2e}"


def p64(name, *shape):
    return Parameter(RNG.normal(0, 1, size=shape).astype(np.float64), name=name)


def scalar_sum(t):
    # sum via masked mean: mean * count
    return scale(masked_mean(t), t.data.size)


class TestBackwardBasics:
    def test_sum_gradient_is_ones(self):
        x = Parameter(np.arange(6, dtype=np.float64).reshape(2, 3), name="x")
        with Tape() as tape:
            loss = scalar_sum(x)
        grads = backward(tape, loss, {"x": x})
        np.testing.assert_array_equal(grads["x"], np.ones((2, 3)))

    def test_sum_of_squares_gradient(self):
        x = Parameter(np.array([1.0, 2.0]), name="x")
        with Tape() as tape:
            loss = scalar_sum(mul(x, x))
        grads = backward(tape, loss, {"x": x})
        np.testing.assert_allclose(grads["x"], [2.0, 4.0])

    def test_unreachable_parameter_gets_zeros(self):
        x = Parameter(np.ones(3), name="x")
        idle = Parameter(np.ones((2, 2)), name="idle")
        with Tape() as tape:
            loss = masked_mean(x)
        grads = backward(tape, loss, {"x": x, "idle": idle})
        np.testing.assert_array_equal(grads["idle"], np.zeros((2, 2)))

    def test_nonscalar_loss_rejected(self):
        x = Parameter(np.ones(3), name="x")
        with Tape() as tape:
            y = mul(x, x)
        with pytest.raises(ValueError, match="scalar"):
            backward(tape, y, {"x": x})

    def test_ops_outside_tape_not_recorded(self):
        x = Parameter(np.ones(3), name="x")
        mul(x, x)
        with Tape() as tape:
            loss = masked_mean(x)
        assert len(tape) == 1
        grads = backward(tape, loss, {"x": x})
        np.testing.assert_allclose(grads["x"], np.full(3, 1 / 3))

    def test_reused_intermediate_accumulates(self):
        # y used twice: d/dx (y + y) where y = 2x
        x = Parameter(np.array([3.0]), name="x")
        with Tape() as tape:
            y = scale(x, 2.0)
            loss = masked_mean(add(y, y))
        grads = backward(tape, loss, {"x": x})
        np.testing.assert_allclose(grads["x"], [4.0])


class TestPrimitiveValues:
    def test_softmax_symmetry(self):
        out = softmax(Tensor(np.zeros(2)))
        np.testing.assert_allclose(out.data, [0.5, 0.5])

    def test_softmax_rows_sum_to_one(self):
        x = Tensor(RNG.normal(0, 5, size=(4, 7)))
        out = softmax(x)
        np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(4), atol=1e-5)

    def test_layer_norm_constant_vector_is_zero(self):
        gain = Parameter(np.ones(5), name="g", no_decay=True)
        bias = Parameter(np.zeros(5), name="b", no_decay=True)
        out = layer_norm(Tensor(np.full((2, 5), 3.7)), gain, bias)
        np.testing.assert_allclose(out.data, np.zeros((2, 5)), atol=1e-5)

    def test_layer_norm_standardizes(self):
        gain = Parameter(np.ones(64), name="g")
        bias = Parameter(np.zeros(64), name="b")
        x = Tensor(RNG.normal(2.0, 3.0, size=(10, 64)))
        out = layer_norm(x, gain, bias)
        mean = out.data.mean(axis=-1)
        var = out.data.var(axis=-1)
        assert np.abs(mean).max() < 1e-5
        assert np.abs(var - 1.0).max() < 1e-3

    def test_cross_entropy_uniform_is_log_v(self):
        for v in (2, 5, 30):
            logits = Tensor(np.zeros((3, v)))
            loss = cross_entropy(logits, np.array([0, 1, v - 1]))
            assert loss.item() == pytest.approx(np.log(v), rel=1e-6)

    def test_binary_cross_entropy_at_zero_logit(self):
        logits = Tensor(np.zeros(4))
        loss = binary_cross_entropy(logits, np.array([0, 1, 0, 1]))
        assert loss.item() == pytest.approx(np.log(2), rel=1e-6)

    def test_gelu_known_values(self):
        out = gelu(Tensor(np.array([0.0, 100.0, -100.0])))
        np.testing.assert_allclose(out.data, [0.0, 100.0, 0.0], atol=1e-6)

    def test_dropout_zero_rate_is_identity(self):
        x = Tensor(np.ones((3, 3)))
        assert dropout(x, 0.0, stream_rng(0, 3)) is x

    def test_dropout_scales_survivors(self):
        x = Tensor(np.ones((100, 100)))
        out = dropout(x, 0.25, stream_rng(0, 3))
        vals = np.unique(out.data)
        assert set(np.round(vals, 6)) <= {0.0, np.round(1 / 0.75, 6)}
        # survivor fraction near 75%
        assert abs((out.data != 0).mean() - 0.75) < 0.02

    def test_embedding_gathers_rows(self):
        table = Parameter(np.arange(12, dtype=np.float32).reshape(4, 3), name="emb")
        out = embedding(table, np.array([[1, 3]]))
        np.testing.assert_array_equal(out.data, [[[3, 4, 5], [9, 10, 11]]])


class TestErrors:
    def test_add_shape_mismatch(self):
        with pytest.raises(ShapeError, match=r"add.*\(2, 3\).*\(4, 5\)"):
            add(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))

    def test_mul_shape_mismatch(self):
        with pytest.raises(ShapeError, match="mul"):
            mul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ShapeError, match="matmul"):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_embedding_out_of_range(self):
        table = Parameter(np.ones((4, 3)), name="emb")
        with pytest.raises(IndexError, match=r"\[0, 4\)"):
            embedding(table, np.array([0, 4]))

    def test_cross_entropy_empty_mask(self):
        logits = Tensor(np.zeros((2, 3)))
        with pytest.raises(ValueError, match="no positions"):
            cross_entropy(logits, np.zeros(2, dtype=int), mask=np.zeros(2))

    def test_masked_mean_empty_mask(self):
        with pytest.raises(ValueError, match="no positions"):
            masked_mean(Tensor(np.ones(3)), mask=np.zeros(3))


class TestFiniteDifferences:
    """Spec tolerance: max relative error < 1e-4 at 64-bit."""

    def test_add_broadcast(self):
        params = {"a": p64("a", 3, 4), "b": p64("b", 4)}
        fd_check(lambda p: scalar_sum(mul(add(p["a"], p["b"]), add(p["a"], p["b"]))), params)

    def test_mul_broadcast(self):
        params = {"a": p64("a", 2, 3, 4), "b": p64("b", 3, 1)}
        fd_check(lambda p: scalar_sum(mul(p["a"], p["b"])), params)

    def test_matmul_2d(self):
        params = {"a": p64("a", 3, 5), "b": p64("b", 5, 2)}
        fd_check(lambda p: scalar_sum(matmul(p["a"], p["b"])), params)

    def test_matmul_batched(self):
        params = {"a": p64("a", 2, 4, 3, 5), "b": p64("b", 2, 4, 5, 2)}
        fd_check(lambda p: scalar_sum(matmul(p["a"], p["b"])), params)

    def test_matmul_broadcast_weights(self):
        # shared weight matrix against a batched activation
        params = {"a": p64("a", 6, 3, 5), "b": p64("b", 5, 2)}
        fd_check(lambda p: scalar_sum(matmul(p["a"], p["b"])), params)

    def test_gelu(self):
        params = {"x": p64("x", 4, 4)}
        fd_check(lambda p: scalar_sum(gelu(p["x"])), params)

    def test_softmax(self):
        params = {"x": p64("x", 3, 6)}
        weights = RNG.normal(0, 1, size=(3, 6))
        fd_check(lambda p: scalar_sum(mul(softmax(p["x"]), weights)), params)

    def test_layer_norm(self):
        params = {"x": p64("x", 2, 3, 8), "g": p64("g", 8), "b": p64("b", 8)}
        weights = RNG.normal(0, 1, size=(2, 3, 8))
        fd_check(
            lambda p: scalar_sum(mul(layer_norm(p["x"], p["g"], p["b"]), weights)),
            params,
        )

    def test_transpose_reshape(self):
        params = {"x": p64("x", 2, 3, 4)}
        weights = RNG.normal(0, 1, size=(4, 6))
        fd_check(
            lambda p: scalar_sum(mul(reshape(transpose(p["x"], (2, 0, 1)), (4, 6)), weights)),
            params,
        )

    def test_embedding_repeated_ids(self):
        params = {"emb": p64("emb", 5, 3)}
        ids = np.array([[0, 2, 2, 4], [1, 1, 1, 0]])
        weights = RNG.normal(0, 1, size=(2, 4, 3))
        fd_check(lambda p: scalar_sum(mul(embedding(p["emb"], ids), weights)), params)

    def test_select_token(self):
        params = {"x": p64("x", 3, 5, 2)}
        fd_check(lambda p: scalar_sum(mul(select_token(p["x"], 2), select_token(p["x"], 2))), params)

    def test_cross_entropy_masked(self):
        params = {"x": p64("x", 2, 4, 5)}
        labels = np.array([[0, 3, 1, 4], [2, 2, 0, 1]])
        mask = np.array([[1, 1, 0, 1], [0, 1, 1, 0]])
        fd_check(lambda p: cross_entropy(p["x"], labels, mask), params)

    def test_binary_cross_entropy_masked(self):
        params = {"x": p64("x", 3, 6)}
        labels = (RNG.random((3, 6)) < 0.5).astype(np.float64)
        mask = np.array([[1, 1, 1, 0, 0, 1]] * 3)
        fd_check(lambda p: binary_cross_entropy(p["x"], labels, mask), params)

    def test_masked_mean(self):
        params = {"x": p64("x", 4, 4)}
        mask = (RNG.random((4, 4)) < 0.6).astype(np.float64)
        mask[0, 0] = 1.0
        fd_check(lambda p: masked_mean(p["x"], mask), params)

    def test_dropout_deterministic_rng(self):
        params = {"x": p64("x", 5, 5)}
        fd_check(
            lambda p: scalar_sum(mul(dropout(p["x"], 0.3, stream_rng(11, 3)), p["x"])),
            params,
        )

    def test_two_layer_mlp(self):
        """End-to-end battery: a random two-layer MLP, FD max rel err < 1e-4."""
        params = {
            "w1": p64("w1", 6, 8),
            "b1": p64("b1", 8),
            "w2": p64("w2", 8, 4),
            "b2": p64("b2", 4),
        }
        x = RNG.normal(0, 1, size=(5, 6))
        labels = np.array([0, 1, 2, 3, 0])

        def build(p):
            h = gelu(add(matmul(Tensor(x), p["w1"]), p["b1"]))
            logits = add(matmul(h, p["w2"]), p["b2"])
            return cross_entropy(logits, labels)

        fd_check(build, params)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.integers(2, 9))
def test_softmax_rows_always_sum_to_one(seed, rows, cols):
    x = np.random.default_rng(seed).normal(0, 10, size=(rows, cols))
    out = softmax(Tensor(x))
    np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(rows), atol=1e-5)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gelu_between_zero_and_identity(seed):
    x = np.random.default_rng(seed).normal(0, 3, size=20)
    y = gelu(Tensor(x)).data
    assert (y >= np.minimum(x, 0) - 1e-7).all()
    assert (y <= np.maximum(x, 0) + 1e-7).all()


def test_float32_default_and_float64_passthrough():
    assert Tensor(np.ones(3, dtype=np.int64)).dtype == np.float32
    assert Tensor(np.ones(3, dtype=np.float64)).dtype == np.float64
    assert Tensor(np.ones(3, dtype=np.float16)).dtype == np.float32
