import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hifiyolo.nncore import (
    AdamW,
    Conv,
    GradCheckError,
    ShapeError,
    Tensor,
    grad_check,
    load_tensors,
    no_grad,
    save_tensors,
)
from hifiyolo.nncore import functional as F


def t64(rng, *shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


# one entry per operator: builds inputs and the scalar function to check
def _cases():
    def unary(op, lo=-1.0, hi=1.0):
        def build(rng):
            x = t64(rng, 3, 4, lo=lo, hi=hi)
            w = rng.standard_normal((3, 4))
            return [x], lambda x: F.sum(op(x) * Tensor(w))

        return build

    def binary(op, lo=-1.0, hi=1.0):
        def build(rng):
            a, b = t64(rng, 3, 4), t64(rng, 3, 4, lo=lo, hi=hi)
            w = rng.standard_normal((3, 4))
            return [a, b], lambda a, b: F.sum(op(a, b) * Tensor(w))

        return build

    def conv(stride, k, pad):
        def build(rng):
            x = t64(rng, 2, 3, 6, 6)
            wt = t64(rng, 4, 3, k, k)
            b = t64(rng, 4)
            probe = rng.standard_normal(F.conv2d(x, wt, b, stride, pad).shape)
            return [x, wt, b], lambda x, wt, b: F.sum(F.conv2d(x, wt, b, stride, pad) * Tensor(probe))

        return build

    def grid(rng):
        x = t64(rng, 2, 3, 5, 4)
        c = t64(rng, 2, 6, 7, 2, lo=-0.9, hi=0.9)
        probe = rng.standard_normal((2, 3, 6, 7))
        return [x, c], lambda x, c: F.sum(F.grid_sample(x, c) * Tensor(probe))

    def attention(rng):
        q, k, v = t64(rng, 2, 5, 3), t64(rng, 2, 7, 3), t64(rng, 2, 7, 4)
        probe = rng.standard_normal((2, 5, 4))
        return [q, k, v], lambda q, k, v: F.sum(F.scaled_dot_attention(q, k, v) * Tensor(probe))

    def resize(scale, mode):
        def build(rng):
            x = t64(rng, 1, 2, 4, 6)
            probe = rng.standard_normal(F.resize(x, scale, mode).shape)
            return [x], lambda x: F.sum(F.resize(x, scale, mode) * Tensor(probe))

        return build

    def pool(fn):
        def build(rng):
            x = t64(rng, 1, 2, 4, 6)
            probe = rng.standard_normal((1, 2, 2, 3))
            return [x], lambda x: F.sum(fn(x, 2) * Tensor(probe))

        return build

    def matmul(rng):
        a, b = t64(rng, 2, 3, 4), t64(rng, 2, 4, 5)
        probe = rng.standard_normal((2, 3, 5))
        return [a, b], lambda a, b: F.sum(F.matmul(a, b) * Tensor(probe))

    def softmax(rng):
        x = t64(rng, 3, 5, lo=-3, hi=3)
        probe = rng.standard_normal((3, 5))
        return [x], lambda x: F.sum(F.softmax(x, axis=-1) * Tensor(probe))

    def bce(rng):
        x = t64(rng, 4, 3, lo=-4, hi=4)
        target = rng.random((4, 3))
        return [x], lambda x: F.mean(F.bce_with_logits(x, target))

    def shaping(rng):
        x = t64(rng, 2, 3, 4)
        probe = rng.standard_normal((4, 2, 3))
        return [x], lambda x: F.sum(F.transpose(F.reshape(x, (2, 12)), (1, 0)).reshape((4, 3, 2)).transpose((0, 2, 1)) * Tensor(probe[:, :, :].reshape(4, 2, 3)))

    def indexing(rng):
        x = t64(rng, 5, 4)
        rows = np.array([0, 3, 3, 1])
        probe = rng.standard_normal((4, 4))
        return [x], lambda x: F.sum(F.take_rows(x, rows) * Tensor(probe)) + F.sum(x[1:4, ::2]) + F.sum(x[np.array([0, 0, 2])])

    def concat(rng):
        a, b = t64(rng, 2, 3, 2, 2), t64(rng, 2, 1, 2, 2)
        probe = rng.standard_normal((2, 4, 2, 2))
        return [a, b], lambda a, b: F.sum(F.channel_concat([a, b]) * Tensor(probe)) + F.sum(F.concat([a, a], axis=0))

    def reductions(rng):
        x = t64(rng, 3, 4, 2)
        return [x], lambda x: F.sum(F.mean(x, axis=1) * F.sum(x, axis=(1,))) + F.mean(x * x)

    return {
        "add": binary(F.add),
        "sub": binary(F.sub),
        "mul": binary(F.mul),
        "div": binary(F.div, lo=0.5, hi=2.0),
        "maximum": binary(F.maximum),
        "minimum": binary(F.minimum),
        "power": unary(lambda x: F.power(x, 3.0)),
        "exp": unary(F.exp),
        "log": unary(F.log, lo=0.2, hi=3.0),
        "sqrt": unary(F.sqrt, lo=0.2, hi=3.0),
        "atan": unary(F.atan, lo=-3, hi=3),
        "sigmoid": unary(F.sigmoid, lo=-4, hi=4),
        "silu": unary(F.silu, lo=-4, hi=4),
        "clamp_min": unary(lambda x: F.clamp_min(x, 0.1)),
        "conv2d_s1_k3": conv(1, 3, 1),
        "conv2d_s2_k3": conv(2, 3, 1),
        "conv2d_k1": conv(1, 1, 0),
        "grid_sample": grid,
        "attention": attention,
        "resize_up_bilinear": resize(2, "bilinear"),
        "resize_down_bilinear": resize(0.5, "bilinear"),
        "resize_up_nearest": resize(2, "nearest"),
        "avg_pool2d": pool(F.avg_pool2d),
        "max_pool2d": pool(F.max_pool2d),
        "matmul": matmul,
        "softmax": softmax,
        "bce_with_logits": bce,
        "reshape_transpose": shaping,
        "indexing": indexing,
        "concat": concat,
        "reductions": reductions,
    }


CASES = _cases()


@pytest.mark.parametrize("name", sorted(CASES))
def test_operator_gradients(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    inputs, f = CASES[name](rng)
    report = grad_check(f, inputs, tol=1e-4)
    assert report.passed, f"{name}: {report}"


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), name=st.sampled_from(["conv2d_s2_k3", "grid_sample", "attention", "mul", "silu"]))
def test_operator_gradients_random_seeds(seed, name):
    inputs, f = CASES[name](np.random.default_rng(seed))
    assert grad_check(f, inputs, tol=1e-4).passed


def test_grad_check_flags_wrong_gradient():
    rng = np.random.default_rng(0)
    x = t64(rng, 4)

    def bad_square(x):
        # forward x^2 but backward claims 3x
        return Tensor._make(x.data**2, (x,), lambda g: (3.0 * x.data * g,), "bad_square")

    report = grad_check(lambda x: F.sum(bad_square(x)), [x])
    assert not report.passed
    assert report.max_rel_error > 0.1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_grad_check_names_nonfinite_node():
    x = Tensor(np.array([-1.0, 2.0]), requires_grad=True)
    report = grad_check(lambda x: F.sum(F.log(x)), [x])
    assert not report.passed
    assert "log" in report.message


def test_grad_check_requires_float64():
    with pytest.raises(GradCheckError):
        grad_check(lambda x: F.sum(x), [Tensor(np.ones(3, dtype=np.float32), requires_grad=True)])


def test_backward_accumulates_over_reuse():
    x = Tensor(np.array([2.0, 3.0]), requires_grad=True)
    y = F.sum(x * x + x)
    y.backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_conv_shape_errors():
    x = Tensor(np.zeros((1, 3, 4, 4)))
    with pytest.raises(ShapeError):
        F.conv2d(x, Tensor(np.zeros((2, 4, 3, 3))), pad=1)


def test_conv_matches_direct_sum():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    out = F.conv2d(Tensor(x), Tensor(w), stride=2, pad=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((1, 3, 3, 3))
    for o in range(3):
        for i in range(3):
            for j in range(3):
                ref[0, o, i, j] = np.sum(xp[0, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3] * w[o])
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_grid_sample_identity_grid_returns_input():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 2, 4, 5))
    grid = F.base_grid(4, 5)[None]
    np.testing.assert_allclose(F.grid_sample(Tensor(x), Tensor(grid)).data, x, atol=1e-14)


def test_adamw_first_step_and_decay():
    p = Tensor(np.array([[1.0, -2.0]]), requires_grad=True)
    b = Tensor(np.array([0.5]), requires_grad=True)
    opt = AdamW([p, b], lr=0.1, weight_decay=0.01)
    p.grad = np.array([[0.3, -0.7]])
    b.grad = np.array([2.0])
    opt.step()
    # first bias-corrected Adam step moves every coordinate by lr * sign(grad)
    np.testing.assert_allclose(p.data, np.array([[1.0, -2.0]]) * (1 - 0.001) - 0.1 * np.sign([[0.3, -0.7]]), atol=1e-7)
    np.testing.assert_allclose(b.data, [0.5 - 0.1], atol=1e-7)


def test_adamw_minimizes_quadratic():
    rng = np.random.default_rng(3)
    target = rng.standard_normal((4, 3))
    p = Tensor(np.zeros((4, 3)), requires_grad=True)
    opt = AdamW([p], lr=0.05, weight_decay=0.0)
    for _ in range(500):
        opt.zero_grad()
        loss = F.sum((p - Tensor(target)) ** 2)
        loss.backward()
        opt.step()
    np.testing.assert_allclose(p.data, target, atol=1e-2)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    tensors = {"a": rng.standard_normal((2, 3)).astype(np.float32), "layer.0/w": rng.standard_normal(5).astype(np.float32), "s": np.array(3.0, dtype=np.float32)}
    save_tensors(tmp_path / "x.ckpt", tensors)
    back = load_tensors(tmp_path / "x.ckpt")
    assert list(back) == list(tensors)
    for k in tensors:
        np.testing.assert_array_equal(back[k], tensors[k])


def test_checkpoint_layout_is_little_endian_records(tmp_path):
    save_tensors(tmp_path / "x.ckpt", {"ab": np.array([[1.0, 2.0]], dtype=np.float32)})
    raw = (tmp_path / "x.ckpt").read_bytes()
    import struct

    n, = struct.unpack_from("<I", raw, 0)
    assert n == 2 and raw[4:6] == b"ab"
    rank, d0, d1 = struct.unpack_from("<III", raw, 6)
    assert (rank, d0, d1) == (2, 1, 2)
    assert struct.unpack_from("<2f", raw, 18) == (1.0, 2.0)


def test_module_state_dict_round_trip():
    rng = np.random.default_rng(5)
    a = Conv(2, 3, 3, rng)
    b = Conv(2, 3, 3, np.random.default_rng(6))
    b.load_state_dict(a.state_dict())
    x = Tensor(rng.standard_normal((1, 2, 4, 4)).astype(np.float32))
    np.testing.assert_array_equal(a(x).data, b(x).data)
