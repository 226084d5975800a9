"""Tensor core: ops, autodiff gradchecks against float64 references, RNG, FFT1."""

import numpy as np
import pytest

from longvid import numcore as nc
from longvid.errors import ContractError, NumericError, ShapeError
from longvid.numcore import Rng, Tensor


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    return float(np.abs(analytic - numeric).max() / max(np.abs(numeric).max(), 1e-8))


# ---------------------------------------------------------------------------
# RNG


def test_randn_deterministic_per_seed():
    a = nc.randn(Rng(7), [4]).data
    b = nc.randn(Rng(7), [4]).data
    assert np.array_equal(a, b)
    c = nc.randn(Rng(8), [4]).data
    assert not np.array_equal(a, c)


def test_randn_moments():
    x = nc.randn(Rng(123), [10000]).data
    assert abs(x.mean()) < 0.05
    assert abs(x.std() - 1.0) < 0.05


def test_randn_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        nc.randn(Rng(0), [0])
    with pytest.raises(ShapeError):
        nc.randn(Rng(0), [3, -1])


def test_rng_child_streams_differ():
    r = Rng(42)
    a = r.child("a").standard_normal((8,))
    b = r.child("b").standard_normal((8,))
    assert not np.array_equal(a, b)
    again = Rng(42).child("a").standard_normal((8,))
    assert np.array_equal(a, again)


# ---------------------------------------------------------------------------
# matmul


def test_matmul_identity():
    b = nc.randn(Rng(1), [3, 2])
    out = nc.matmul(Tensor(np.eye(3, dtype=np.float32)), b)
    assert np.allclose(out.data, b.data)


def test_matmul_hand_case():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[1.0], [1.0]])
    assert np.array_equal(nc.matmul(a, b).data, [[3.0], [7.0]])


def test_matmul_shape_errors():
    with pytest.raises(ShapeError):
        nc.matmul(nc.randn(Rng(0), [2, 3]), nc.randn(Rng(0), [4, 2]))
    with pytest.raises(ShapeError):
        nc.matmul(nc.randn(Rng(0), [2, 2, 3]), nc.randn(Rng(0), [3, 3, 4]))


def test_matmul_gradcheck():
    rng = Rng(5)
    a = Tensor(rng.standard_normal((5, 4)), trainable=True)
    b64 = rng.standard_normal((4, 6)).astype(np.float64)
    loss = nc.sum_all(nc.matmul(a, Tensor(b64)))
    nc.backward(loss)
    gn = nc.numeric_gradient(lambda x: float(np.sum(x @ b64)), a.data)
    assert rel_err(a.grad, gn) < 1e-4


def test_matmul_batched_gradcheck():
    rng = Rng(6)
    a = Tensor(rng.standard_normal((2, 3, 4)), trainable=True)
    b = Tensor(rng.standard_normal((2, 4, 5)), trainable=True)
    nc.backward(nc.sum_all(nc.matmul(a, b)))
    gn = nc.numeric_gradient(lambda x: float(np.sum(x @ b.data.astype(np.float64))), a.data)
    assert rel_err(a.grad, gn) < 1e-4
    gn = nc.numeric_gradient(lambda x: float(np.sum(a.data.astype(np.float64) @ x)), b.data)
    assert rel_err(b.grad, gn) < 1e-4


# ---------------------------------------------------------------------------
# softmax


def test_softmax_uniform_row():
    out = nc.softmax_lastdim(Tensor([0.0, 0.0, 0.0]))
    assert np.allclose(out.data, [1 / 3] * 3, atol=1e-7)


def test_softmax_no_overflow():
    out = nc.softmax_lastdim(Tensor([1000.0, 0.0]))
    assert np.isfinite(out.data).all()
    assert out.data[0] > 0.999999


def test_softmax_rows_sum_to_one():
    x = nc.randn(Rng(3), [7, 9])
    out = nc.softmax_lastdim(x)
    assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-6)
    assert (out.data >= 0).all()


def test_softmax_rejects_nonfinite():
    with pytest.raises(NumericError):
        nc.softmax_lastdim(Tensor([np.nan, 1.0]))


def _softmax64(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def test_softmax_gradcheck():
    rng = Rng(9)
    x = Tensor(rng.standard_normal((4, 6)), trainable=True)
    w = rng.standard_normal((4, 6)).astype(np.float64)
    nc.backward(nc.sum_all(nc.mul(nc.softmax_lastdim(x), Tensor(w))))
    gn = nc.numeric_gradient(lambda v: float(np.sum(_softmax64(v) * w)), x.data)
    assert rel_err(x.grad, gn) < 1e-4


# ---------------------------------------------------------------------------
# layer_norm


def test_layer_norm_constant_row_is_zero():
    x = Tensor(np.full((2, 8), 3.5, dtype=np.float32))
    out = nc.layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)))
    assert np.allclose(out.data, 0.0, atol=1e-6)


def test_layer_norm_mean_is_bias():
    rng = Rng(2)
    x = Tensor(rng.standard_normal((5, 16)))
    bias = rng.standard_normal((16,))
    out = nc.layer_norm(x, Tensor(np.ones(16)), Tensor(bias))
    assert np.allclose(out.data.mean(axis=-1), bias.mean(), atol=1e-5)


def test_layer_norm_shape_errors():
    x = nc.randn(Rng(0), [3, 8])
    with pytest.raises(ShapeError):
        nc.layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(8)))


def _layernorm64(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def test_layer_norm_gradcheck():
    rng = Rng(4)
    x = Tensor(rng.standard_normal((3, 8)), trainable=True)
    g = Tensor(rng.standard_normal((8,)) * 0.5 + 1.0, trainable=True)
    b = Tensor(rng.standard_normal((8,)), trainable=True)
    w = rng.standard_normal((3, 8)).astype(np.float64)
    nc.backward(nc.sum_all(nc.mul(nc.layer_norm(x, g, b), Tensor(w))))
    g64, b64 = g.data.astype(np.float64), b.data.astype(np.float64)
    gn = nc.numeric_gradient(lambda v: float(np.sum(_layernorm64(v, g64, b64) * w)), x.data)
    assert rel_err(x.grad, gn) < 1e-4
    x64 = x.data.astype(np.float64)
    gn = nc.numeric_gradient(lambda v: float(np.sum(_layernorm64(x64, v, b64) * w)), g.data)
    assert rel_err(g.grad, gn) < 1e-4
    gn = nc.numeric_gradient(lambda v: float(np.sum(_layernorm64(x64, g64, v) * w)), b.data)
    assert rel_err(b.grad, gn) < 1e-4


# ---------------------------------------------------------------------------
# attention


def test_attention_single_kv_returns_value():
    rng = Rng(8)
    q = Tensor(rng.standard_normal((5, 4)))
    k = Tensor(rng.standard_normal((1, 4)))
    v = Tensor(rng.standard_normal((1, 4)))
    out = nc.scaled_dot_attention(q, k, v)
    assert np.allclose(out.data, np.broadcast_to(v.data, (5, 4)), atol=1e-6)


def _attention64(q, k, v):
    scores = q @ k.T / np.sqrt(q.shape[-1])
    return _softmax64(scores) @ v


def test_attention_matches_direct_formula():
    eye = np.eye(2, dtype=np.float32)
    out = nc.scaled_dot_attention(Tensor(eye), Tensor(eye), Tensor(eye))
    ref = _attention64(eye.astype(np.float64), eye.astype(np.float64), eye.astype(np.float64))
    assert np.allclose(out.data, ref, atol=1e-6)


def test_attention_kv_permutation_invariant():
    rng = Rng(12)
    q = Tensor(rng.standard_normal((3, 4)))
    k = rng.standard_normal((6, 4))
    v = rng.standard_normal((6, 4))
    out = nc.scaled_dot_attention(q, Tensor(k), Tensor(v)).data
    perm = Rng(13).integers(0, 6, (6,))
    perm = np.argsort(rng.standard_normal((6,)))  # a fixed permutation
    out_p = nc.scaled_dot_attention(q, Tensor(k[perm]), Tensor(v[perm])).data
    assert np.allclose(out, out_p, atol=1e-5)


def test_attention_gradcheck():
    rng = Rng(14)
    q = Tensor(rng.standard_normal((3, 4)), trainable=True)
    k = Tensor(rng.standard_normal((5, 4)), trainable=True)
    v = Tensor(rng.standard_normal((5, 4)), trainable=True)
    nc.backward(nc.sum_all(nc.scaled_dot_attention(q, k, v)))
    k64, v64 = k.data.astype(np.float64), v.data.astype(np.float64)
    q64 = q.data.astype(np.float64)
    gn = nc.numeric_gradient(lambda x: float(np.sum(_attention64(x, k64, v64))), q.data)
    assert rel_err(q.grad, gn) < 1e-4
    gn = nc.numeric_gradient(lambda x: float(np.sum(_attention64(q64, x, v64))), k.data)
    assert rel_err(k.grad, gn) < 1e-4
    gn = nc.numeric_gradient(lambda x: float(np.sum(_attention64(q64, k64, x))), v.data)
    assert rel_err(v.grad, gn) < 1e-4


# ---------------------------------------------------------------------------
# backward contracts


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6, dtype=np.float32).reshape(2, 3), trainable=True)
    nc.backward(nc.sum_all(x))
    assert np.array_equal(x.grad, np.ones((2, 3), dtype=np.float32))


def test_backward_elementwise_square():
    x = Tensor([1.0, 2.0, 3.0], trainable=True)
    nc.backward(nc.sum_all(nc.mul(x, x)))
    assert np.allclose(x.grad, [2.0, 4.0, 6.0])


def test_backward_rejects_nonscalar():
    x = Tensor([1.0, 2.0], trainable=True)
    with pytest.raises(ContractError):
        nc.backward(nc.mul(x, x))


def test_backward_leaves_nontrainable_untouched():
    x = Tensor([1.0, 2.0], trainable=True)
    c = Tensor([3.0, 4.0])
    nc.backward(nc.sum_all(nc.mul(x, c)))
    assert c.grad is None
    assert np.allclose(x.grad, [3.0, 4.0])


def _silu64(x):
    return x / (1.0 + np.exp(-x))


def test_mlp_composite_gradcheck():
    rng = Rng(21)
    x64 = rng.standard_normal((4, 6)).astype(np.float64)
    y64 = rng.standard_normal((4, 3)).astype(np.float64)
    w1 = Tensor(rng.standard_normal((6, 8)) * 0.5, trainable=True)
    b1 = Tensor(rng.standard_normal((8,)) * 0.1, trainable=True)
    w2 = Tensor(rng.standard_normal((8, 3)) * 0.5, trainable=True)

    def forward():
        h = nc.silu(nc.add_lastdim(nc.matmul(Tensor(x64), w1), b1))
        return nc.mse(nc.matmul(h, w2), Tensor(y64))

    nc.backward(forward())

    def ref(w1v, b1v, w2v):
        h = _silu64(x64 @ w1v + b1v)
        return float(np.mean((h @ w2v - y64) ** 2))

    w1d, b1d, w2d = (t.data.astype(np.float64) for t in (w1, b1, w2))
    for param, args in ((w1, lambda v: ref(v, b1d, w2d)),
                        (b1, lambda v: ref(w1d, v, w2d)),
                        (w2, lambda v: ref(w1d, b1d, v))):
        gn = nc.numeric_gradient(args, param.data)
        assert rel_err(param.grad, gn) < 1e-4


# ---------------------------------------------------------------------------
# structural ops


def test_add_rejects_mismatch():
    with pytest.raises(ShapeError):
        nc.add(nc.randn(Rng(0), [2, 3]), nc.randn(Rng(0), [3, 2]))


def test_scalar_broadcast_allowed():
    x = Tensor([1.0, 2.0])
    assert np.allclose((x + 1.0).data, [2.0, 3.0])
    assert np.allclose((2.0 * x).data, [2.0, 4.0])


def test_index_select_gradient_scatter_adds():
    x = Tensor(np.arange(4, dtype=np.float32).reshape(4, 1), trainable=True)
    out = nc.index_select(x, 0, [0, 1, 1, 1])
    nc.backward(nc.sum_all(out))
    assert np.array_equal(x.grad.reshape(-1), [1.0, 3.0, 0.0, 0.0])


def test_tile_leading_gradient_sums():
    x = Tensor([1.0, 2.0], trainable=True)
    nc.backward(nc.sum_all(nc.tile_leading(x, 5)))
    assert np.array_equal(x.grad, [5.0, 5.0])


def test_add_lastdim_gradcheck():
    rng = Rng(31)
    x = Tensor(rng.standard_normal((3, 4, 5)), trainable=True)
    b = Tensor(rng.standard_normal((5,)), trainable=True)
    nc.backward(nc.sum_all(nc.add_lastdim(x, b)))
    assert np.array_equal(b.grad, np.full(5, 12.0, dtype=np.float32))
    assert np.array_equal(x.grad, np.ones((3, 4, 5), dtype=np.float32))


def test_concat_and_transpose_gradients():
    a = Tensor(np.ones((2, 3), dtype=np.float32), trainable=True)
    b = Tensor(np.ones((2, 2), dtype=np.float32), trainable=True)
    out = nc.concat([a, b], axis=1)
    out = nc.transpose(out, (1, 0))
    nc.backward(nc.sum_all(nc.mul(out, Tensor(np.arange(10, dtype=np.float32).reshape(5, 2)))))
    assert a.grad.shape == (2, 3) and b.grad.shape == (2, 2)


# ---------------------------------------------------------------------------
# Adam


def test_adam_zero_gradient_keeps_params():
    p = Tensor([1.0, -2.0], trainable=True)
    p.grad = np.zeros(2, dtype=np.float32)
    before = p.data.copy()
    nc.adam_step([p], nc.AdamState(), lr=0.1)
    assert np.array_equal(p.data, before)


def test_adam_zero_lr_is_identity():
    p = Tensor([1.0, -2.0], trainable=True)
    p.grad = np.array([0.5, -0.5], dtype=np.float32)
    before = p.data.copy()
    nc.adam_step([p], nc.AdamState(), lr=0.0)
    assert np.array_equal(p.data, before)


def test_adam_constant_gradient_step_approaches_lr():
    # with a constant gradient, |update| -> lr * g/|g| as moments saturate
    p = Tensor(np.zeros(3, dtype=np.float32), trainable=True)
    state = nc.AdamState()
    g = np.array([0.3, -0.7, 1.9], dtype=np.float32)
    lr = 0.01
    prev = p.data.copy()
    for _ in range(500):
        p.grad = g.copy()
        nc.adam_step([p], state, lr)
        step = p.data - prev
        prev = p.data.copy()
    assert np.allclose(np.abs(step), lr, rtol=0.02)
    assert np.array_equal(np.sign(step), -np.sign(g))


def test_clip_global_norm():
    p = Tensor(np.zeros(4, dtype=np.float32), trainable=True)
    p.grad = np.full(4, 10.0, dtype=np.float32)
    norm = nc.clip_global_norm([p], 1.0)
    assert norm == pytest.approx(20.0)
    assert np.linalg.norm(p.grad) == pytest.approx(1.0, rel=1e-5)


# ---------------------------------------------------------------------------
# FFT1


def test_fft1_roundtrip(tmp_path):
    arr = nc.randn(Rng(77), [3, 4, 5]).data
    path = tmp_path / "t.fft1"
    nc.write_fft1(path, arr)
    back = nc.read_fft1(path)
    assert back.dtype == np.float32
    assert np.array_equal(back, arr)
    raw = path.read_bytes()
    assert raw[:4] == b"FFT1"
    assert int.from_bytes(raw[4:8], "little") == 3
    assert len(raw) == 4 + 4 + 12 + 3 * 4 * 5 * 4


def test_fft1_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.fft1"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValueError):
        nc.read_fft1(path)


# ---------------------------------------------------------------------------
# no_grad


def test_no_grad_skips_tape():
    x = Tensor([1.0, 2.0], trainable=True)
    with nc.no_grad():
        out = nc.mul(x, x)
    assert out._parents == ()
