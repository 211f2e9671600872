import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ethfraud.numerics import (
    Adam, AdamState, DimensionError, Parameter, Tensor, adam_step, attention, check_gradients,
    load_checkpoint, matmul, save_checkpoint, softmax,
)
from ethfraud.numerics import tensor as T
from ethfraud.numerics.nn import LayerNorm, TransformerBlock, key_padding_mask
from ethfraud.numerics.optim import MissingGradientError


def naive_matmul(a, b):
    n, k = a.shape
    k2, m = b.shape
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


# ----------------------------------------------------------------- matmul
def test_matmul_identity():
    out = matmul(Tensor([[1, 0], [0, 1]]), Tensor([[3, 4], [5, 6]]))
    assert out.data.tolist() == [[3, 4], [5, 6]]


def test_matmul_row_by_column():
    assert matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data.tolist() == [[11]]


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b), atol=1e-12)


def test_matmul_shape_error_reports_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_bit_identical_across_runs():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(17, 33)), rng.normal(size=(33, 9))
    first = matmul(Tensor(a), Tensor(b)).data
    second = matmul(Tensor(a.copy()), Tensor(b.copy())).data
    assert first.tobytes() == second.tobytes()


# ---------------------------------------------------------------- softmax
@pytest.mark.parametrize("x, expected", [
    ([0.0, 0.0], [0.5, 0.5]),
    ([1000.0, 1000.0], [0.5, 0.5]),
    ([0.0, math.log(3)], [0.25, 0.75]),
])
def test_softmax_examples(x, expected):
    out = softmax(Tensor(x), axis=0).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, expected, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_sums_to_one_and_is_shift_invariant(x, shift):
    out = softmax(Tensor(x), axis=1).data
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(softmax(Tensor(x + shift), axis=1).data, out, atol=1e-9)


# -------------------------------------------------------------- attention
def test_attention_single_key():
    out = attention(Tensor([[0.3, -1.2]]), Tensor([[0.3, -1.2]]), Tensor([[7.0]]))
    np.testing.assert_allclose(out.data, [[7.0]], atol=1e-12)


def test_attention_identical_keys_average_values():
    k = Tensor([[1.0, 2.0], [1.0, 2.0]])
    out = attention(Tensor([[0.5, -0.1]]), k, Tensor([[2.0], [4.0]]))
    np.testing.assert_allclose(out.data, [[3.0]], atol=1e-12)


def test_attention_matches_per_row_formula():
    rng = np.random.default_rng(2)
    q, k, v = rng.normal(size=(2, 3)), rng.normal(size=(3, 3)), rng.normal(size=(3, 2))
    expected = np.zeros((2, 2))
    for i in range(2):
        scores = [sum(q[i, t] * k[j, t] for t in range(3)) / math.sqrt(3) for j in range(3)]
        m = max(scores)
        w = [math.exp(s - m) for s in scores]
        z = sum(w)
        for c in range(2):
            expected[i, c] = sum(w[j] / z * v[j, c] for j in range(3))
    np.testing.assert_allclose(attention(Tensor(q), Tensor(k), Tensor(v)).data, expected, atol=1e-12)


def test_attention_dimension_mismatch():
    with pytest.raises(DimensionError):
        attention(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))), Tensor(np.ones((2, 1))))
    with pytest.raises(DimensionError):
        attention(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))), Tensor(np.ones((4, 1))))


def test_padding_mask_removes_keys():
    rng = np.random.default_rng(3)
    q, k, v = rng.normal(size=(1, 1, 3, 4)), rng.normal(size=(1, 1, 5, 4)), rng.normal(size=(1, 1, 5, 2))
    valid = np.array([[True, True, True, False, False]])
    masked = attention(Tensor(q), Tensor(k), Tensor(v), key_padding_mask(valid)).data
    trimmed = attention(Tensor(q), Tensor(k[:, :, :3]), Tensor(v[:, :, :3])).data
    np.testing.assert_allclose(masked, trimmed, atol=1e-14)


# ------------------------------------------------------------------- adam
def scalar_adam(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        out.append(theta)
    return out


def test_adam_zero_gradient_is_fixed_point():
    p = Parameter(np.array([1.5, -2.0]), name="p")
    state = AdamState()
    for _ in range(3):
        p.grad = np.zeros(2)
        adam_step([p], state, lr=0.1)
    assert p.data.tolist() == [1.5, -2.0]


def test_adam_first_step_moves_by_lr():
    p = Parameter(np.array([0.0]), name="p")
    p.grad = np.array([1.0])
    adam_step([p], AdamState(), lr=0.1, step=1)
    assert p.data[0] == pytest.approx(-0.1, abs=1e-8)


def test_adam_trajectory_matches_scalar_reference():
    rng = np.random.default_rng(4)
    grads = rng.normal(size=10)
    p = Parameter(np.array([0.7]), name="p")
    opt = Adam([p], lr=0.05)
    got = []
    for g in grads:
        p.grad = np.array([g])
        opt.step()
        got.append(p.data[0])
    np.testing.assert_allclose(got, scalar_adam(0.7, grads, 0.05), atol=1e-12, rtol=0)


def test_adam_missing_gradient():
    p = Parameter(np.zeros(2), name="p")
    with pytest.raises(MissingGradientError):
        adam_step([p], AdamState(), lr=0.1)


def test_adam_deterministic():
    def run():
        p = Parameter(np.array([1.0, 2.0]), name="p")
        opt = Adam([p], lr=0.01)
        for i in range(5):
            p.grad = np.array([0.3 * i, -0.1])
            opt.step()
        return p.data.tobytes()
    assert run() == run()


# ---------------------------------------------------------- gradient checks
def test_check_gradients_square():
    theta = Parameter(np.array([3.0]), name="theta")
    assert check_gradients(lambda: (theta * theta).sum(), [theta]) <= 1e-9


def test_check_gradients_cross_entropy_softmax_matmul():
    rng = np.random.default_rng(5)
    w = Parameter(rng.uniform(-1, 1, (4, 4)), name="w")
    x = Tensor(rng.uniform(-1, 1, (4, 4)))
    target = np.eye(4)[[0, 2, 1, 3]]

    def f():
        p = softmax(matmul(x, w), axis=-1)
        return -(T.log(p) * target).sum()

    assert check_gradients(f, [w]) <= 1e-4


def test_check_gradients_attention_head():
    rng = np.random.default_rng(6)
    x = Tensor(rng.uniform(-1, 1, (3, 8)))
    wq, wk, wv = (Parameter(rng.uniform(-1, 1, (8, 8)), name=n) for n in "qkv")

    def f():
        out = attention(matmul(x, wq), matmul(x, wk), matmul(x, wv))
        return (out * out).sum()

    assert check_gradients(f, [wq, wk, wv]) <= 1e-4


def test_check_gradients_rejects_non_finite():
    theta = Parameter(np.array([-1.0]), name="theta")
    from ethfraud.numerics.gradcheck import NonFiniteError
    with pytest.raises(NonFiniteError):
        check_gradients(lambda: T.log(theta).sum(), [theta])


OPS = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / (b * b + 1.0),
    "broadcast_add": lambda a, b: a + b[0],
    "matmul": lambda a, b: matmul(a, b.T),
    "exp": lambda a, b: T.exp(a) * b,
    "log": lambda a, b: T.log(a * a + 1.0) * b,
    "tanh": lambda a, b: T.tanh(a) * b,
    "relu": lambda a, b: T.relu(a) * b,
    "gelu": lambda a, b: T.gelu(a) * b,
    "pow": lambda a, b: (a * a + 1.0) ** 1.5 * b,
    "softmax": lambda a, b: softmax(a, axis=0) * b,
    "log_softmax": lambda a, b: T.log_softmax(a, axis=-1) * b,
    "sum_axis": lambda a, b: a.sum(axis=1, keepdims=True) * b,
    "mean": lambda a, b: a.mean(axis=0) * b[1],
    "reshape_transpose": lambda a, b: a.reshape(4, 3).T.reshape(3, 4) * b,
    "getitem": lambda a, b: a[1:, ::2] * b[:2, :2],
    "fancy_getitem": lambda a, b: a[[0, 2, 0]] * b[:3],
    "concat": lambda a, b: T.concat([a, b], axis=1) * 0.5,
    "take_rows": lambda a, b: T.take_rows(a, np.array([[0, 2], [2, 1]])) * b[:2, :4].reshape(2, 1, 4),
    "scatter": lambda a, b: T.scatter_rows(np.ones((5, 4)), np.array([3, 0, 1]), a) * 2.0,
    "layer_norm": lambda a, b: T.layer_norm(a, b[0], b[1]),
    "clip": lambda a, b: T.clip(a, -0.5, 0.5) * b,
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_every_op_matches_finite_differences(name):
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    a = Parameter(rng.uniform(-1, 1, (3, 4)), name="a")
    b = Parameter(rng.uniform(-1, 1, (3, 4)), name="b")
    fn = OPS[name]
    weights = rng.uniform(-1, 1, fn(a, b).shape)
    assert check_gradients(lambda: (fn(a, b) * weights).sum(), [a, b]) <= 1e-4


def test_spmm_gradient():
    import scipy.sparse as sp
    rng = np.random.default_rng(8)
    m = sp.random(5, 5, density=0.4, random_state=8, format="csr")
    x = Parameter(rng.uniform(-1, 1, (5, 3)), name="x")
    w = rng.uniform(-1, 1, (5, 3))
    assert check_gradients(lambda: (T.spmm(m, x) * w).sum(), [x]) <= 1e-4


def test_transformer_block_gradient():
    rng = np.random.default_rng(9)
    block = TransformerBlock(8, 2, 16, rng).eval()
    x = Tensor(rng.uniform(-1, 1, (2, 4, 8)))
    mask = key_padding_mask(np.array([[True] * 4, [True, True, True, False]]))
    params = block.parameters()
    w = rng.uniform(-1, 1, (2, 4, 8))
    assert check_gradients(lambda: (block(x, mask) * w).sum(), params) <= 1e-4


def test_backward_accumulates_shared_leaf():
    x = Parameter(np.array([2.0]), name="x")
    y = x * x + x * 3.0
    y.sum().backward()
    assert x.grad[0] == pytest.approx(7.0)


def test_no_grad_skips_graph():
    x = Parameter(np.ones(3), name="x")
    with T.no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_layer_norm_of_zero_is_beta():
    ln = LayerNorm(4)
    ln.beta.data = np.arange(4.0)
    np.testing.assert_allclose(ln(Tensor(np.zeros((2, 4)))).data, np.tile(np.arange(4.0), (2, 1)))


# ------------------------------------------------------------- checkpoints
def test_checkpoint_round_trip(tmp_path):
    arrays = {"w": np.arange(6.0).reshape(2, 3), "b": np.array([-1.5]), "s": np.array(2.0)}
    save_checkpoint(tmp_path / "m.ckpt", arrays, {"layers": 2})
    loaded, meta = load_checkpoint(tmp_path / "m.ckpt")
    assert meta == {"layers": 2}
    assert list(loaded) == ["w", "b", "s"]
    for k in arrays:
        np.testing.assert_array_equal(loaded[k], arrays[k])


def test_checkpoint_payload_is_little_endian_float64(tmp_path):
    save_checkpoint(tmp_path / "m.ckpt", {"x": np.array([1.0, 2.0])})
    raw = (tmp_path / "m.ckpt").read_bytes()
    header, payload = raw.split(b"\n", 1)
    assert b'"shape":[2]' in header
    assert np.frombuffer(payload, dtype="<f8").tolist() == [1.0, 2.0]


def test_checkpoint_truncated(tmp_path):
    from ethfraud.numerics.checkpoint import CheckpointError
    save_checkpoint(tmp_path / "m.ckpt", {"x": np.ones(4)})
    path = tmp_path / "m.ckpt"
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
