import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cases import PRIMITIVE_CASES
from gradcheck import grad_check, rel_err
from seqchain import autodiff as ad
from seqchain.autodiff import Tape, Tensor, finite_diff_gradient
from seqchain.errors import NumericError, ShapeError


def test_add_elementwise():
    out = ad.add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0]))
    assert np.array_equal(out.data, [4.0, 6.0])


def test_matmul_identity_passthrough():
    a = np.arange(8, dtype=float).reshape(2, 4)
    out = ad.matmul(Tensor(np.eye(2)), Tensor(a))
    assert np.allclose(out.data, a)


def test_conv1d_matches_sliding_window():
    out = ad.conv1d(Tensor([1.0, 2.0, 3.0, 4.0]), Tensor([1.0, 0.0]), stride=1)
    assert np.array_equal(out.data, [1.0, 2.0, 3.0])


def naive_conv1d(x, k, stride=1, dilation=1):
    X = x[:, None] if x.ndim == 1 else x
    if x.ndim == 1:
        K = k[:, None, None] if k.ndim == 1 else k[:, None, :]
    else:
        K = k[:, :, None] if k.ndim == 2 else k
    T, cin = X.shape
    L, _, cout = K.shape
    span = (L - 1) * dilation + 1
    tp = (T - span) // stride + 1
    out = np.zeros((tp, cout))
    for t in range(tp):
        for j in range(L):
            out[t] += X[t * stride + j * dilation] @ K[j]
    if (x.ndim == 1 and k.ndim == 1) or (x.ndim == 2 and k.ndim == 2):
        return out[:, 0]
    return out


def naive_overlap_add(x, k, stride=1):
    X = x[:, None] if x.ndim == 1 else x
    if x.ndim == 1:
        K = k[:, None, None] if k.ndim == 1 else k[:, None, :]
    else:
        K = k[:, :, None] if k.ndim == 2 else k
    T, cin = X.shape
    L, _, cout = K.shape
    out = np.zeros(((T - 1) * stride + L, cout))
    for t in range(T):
        for j in range(L):
            out[t * stride + j] += X[t] @ K[j]
    if (x.ndim == 1 and k.ndim == 1) or (x.ndim == 2 and k.ndim == 2):
        return out[:, 0]
    return out


@pytest.mark.parametrize("stride,dilation", [(1, 1), (2, 1), (1, 2), (2, 3), (3, 2)])
def test_conv1d_random_against_loop(stride, dilation):
    rng = np.random.default_rng(11 * stride + dilation)
    for _ in range(5):
        L = int(rng.integers(1, 4))
        T = int(rng.integers((L - 1) * dilation + 1, 24))
        cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        x = rng.normal(size=(T, cin))
        k = rng.normal(size=(L, cin, cout))
        got = ad.conv1d(Tensor(x), Tensor(k), stride=stride, dilation=dilation).data
        want = naive_conv1d(x, k, stride=stride, dilation=dilation)
        assert np.allclose(got, want, atol=1e-12)


@pytest.mark.parametrize("stride", [1, 2, 3])
def test_conv_transpose1d_random_against_loop(stride):
    rng = np.random.default_rng(100 + stride)
    for _ in range(5):
        L = int(rng.integers(1, 5))
        T = int(rng.integers(1, 9))
        cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        x = rng.normal(size=(T, cin))
        k = rng.normal(size=(L, cin, cout))
        got = ad.conv_transpose1d(Tensor(x), Tensor(k), stride=stride).data
        want = naive_overlap_add(x, k, stride=stride)
        assert np.allclose(got, want, atol=1e-12)


def test_conv_transpose_is_conv_adjoint():
    # <conv(x), y> == <x, conv_transpose(y)> for stride-aligned shapes
    rng = np.random.default_rng(7)
    x = rng.normal(size=(17, 2))
    k = rng.normal(size=(4, 2, 3))
    stride = 2
    y_len = (17 - 4) // stride + 1
    y = rng.normal(size=(y_len, 3))
    lhs = float((ad.conv1d(Tensor(x), Tensor(k), stride=stride).data * y).sum())
    back = ad.conv_transpose1d(Tensor(y), Tensor(np.transpose(k, (0, 2, 1))), stride=stride)
    rhs = float((back.data[: x.shape[0]] * x[: back.shape[0]]).sum())
    assert abs(lhs - rhs) < 1e-10


def test_square_gradient():
    x = Tensor(3.0, requires_grad=True)
    with Tape() as tape:
        y = x * x
    grads = tape.backward(y)
    assert abs(grads[x] - 6.0) < 1e-12
    assert abs(x.grad - 6.0) < 1e-12


def test_matmul_sum_gradient():
    a = Tensor([[1.0, 2.0]], requires_grad=True)
    b = Tensor([[3.0], [4.0]], requires_grad=True)
    with Tape() as tape:
        out = (a @ b).sum()
    grads = tape.backward(out)
    assert np.allclose(grads[a], [[3.0, 4.0]])
    assert np.allclose(grads[b], [[1.0], [2.0]])


def test_three_layer_composite_matches_fd():
    rng = np.random.default_rng(0)
    w1, w2, w3 = rng.normal(size=(4, 5)), rng.normal(size=(5, 3)), rng.normal(size=(3, 1))
    x = rng.normal(size=(2, 4))

    def build(a, b, c, inp):
        h1 = ad.tanh(inp @ a)
        h2 = ad.sigmoid(h1 @ b)
        return (h2 @ c).sum()

    worst = grad_check(build, [w1, w2, w3, x])
    assert worst < 1e-4


def test_fd_oracle_on_square():
    fd = finite_diff_gradient(lambda x: float(x**2), np.array(3.0))
    assert abs(fd - 6.0) < 1e-6


def test_fd_oracle_on_sigmoid_at_zero():
    fd = finite_diff_gradient(
        lambda x: float(1.0 / (1.0 + np.exp(-x))), np.array(0.0)
    )
    assert abs(fd - 0.25) < 1e-6


def test_backward_linearity():
    rng = np.random.default_rng(3)
    xval = rng.normal(size=(4,))
    alpha = 2.75

    def run(scale):
        x = Tensor(xval, requires_grad=True)
        with Tape() as tape:
            y = (ad.tanh(x) * scale).sum()
        return tape.backward(y)[x]

    g1, g2 = run(1.0), run(alpha)
    assert np.max(np.abs(g2 - alpha * g1)) < 1e-12


def test_fanout_gradients_accumulate():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = (x * x).sum() + (x * 3.0).sum()
    g = tape.backward(y)[x]
    assert np.allclose(g, 2.0 * x.data + 3.0)


def test_constant_leaves_receive_no_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    c = Tensor([5.0, 5.0], requires_grad=False)
    with Tape() as tape:
        y = (x * c).sum()
    grads = tape.backward(y)
    assert c not in grads
    assert c.grad is None


def test_tape_is_single_sweep_until_reset():
    x = Tensor(2.0, requires_grad=True)
    with Tape() as tape:
        y = x * x
    tape.backward(y)
    with pytest.raises(RuntimeError):
        tape.backward(y)
    tape.reset()
    tape.backward(y)
    assert abs(x.grad - 8.0) < 1e-12  # two sweeps accumulate


def test_backward_rejects_nonscalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = x * x
    with pytest.raises(ShapeError):
        tape.backward(y)


def test_backward_rejects_foreign_output():
    x = Tensor(1.0, requires_grad=True)
    with Tape() as tape:
        _ = x * x
    stray = Tensor(5.0)
    with pytest.raises(ValueError):
        tape.backward(stray)


def test_ops_outside_tape_record_nothing():
    x = Tensor([1.0], requires_grad=True)
    y = x * x
    assert y.requires_grad is False


def test_checked_mode_rejects_nonfinite():
    ad.set_checked(True)
    try:
        with pytest.raises(NumericError):
            ad.add(Tensor([np.nan]), Tensor([1.0]))
    finally:
        ad.set_checked(False)


def test_unknown_primitive_rejected():
    with pytest.raises(ShapeError):
        ad.apply_primitive("gelu", (Tensor([1.0]),))


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


def test_conv1d_signal_too_short():
    with pytest.raises(ShapeError):
        ad.conv1d(Tensor([1.0, 2.0]), Tensor([1.0, 1.0, 1.0]))


def test_softmax_rows_normalize_even_for_huge_logits():
    x = Tensor(np.array([[1e4, -1e4, 0.0], [500.0, 500.0, 500.0]]))
    p = ad.softmax(x, axis=1).data
    assert np.allclose(p.sum(axis=1), 1.0)
    lp = ad.log_softmax(x, axis=1).data
    assert np.allclose(np.exp(lp).sum(axis=1), 1.0)
    assert np.all(np.isfinite(lp))


def test_log_softmax_matches_log_of_softmax():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(3, 6))
    a = ad.log_softmax(Tensor(x), axis=1).data
    b = np.log(ad.softmax(Tensor(x), axis=1).data)
    assert np.allclose(a, b, atol=1e-12)


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_gradients_match_fd(name):
    rng = np.random.default_rng(hash(name) % (2**32))
    for _ in range(8):
        build, arrays = PRIMITIVE_CASES[name](rng)
        grad_check(build, arrays)


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=6))
@settings(max_examples=40, deadline=None)
def test_sum_gradient_is_ones(vals):
    x = Tensor(np.asarray(vals), requires_grad=True)
    with Tape() as tape:
        y = x.sum()
    g = tape.backward(y)[x]
    assert np.allclose(g, np.ones(len(vals)))


@given(
    st.integers(2, 6),
    st.integers(1, 4),
    st.integers(1, 3),
)
@settings(max_examples=40, deadline=None)
def test_pad_then_slice_is_identity(n, before, after):
    rng = np.random.default_rng(n * 100 + before * 10 + after)
    x = rng.normal(size=(n,))
    padded = ad.pad(Tensor(x), axis=0, before=before, after=after)
    back = ad.slice_axis(padded, axis=0, start=before, stop=before + n)
    assert np.allclose(back.data, x)


@given(st.integers(1, 5), st.integers(1, 5))
@settings(max_examples=30, deadline=None)
def test_concat_then_slice_recovers_parts(n1, n2):
    rng = np.random.default_rng(n1 * 31 + n2)
    a, b = rng.normal(size=(n1,)), rng.normal(size=(n2,))
    joined = ad.concat([Tensor(a), Tensor(b)], axis=0)
    left = ad.slice_axis(joined, axis=0, start=0, stop=n1)
    right = ad.slice_axis(joined, axis=0, start=n1, stop=n1 + n2)
    assert np.allclose(left.data, a)
    assert np.allclose(right.data, b)
