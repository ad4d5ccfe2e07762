import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cascl import autodiff as ad
from cascl.autodiff import Tensor
from cascl.errors import NonScalarLoss, ShapeMismatch, ZeroVector


def numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def check_grads(build, *shapes, seed=0, positive=False, tol=1e-6):
    """Compare autodiff gradients of ``sum(weights * build(*inputs))`` with central differences."""
    rng = np.random.default_rng(seed)
    xs = [rng.uniform(0.5, 2.0, s) if positive else rng.normal(size=s) for s in shapes]
    ts = [Tensor(x, requires_grad=True) for x in xs]
    out = build(*ts)
    weights = rng.normal(size=out.shape)

    def value():
        return float(np.sum(weights * build(*[Tensor(x) for x in xs]).data))

    ad.backward(ad.sum(out * weights))
    for x, t in zip(xs, ts):
        num = numeric_grad(value, x)
        assert np.allclose(t.grad, num, atol=tol, rtol=tol), (t.grad, num)


@pytest.mark.parametrize("name, build, shapes", [
    ("add", lambda a, b: a + b, [(3, 4), (4,)]),
    ("sub", lambda a, b: a - b, [(3, 1), (3, 4)]),
    ("mul", lambda a, b: a * b, [(2, 3), (2, 3)]),
    ("matmul", lambda a, b: a @ b, [(3, 4), (4, 2)]),
    ("batched matmul", lambda a, b: a @ b, [(2, 3, 4), (4, 5)]),
    ("sigmoid", ad.sigmoid, [(5,)]),
    ("tanh", ad.tanh, [(5,)]),
    ("exp", ad.exp, [(5,)]),
    ("log_sigmoid", ad.log_sigmoid, [(6,)]),
    ("square", ad.square, [(4,)]),
    ("transpose", lambda a: a.T, [(2, 3)]),
    ("concat", lambda a, b: ad.concat([a, b], axis=1), [(2, 3), (2, 2)]),
    ("slice", lambda a: a[1:, ::2], [(3, 4)]),
    ("fancy index", lambda a: a[np.array([0, 2, 0])], [(3, 2)]),
    ("reshape", lambda a: ad.reshape(a, (6,)), [(2, 3)]),
    ("sum axis", lambda a: ad.sum(a, axis=0), [(3, 4)]),
    ("mean", lambda a: ad.mean(a, axis=1, keepdims=True), [(3, 4)]),
    ("logsumexp", lambda a: ad.logsumexp(a, axis=1), [(3, 4)]),
    ("masked logsumexp", lambda a: ad.logsumexp(a, axis=1, mask=~np.eye(3, dtype=bool)), [(3, 3)]),
    ("l2_normalize", ad.l2_normalize, [(3, 4)]),
    ("cosine", ad.cosine_similarity, [(3, 4), (3, 4)]),
])
def test_op_gradients(name, build, shapes):
    check_grads(build, *shapes)


@pytest.mark.parametrize("name, build", [
    ("div", lambda a, b: a / b),
    ("log", lambda a, b: ad.log(a) * b),
])
def test_positive_domain_gradients(name, build):
    check_grads(build, (3, 2), (3, 2), positive=True)


def test_gru_sequence_gradients():
    rng = np.random.default_rng(3)
    B, T, D, H = 3, 5, 2, 4
    mask = np.ones((B, T), dtype=bool)
    mask[1, 3:] = False
    mask[2, 1:] = False

    def build(x, w, u, b):
        return ad.gru_sequence(x, mask, w, u, b)

    check_grads(build, (B, T, D), (D, 3 * H), (H, 3 * H), (3 * H,), seed=int(rng.integers(100)))


def test_gru_padding_is_inert():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1, 3, 2))
    w, u, b = rng.normal(size=(2, 6)), rng.normal(size=(2, 6)), rng.normal(size=6)
    short = ad.gru_sequence(Tensor(x[:, :2]), np.ones((1, 2), bool), Tensor(w), Tensor(u), Tensor(b))
    padded = ad.gru_sequence(Tensor(x), np.array([[True, True, False]]), Tensor(w), Tensor(u), Tensor(b))
    assert np.array_equal(short.data, padded.data)


def test_gru_matches_step_oracle():
    rng = np.random.default_rng(1)
    D, H, T = 3, 2, 4
    x = rng.normal(size=(T, D))
    w, u, b = rng.normal(size=(D, 3 * H)), rng.normal(size=(H, 3 * H)), rng.normal(size=3 * H)
    sig = lambda v: 1 / (1 + np.exp(-v))
    h = np.zeros(H)
    for t in range(T):
        z = sig(x[t] @ w[:, :H] + h @ u[:, :H] + b[:H])
        r = sig(x[t] @ w[:, H:2 * H] + h @ u[:, H:2 * H] + b[H:2 * H])
        c = np.tanh(x[t] @ w[:, 2 * H:] + (r * h) @ u[:, 2 * H:] + b[2 * H:])
        h = (1 - z) * h + z * c
    out = ad.gru_sequence(Tensor(x[None]), np.ones((1, T), bool), Tensor(w), Tensor(u), Tensor(b))
    assert np.allclose(out.data[0], h, atol=1e-14)


def test_gru_shape_checks():
    with pytest.raises(ShapeMismatch):
        ad.gru_sequence(Tensor(np.zeros((1, 2, 3))), np.ones((1, 2), bool),
                        Tensor(np.zeros((3, 5))), Tensor(np.zeros((2, 6))), Tensor(np.zeros(6)))


def test_sum_gradient_is_ones():
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    ad.backward(ad.sum(x))
    assert np.array_equal(x.grad, [1, 1, 1])


def test_square_gradient():
    x = Tensor(np.array([3.0]), requires_grad=True)
    ad.backward(ad.sum(ad.square(x)))
    assert x.grad[0] == pytest.approx(6.0)


def test_log_sigmoid_at_zero():
    x = Tensor(np.array(0.0), requires_grad=True)
    ad.backward(ad.log_sigmoid(x))
    assert x.grad == pytest.approx(0.5, abs=1e-12)
    at = np.zeros(1)
    num = numeric_grad(lambda: float(ad.log_sigmoid(Tensor(at)).data[0]), at)
    assert num[0] == pytest.approx(0.5, abs=1e-8)


def test_log_sigmoid_is_stable():
    out = ad.log_sigmoid(Tensor(np.array([-800.0, 800.0]))).data
    assert np.allclose(out, [-800.0, 0.0])


def test_cosine_identities():
    v = Tensor(np.array([[0.3, -2.0, 5.0]]))
    assert ad.cosine_similarity(v, v).data[0] == pytest.approx(1.0)
    assert ad.cosine_similarity(Tensor([[1.0, 0.0]]), Tensor([[0.0, 1.0]])).data[0] == 0.0
    with pytest.raises(ZeroVector):
        ad.cosine_similarity(Tensor([[0.0, 0.0]]), Tensor([[0.0, 1.0]]))
    with pytest.raises(ShapeMismatch):
        ad.cosine_similarity(Tensor([[1.0, 0.0]]), Tensor([[1.0, 0.0, 0.0]]))


@given(arrays(np.float64, 4, elements=st.floats(-10, 10)), st.floats(0.1, 100))
def test_cosine_scale_invariant(v, c):
    if np.linalg.norm(v) < 1e-3:
        return
    a = Tensor(v[None])
    b = Tensor(np.arange(1.0, 5.0)[None])
    assert ad.cosine_similarity(a * c, b).data[0] == pytest.approx(ad.cosine_similarity(a, b).data[0])


@settings(max_examples=30)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_gradient_is_linear(alpha, beta, seed):
    rng = np.random.default_rng(seed)
    x0 = rng.normal(size=4)

    def grad(coef_f, coef_g):
        x = Tensor(x0, requires_grad=True)
        loss = coef_f * ad.sum(ad.tanh(x)) + coef_g * ad.sum(ad.square(x))
        ad.backward(loss)
        return x.grad

    combined = grad(alpha, beta)
    assert np.allclose(combined, alpha * grad(1.0, 0.0) + beta * grad(0.0, 1.0))


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x
    ad.backward(ad.sum(y * y + y))
    # d/dx (x^4 + x^2) = 4x^3 + 2x
    assert x.grad[0] == pytest.approx(36.0)


def test_backward_needs_scalar():
    with pytest.raises(NonScalarLoss):
        ad.backward(Tensor(np.ones(3), requires_grad=True) * 2.0)


def test_broadcast_mismatch():
    with pytest.raises(ShapeMismatch):
        Tensor(np.ones(3)) + Tensor(np.ones(4))
    with pytest.raises(ShapeMismatch):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_zero_grad():
    x = Tensor(np.ones(2), requires_grad=True)
    ad.backward(ad.sum(x))
    ad.zero_grad([x])
    assert x.grad is None


def test_deep_chain_does_not_recurse():
    x = Tensor(np.array([1.0]), requires_grad=True)
    y = x
    for _ in range(5000):
        y = y * 1.0
    ad.backward(ad.sum(y))
    assert x.grad[0] == 1.0
