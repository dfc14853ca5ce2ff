import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from pattree import kernels
from pattree.errors import DegenerateVector, ShapeMismatch


def central_diff(f, x, h=1e-5):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@pytest.mark.parametrize(
    "a, b, expected",
    [([1, 0], [1, 0], 1.0), ([1, 0], [0, 1], 0.0), ([1, 0], [-1, 0], -1.0)],
)
def test_cosine_sim_anchors(a, b, expected):
    assert kernels.cosine_sim(a, b) == expected


def test_cosine_sim_rejects_degenerate_and_mismatched():
    with pytest.raises(DegenerateVector):
        kernels.cosine_sim([0.0, 0.0], [1.0, 0.0])
    with pytest.raises(DegenerateVector):
        kernels.cosine_sim([1.0, 0.0], [1e-13, 0.0])
    with pytest.raises(ShapeMismatch):
        kernels.cosine_sim([1.0, 0.0], [1.0, 0.0, 0.0])


def test_grad_anchors():
    np.testing.assert_array_equal(kernels.cosine_sim_grad_x([1, 0], [1, 0]), [0, 0])
    np.testing.assert_array_equal(kernels.cosine_sim_grad_x([1, 0], [0, 1]), [0, 1])
    np.testing.assert_array_equal(kernels.cosine_sim_grad_c([1, 0], [1, 0]), [0, 0])
    np.testing.assert_array_equal(kernels.cosine_sim_grad_c([1, 0], [0, 1]), [1, 0])


def test_grads_match_central_differences_on_random_pairs():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        d = rng.integers(2, 9)
        x, c = rng.standard_normal(d), rng.standard_normal(d)
        fd_x = central_diff(lambda v: kernels.cosine_sim(v, c), x)
        fd_c = central_diff(lambda v: kernels.cosine_sim(x, v), c)
        for got, fd in ((kernels.cosine_sim_grad_x(x, c), fd_x), (kernels.cosine_sim_grad_c(x, c), fd_c)):
            worst = max(worst, np.max(np.abs(got - fd)) / max(np.max(np.abs(fd)), 1e-12))
    assert worst < 1e-6


finite_vec = arrays(
    np.float64, 5, elements=st.floats(-10, 10, allow_nan=False).filter(lambda v: abs(v) > 1e-3)
)


@settings(max_examples=200, deadline=None)
@given(finite_vec, finite_vec, st.floats(1e-3, 1e3))
def test_cosine_scale_invariance(a, b, lam):
    assert kernels.cosine_sim(lam * a, b) == pytest.approx(kernels.cosine_sim(a, b), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(finite_vec, finite_vec)
def test_grads_are_tangent(x, c):
    assert abs(np.dot(kernels.cosine_sim_grad_x(x, c), x)) < 1e-10
    assert abs(np.dot(kernels.cosine_sim_grad_c(x, c), c)) < 1e-10


def test_batched_rows_agree_with_single_vector_kernels():
    rng = np.random.default_rng(1)
    X, C = rng.standard_normal((6, 4)), rng.standard_normal((3, 4))
    G = rng.standard_normal((6, 3))
    D, *cache = kernels.cosine_rows(X, C)
    gX, gC = kernels.cosine_rows_backward(G, D, *cache)
    for n in range(6):
        for m in range(3):
            assert D[n, m] == pytest.approx(kernels.cosine_sim(X[n], C[m]), abs=1e-14)
        want = sum(G[n, m] * kernels.cosine_sim_grad_x(X[n], C[m]) for m in range(3))
        np.testing.assert_allclose(gX[n], want, atol=1e-13)
    for m in range(3):
        want = sum(G[n, m] * kernels.cosine_sim_grad_c(X[n], C[m]) for n in range(6))
        np.testing.assert_allclose(gC[m], want, atol=1e-13)


def test_softmax_values():
    np.testing.assert_array_equal(kernels.softmax([0.0, 0.0]), [0.5, 0.5])
    np.testing.assert_allclose(kernels.softmax([1.0, 0.0]), [0.73106, 0.26894], atol=5e-6)
    e = np.e
    np.testing.assert_allclose(kernels.softmax([1.0, 0.0]), [e / (e + 1), 1 / (e + 1)], rtol=1e-15)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_normalized_and_shift_invariant(v, shift):
    p = kernels.softmax(v)
    assert np.all(p > 0)
    assert abs(p.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(kernels.softmax(v + shift), p, rtol=1e-9, atol=1e-15)


def test_softmax_survives_large_logits():
    p = kernels.softmax([1000.0, 0.0])
    assert np.all(np.isfinite(p)) and p[0] == 1.0


def test_affine_forward_anchors():
    I, z = np.eye(2), np.zeros(2)
    np.testing.assert_array_equal(kernels.affine_forward(I, z, [2.0, 3.0]), [2, 3])
    np.testing.assert_array_equal(kernels.affine_forward(I, z, [-1.0, 4.0]), [0, 4])
    with pytest.raises(ShapeMismatch):
        kernels.affine_forward(I, z, [1.0, 2.0, 3.0])


@pytest.mark.parametrize("relu", [True, False])
def test_affine_backward_matches_central_differences(relu):
    rng = np.random.default_rng(2)
    W, b, x = rng.standard_normal((3, 4)), rng.standard_normal(3), rng.standard_normal(4)
    up = rng.standard_normal(3)
    out = kernels.affine_forward(W, b, x, relu=relu)
    gW, gb, gx = kernels.affine_backward(W, x, up, out if relu else None)

    def f_W(w):
        return up @ kernels.affine_forward(w.reshape(W.shape), b, x, relu=relu)

    def f_b(v):
        return up @ kernels.affine_forward(W, v, x, relu=relu)

    def f_x(v):
        return up @ kernels.affine_forward(W, b, v, relu=relu)

    for got, fd in (
        (gW.ravel(), central_diff(f_W, W.ravel())),
        (gb, central_diff(f_b, b)),
        (gx, central_diff(f_x, x)),
    ):
        np.testing.assert_allclose(got, fd, rtol=1e-6, atol=1e-9)


def test_affine_backward_batched_sums_rows():
    rng = np.random.default_rng(3)
    W, b = rng.standard_normal((3, 4)), rng.standard_normal(3)
    X, G = rng.standard_normal((5, 4)), rng.standard_normal((5, 3))
    out = kernels.affine_forward(W, b, X)
    gW, gb, gX = kernels.affine_backward(W, X, G, out)
    parts = [kernels.affine_backward(W, X[i], G[i], out[i]) for i in range(5)]
    np.testing.assert_allclose(gW, sum(p[0] for p in parts), atol=1e-13)
    np.testing.assert_allclose(gb, sum(p[1] for p in parts), atol=1e-13)
    np.testing.assert_allclose(gX, np.stack([p[2] for p in parts]), atol=1e-13)
