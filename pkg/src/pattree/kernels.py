"""Dense numeric kernels shared by the tree, the classifier head and the baselines.

Everything here is float64 and side-effect free.  The single-vector functions
(`cosine_sim`, `cosine_sim_grad_x`, `cosine_sim_grad_c`) follow the textbook
formulas term by term; the ``*_rows`` variants are the batched forms used on
the training path.
"""

import numpy as np

from .errors import DegenerateVector, ShapeMismatch

EPS = 1e-12


def _as_vector(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 1:
        raise ShapeMismatch(f"expected a vector, got shape {a.shape}")
    return a


def _norm(a, what):
    n = float(np.sqrt(np.dot(a, a)))
    if not n > EPS:
        raise DegenerateVector(f"{what} has norm {n:.3g} <= {EPS:g}")
    return n


def cosine_sim(a, b):
    """Normalized dot product ``a.b / (|a| |b|)``, clamped to [-1, 1]."""
    a, b = _as_vector(a), _as_vector(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    na, nb = _norm(a, "first vector"), _norm(b, "second vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def cosine_sim_grad_x(x, c):
    """Partial derivative of ``cosine_sim(x, c)`` with respect to ``x``.

    c / (|c| |x|) - (c.x / (|c| |x|^3)) x
    """
    x, c = _as_vector(x), _as_vector(c)
    if x.shape != c.shape:
        raise ShapeMismatch(f"length mismatch: {x.shape[0]} vs {c.shape[0]}")
    nx, nc = _norm(x, "x"), _norm(c, "c")
    return c / (nc * nx) - (np.dot(c, x) / (nc * nx**3)) * x


def cosine_sim_grad_c(x, c):
    """Partial derivative of ``cosine_sim(x, c)`` with respect to ``c``."""
    return cosine_sim_grad_x(c, x)


def row_norms(X, what="row"):
    """Euclidean norm of every row; raises if any row is degenerate."""
    n = np.sqrt(np.einsum("ij,ij->i", X, X))
    bad = ~(n > EPS)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DegenerateVector(f"{what} {i} has norm {n[i]:.3g} <= {EPS:g}")
    return n


def cosine_rows(X, C):
    """All-pairs cosine similarity between rows of X (N, d) and rows of C (M, d).

    Returns ``(D, Xhat, Chat, xn, cn)`` so callers can reuse the normalized
    rows in the backward pass.
    """
    X = np.asarray(X, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    if X.ndim != 2 or C.ndim != 2 or X.shape[1] != C.shape[1]:
        raise ShapeMismatch(f"cannot compare rows of {X.shape} with {C.shape}")
    xn = row_norms(X, "feature")
    cn = row_norms(C, "center")
    Xhat = X / xn[:, None]
    Chat = C / cn[:, None]
    D = np.clip(Xhat @ Chat.T, -1.0, 1.0)
    return D, Xhat, Chat, xn, cn


def cosine_rows_backward(G, D, Xhat, Chat, xn, cn):
    """Contract an upstream (N, M) weight matrix ``G`` against the cosine partials.

    Returns ``(gX, gC)`` with ``gX[n] = sum_m G[n, m] dD(x_n, c_m)/dx_n`` and
    ``gC[m] = sum_n G[n, m] dD(x_n, c_m)/dc_m``.
    """
    gX = (G @ Chat - np.sum(G * D, axis=1)[:, None] * Xhat) / xn[:, None]
    gC = (G.T @ Xhat - np.sum(G * D, axis=0)[:, None] * Chat) / cn[:, None]
    return gX, gC


def softmax(v, axis=-1):
    """Max-subtracted softmax along ``axis``."""
    v = np.asarray(v, dtype=np.float64)
    z = np.exp(v - np.max(v, axis=axis, keepdims=True))
    return z / np.sum(z, axis=axis, keepdims=True)


def _check_affine(W, b, x):
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.shape[-1] != W.shape[1]:
        raise ShapeMismatch(
            f"affine shapes do not line up: W {W.shape}, b {b.shape}, x {x.shape}"
        )


def affine_forward(W, b, x, relu=True):
    """``act(W x + b)`` for a vector or a batch of row vectors.

    ``relu=False`` gives the identity activation (used for classifier logits).
    """
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    _check_affine(W, b, x)
    z = x @ W.T + b
    return np.maximum(z, 0.0) if relu else z


def affine_backward(W, x, grad_out, out=None):
    """Backward pass of :func:`affine_forward`.

    Pass the forward output as ``out`` for a rectified layer (the mask is read
    off it); leave it ``None`` for the identity activation.  Returns
    ``(grad_W, grad_b, grad_x)``; batched inputs are summed over rows.
    """
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(grad_out, dtype=np.float64)
    if x.shape[-1] != W.shape[1] or g.shape[-1] != W.shape[0] or g.shape[:-1] != x.shape[:-1]:
        raise ShapeMismatch(
            f"affine backward shapes: W {W.shape}, x {x.shape}, grad {g.shape}"
        )
    if out is not None:
        g = np.where(np.asarray(out) > 0.0, g, 0.0)
    if x.ndim == 1:
        return np.outer(g, x), g.copy(), W.T @ g
    return g.T @ x, g.sum(axis=0), g @ W
