"""Per-leaf class classifiers and the marginal softmax loss over leaves."""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InvalidLabel, ShapeMismatch

LOG_FLOOR = 1e-30


@dataclass
class LeafClassifiers:
    """One linear logit map per leaf: ``W`` is (K, E, d), ``b`` is (K, E)."""

    W: np.ndarray
    b: np.ndarray

    @property
    def n_leaves(self):
        return self.W.shape[0]

    @property
    def n_classes(self):
        return self.W.shape[1]

    @property
    def width(self):
        return self.W.shape[2]

    def parameters(self):
        yield "theta.W", self.W
        yield "theta.b", self.b

    def n_params(self):
        return self.W.size + self.b.size

    def copy(self):
        return LeafClassifiers(self.W.copy(), self.b.copy())


def build_classifiers(n_leaves, width, n_classes, seed):
    rng = np.random.default_rng([seed, 1])
    s = np.sqrt(6.0 / (width + n_classes))
    W = rng.uniform(-s, s, size=(n_leaves, n_classes, width))
    return LeafClassifiers(W, np.zeros((n_leaves, n_classes)))


def _leaf_inputs(classifiers, trace):
    feats = trace.leaf_features()
    if len(feats) != classifiers.n_leaves:
        raise ShapeMismatch(f"{len(feats)} leaves in trace, {classifiers.n_leaves} classifiers")
    if feats[0].shape[1] != classifiers.width:
        raise ShapeMismatch(f"leaf width {feats[0].shape[1]} != {classifiers.width}")
    return feats


def leaf_predict(classifiers, trace):
    """(N, K, E) class distributions, one per leaf."""
    feats = _leaf_inputs(classifiers, trace)
    probs = [
        kernels.softmax(kernels.affine_forward(classifiers.W[k], classifiers.b[k], x, relu=False))
        for k, x in enumerate(feats)
    ]
    return np.stack(probs, axis=1)


def predict(classifiers, trace, leaf_probs=None):
    """Mass-weighted mixture of the leaf distributions, (N, E)."""
    if leaf_probs is None:
        leaf_probs = leaf_predict(classifiers, trace)
    return np.einsum("nk,nke->ne", trace.leaf_mass(), leaf_probs)


def _check_labels(labels, n, n_classes):
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.shape[0] != n:
        raise ShapeMismatch(f"{y.shape[0]} labels for {n} samples")
    if np.any(y < -1) or np.any(y >= n_classes):
        raise InvalidLabel(f"class labels must lie in [0, {n_classes}) or be -1")
    return y


def _marginal(classifiers, trace, labels):
    probs = leaf_predict(classifiers, trace)
    y = _check_labels(labels, trace.n_samples, classifiers.n_classes)
    has = y >= 0
    py = np.zeros(probs.shape[:2])
    py[has] = probs[np.flatnonzero(has), :, y[has]]
    q = trace.leaf_mass()
    return probs, y, has, py, q, np.sum(q * py, axis=1)


def marginal_softmax_losses(classifiers, trace, labels):
    """Per-sample ``-log sum_k q_k p_k(y)``; zero for samples with label ``-1``."""
    _, _, has, _, _, m = _marginal(classifiers, trace, labels)
    return np.where(has, -np.log(np.maximum(m, LOG_FLOOR)), 0.0)


def marginal_softmax_loss(classifiers, trace, labels):
    return float(marginal_softmax_losses(classifiers, trace, labels).sum())


@dataclass
class HeadGrads:
    W: np.ndarray
    b: np.ndarray
    features: list
    mass: np.ndarray
    losses: np.ndarray


def marginal_softmax_backward(classifiers, trace, labels, scale=1.0):
    """Gradient of ``scale * sum_i L_i`` w.r.t. classifier parameters, leaf features and leaf masses.

    Per leaf the logit gradient is ``r_k (p_k - onehot(y))`` with the
    responsibility ``r_k = q_k p_k(y) / m``; the mass gradient is
    ``-p_k(y) / m``.  Samples whose marginal fell under the log floor get no
    gradient.
    """
    probs, y, has, py, q, m = _marginal(classifiers, trace, labels)
    live = has & (m > LOG_FLOOR)
    losses = np.where(has, -np.log(np.maximum(m, LOG_FLOOR)), 0.0)
    safe_m = np.where(live, m, 1.0)
    feats = trace.leaf_features()
    n, K = q.shape
    onehot = np.zeros((n, classifiers.n_classes))
    onehot[np.flatnonzero(has), y[has]] = 1.0

    gW = np.zeros_like(classifiers.W)
    gb = np.zeros_like(classifiers.b)
    g_feats = []
    for k in range(K):
        r = np.where(live, q[:, k] * py[:, k] / safe_m, 0.0)
        dz = r[:, None] * (probs[:, k, :] - onehot) * scale
        gW[k], gb[k], gx = kernels.affine_backward(classifiers.W[k], feats[k], dz)
        g_feats.append(gx)
    g_mass = np.where(live[:, None], -py / safe_m[:, None], 0.0) * scale
    return HeadGrads(gW, gb, g_feats, g_mass, losses)
