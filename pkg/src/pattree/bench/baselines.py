"""Comparison models: a flat softmax classifier and per-subset attribute-specific models.

The flat classifier is written independently of the tree code (plain numpy,
one rectified hidden layer) but draws its random numbers and orders its
floating point work the same way, so a one-level tree trained with the same
seed produces the very same loss trace.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .. import tree as pt
from ..data import combinations
from ..errors import EmptyDataset
from ..trainer import make_batches

LOG_FLOOR = 1e-30


def _softmax_rows(z):
    e = np.exp(z - np.max(z, axis=1, keepdims=True))
    return e / np.sum(e, axis=1, keepdims=True)


@dataclass
class FlatClassifier:
    """``softmax(W2 relu(W1 x + b1) + b2)``."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    history: list = field(default_factory=list)

    @classmethod
    def init(cls, d_in, hidden, n_classes, seed):
        rng = np.random.default_rng(seed)
        s1 = np.sqrt(6.0 / (d_in + hidden))
        W1 = rng.uniform(-s1, s1, size=(hidden, d_in))
        rng = np.random.default_rng([seed, 1])
        s2 = np.sqrt(6.0 / (hidden + n_classes))
        W2 = rng.uniform(-s2, s2, size=(n_classes, hidden))
        return cls(W1, np.zeros(hidden), W2, np.zeros(n_classes))

    @property
    def n_params(self):
        return self.W1.size + self.b1.size + self.W2.size + self.b2.size

    def _forward(self, X):
        h = np.maximum(X @ self.W1.T + self.b1, 0.0)
        return h, _softmax_rows(h @ self.W2.T + self.b2)

    def predict_proba(self, X):
        return self._forward(np.atleast_2d(np.asarray(X, dtype=np.float64)))[1]

    def step(self, X, y, mu):
        """One SGD step on a batch; returns the mean cross-entropy before the step."""
        n = X.shape[0]
        h, p = self._forward(X)
        has = y >= 0
        py = np.zeros(n)
        py[has] = p[np.flatnonzero(has), y[has]]
        loss = float(np.where(has, -np.log(np.maximum(py, LOG_FLOOR)), 0.0).sum()) / n
        live = has & (py > LOG_FLOOR)
        onehot = np.zeros_like(p)
        onehot[np.flatnonzero(has), y[has]] = 1.0
        r = np.where(live, 1.0, 0.0)
        dz = r[:, None] * (p - onehot) * (1.0 / n)
        gW2, gb2, gh = dz.T @ h, dz.sum(axis=0), dz @ self.W2
        g = np.where(h > 0.0, gh, 0.0)
        gW1, gb1 = g.T @ X, g.sum(axis=0)
        self.W2 -= mu * gW2
        self.b2 -= mu * gb2
        self.W1 -= mu * gW1
        self.b1 -= mu * gb1
        return loss


def train_flat(dataset, hidden, config):
    """Train a :class:`FlatClassifier` for ``config.iterations`` steps over seeded epochs.

    Batching and epoch cycling follow the tree trainer exactly.
    """
    if len(dataset) == 0:
        raise EmptyDataset("training set is empty")
    model = FlatClassifier.init(dataset.width, hidden, config.n_classes, config.seed)
    epoch, pos = 0, 0
    batches = make_batches(dataset, config.batch_size, config.seed, epoch)
    for it in range(1, config.iterations + 1):
        if pos == len(batches):
            epoch += 1
            batches = make_batches(dataset, config.batch_size, config.seed, epoch)
            pos = 0
        idx = batches[pos]
        pos += 1
        loss = model.step(dataset.features[idx], dataset.classes[idx], config.mu)
        model.history.append((it, loss, loss, 0.0))
    return model


def flat_param_count(d_in, hidden, n_classes):
    return hidden * (d_in + 1) + n_classes * (hidden + 1)


def pat_param_count(config, d_in=None):
    """Total trainable parameters (weights, biases, centers, leaf classifiers) of the tree model."""
    widths = list(config.widths)
    if d_in is not None:
        widths[0] = d_in
    schema = pt.AttributeSchema.from_list(config.schema)
    n_tree = 0
    sizes = schema.level_sizes()
    for j, count in enumerate(sizes):
        per = widths[j + 1] * (widths[j] + 1)
        if j < schema.depth - 1:
            per += schema.states(j) * widths[j + 1]
        n_tree += count * per
    return n_tree + schema.n_leaves * config.n_classes * (widths[-1] + 1)


def matched_hidden_width(config, d_in=None):
    """Hidden width of a flat model whose parameter count is closest to the tree model's."""
    d_in = config.widths[0] if d_in is None else d_in
    target = pat_param_count(config, d_in)
    per_unit = d_in + 1 + config.n_classes
    return max(1, round((target - config.n_classes) / per_unit))


def hard_config(config):
    return replace(config, routing="hard")


@dataclass
class AttributeSpecific:
    """One flat model per full attribute combination, routed by ground-truth attributes."""

    schema: pt.AttributeSchema
    models: dict

    def predict_proba(self, X, attributes):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        attributes = np.atleast_2d(attributes)
        out = np.zeros((X.shape[0], next(iter(self.models.values())).W2.shape[0]))
        for combo, model in self.models.items():
            rows = np.all(attributes == np.asarray(combo), axis=1)
            if rows.any():
                out[rows] = model.predict_proba(X[rows])
        return out


def train_attribute_specific(dataset, hidden, config):
    """Train a flat model on each attribute-combination subset with the full budget.

    Every model gets the same width, seed and iteration count as the flat
    baseline; a combination with no training samples yields a uniform predictor.
    """
    models = {}
    E = config.n_classes
    for combo in combinations(dataset.schema):
        rows = np.flatnonzero(np.all(dataset.attributes == np.asarray(combo), axis=1))
        if len(rows) == 0:
            model = FlatClassifier.init(dataset.width, hidden, E, config.seed)
            model.W2[...] = 0.0
        else:
            model = train_flat(dataset.subset(rows), hidden, config)
        models[tuple(int(a) for a in combo)] = model
    return AttributeSpecific(dataset.schema, models)


def param_match_ratio(config, hidden, d_in=None):
    d_in = config.widths[0] if d_in is None else d_in
    return flat_param_count(d_in, hidden, config.n_classes) / pat_param_count(config, d_in)


__all__ = [
    "FlatClassifier",
    "train_flat",
    "flat_param_count",
    "pat_param_count",
    "matched_hidden_width",
    "param_match_ratio",
    "hard_config",
    "AttributeSpecific",
    "train_attribute_specific",
]
