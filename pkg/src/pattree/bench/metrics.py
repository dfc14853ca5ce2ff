"""Evaluation metrics and the serializable report."""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import head, tree as pt
from ..data import MODEL_FORMAT

REPORT_FORMAT = "pattree-report/1"


def accuracy(pred, truth):
    truth = np.asarray(truth)
    has = truth >= 0
    if not has.any():
        return float("nan")
    return float(np.mean(np.asarray(pred)[has] == truth[has]))


def confusion(pred, truth, n_classes):
    """(E, E) counts; rows are true classes, columns predictions."""
    out = np.zeros((n_classes, n_classes), dtype=np.int64)
    truth = np.asarray(truth)
    has = truth >= 0
    np.add.at(out, (truth[has], np.asarray(pred)[has]), 1)
    return out


def cluster_purity(tree, dataset, routing="soft"):
    """Per non-leaf node, the mass-weighted fraction of samples whose argmax cluster equals their attribute state.

    Samples without a label for the node's attribute are skipped.  A node that
    receives no labeled mass gets ``nan``.
    """
    trace = pt.propagate(tree, dataset.features, routing=routing)
    out = {}
    for j in range(tree.depth - 1):
        a = dataset.attributes[:, j]
        has = a >= 0
        for k in range(len(tree.levels[j])):
            q = trace.mass[j][k][has]
            hit = np.argmax(trace.similarities[j][k][has], axis=1) == a[has]
            total = q.sum()
            out[(j, k)] = float(np.sum(q * hit) / total) if total > 0 else float("nan")
    return out


def node_key(key):
    return f"{key[0]},{key[1]}"


@dataclass
class MetricsReport:
    model: str
    seed: int
    accuracy: float
    confusion: list
    n_samples: int
    purity: dict = field(default_factory=dict)
    loss_curve: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    model_format: str = MODEL_FORMAT
    format: str = REPORT_FORMAT

    def to_dict(self):
        return asdict(self)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def evaluate_tree(tree, classifiers, dataset, routing="soft", name="pat", seed=0, history=(), config=None):
    trace = pt.propagate(tree, dataset.features, routing=routing)
    pred = np.argmax(head.predict(classifiers, trace), axis=1)
    purity = {}
    if tree.depth > 1 and np.any(dataset.attributes >= 0):
        purity = {node_key(k): v for k, v in cluster_purity(tree, dataset, routing).items()}
    return MetricsReport(
        model=name,
        seed=int(seed),
        accuracy=accuracy(pred, dataset.classes),
        confusion=confusion(pred, dataset.classes, classifiers.n_classes).tolist(),
        n_samples=len(dataset),
        purity=purity,
        loss_curve=[list(r) for r in history],
        config=dict(config or {}),
    )


def evaluate_proba(proba, dataset, name, seed=0, history=(), config=None):
    pred = np.argmax(proba, axis=1)
    return MetricsReport(
        model=name,
        seed=int(seed),
        accuracy=accuracy(pred, dataset.classes),
        confusion=confusion(pred, dataset.classes, proba.shape[1]).tolist(),
        n_samples=len(dataset),
        loss_curve=[list(r) for r in history],
        config=dict(config or {}),
    )


def smooth(values, window=50):
    """Trailing moving average; the first ``window - 1`` entries average what is available."""
    v = np.asarray(values, dtype=np.float64)
    c = np.cumsum(np.concatenate([[0.0], v]))
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)
