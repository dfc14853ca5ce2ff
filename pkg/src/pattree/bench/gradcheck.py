"""Finite-difference check of the full marginal-softmax gradient."""

from dataclasses import dataclass

import numpy as np

from .. import head, tree as pt
from .oracles import finite_diff_grad

# below this magnitude a coordinate is compared in absolute terms
REL_FLOOR = 1e-6


@dataclass
class GradCheckResult:
    seed: int
    max_rel_error: float
    worst_parameter: str
    worst_index: tuple
    analytic: float
    numeric: float
    n_coordinates: int

    def passed(self, tolerance):
        return self.max_rel_error < tolerance


def relative_error(a, n):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_FLOOR)


def tiny_model(seed, d0=4, schema=(("a", 2),), width=5, n_classes=3, n=6):
    """Small random model plus a labeled batch; biases are nudged off zero."""
    rng = np.random.default_rng([seed, 99])
    tree = pt.build_tree(list(schema), [d0] + [width] * (len(schema) + 1), seed)
    for node in tree.nodes():
        node.b[...] = rng.uniform(0.1, 0.5, size=node.b.shape)
    cls = head.build_classifiers(tree.schema.n_leaves, width, n_classes, seed)
    cls.b[...] = rng.normal(0.0, 0.1, size=cls.b.shape)
    X = rng.standard_normal((n, d0))
    y = rng.integers(n_classes, size=n)
    return tree, cls, X, y


def analytic_grads(tree, cls, X, y):
    """``{name: gradient}`` of the summed marginal softmax loss."""
    trace = pt.propagate(tree, X)
    hg = head.marginal_softmax_backward(cls, trace, y)
    tg = pt.backward(tree, trace, hg.features, hg.mass)
    out = {}
    for node in tree.nodes():
        key = (node.level, node.index)
        tag = f"node[{node.level},{node.index}]"
        out[f"{tag}.W"] = tg.W[key]
        out[f"{tag}.b"] = tg.b[key]
        if not node.is_leaf:
            out[f"{tag}.centers"] = tg.centers[key]
    out["theta.W"] = hg.W
    out["theta.b"] = hg.b
    return out


def check_model(tree, cls, X, y, h=1e-5, seed=0):
    analytic = analytic_grads(tree, cls, X, y)
    params = list(tree.parameters()) + list(cls.parameters())

    def evaluate():
        return head.marginal_softmax_loss(cls, pt.propagate(tree, X), y)

    numeric = finite_diff_grad(evaluate, [p for _, p in params], h)
    worst = (-1.0, "", (), 0.0, 0.0)
    count = 0
    for (name, _), num in zip(params, numeric):
        ana = analytic[name]
        err = relative_error(ana, num)
        count += err.size
        i = np.unravel_index(int(np.argmax(err)), err.shape)
        if err[i] > worst[0]:
            worst = (float(err[i]), name, tuple(int(v) for v in i), float(ana[i]), float(num[i]))
    return GradCheckResult(seed, worst[0], worst[1], worst[2], worst[3], worst[4], count)


def gradcheck(seed, h=1e-5, **model_kw):
    tree, cls, X, y = tiny_model(seed, **model_kw)
    return check_model(tree, cls, X, y, h=h, seed=seed)
