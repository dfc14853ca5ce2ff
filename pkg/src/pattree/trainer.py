"""Joint semi-supervised training: marginal softmax loss plus weighted attribute loss.

Weights and classifier parameters move by plain SGD at rate ``mu``; cluster
centers move only by their own displacement rule at rate ``alpha``.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import head, tree as pt
from .data import SOURCES, config_dict
from .errors import EmptyDataset, InvalidConfig, NonFiniteLoss

log = logging.getLogger(__name__)

AUXILIARY = SOURCES.index("auxiliary")


@dataclass
class TrainConfig:
    lam: float = 0.1
    alpha: float = 1.0
    mu: float = 0.05
    iterations: int = 3000
    batch_size: int = 32
    seed: int = 0
    schema: tuple = (("gender", 2), ("race", 3))
    widths: tuple = (16, 64, 64, 64)
    n_classes: int = 7
    attribute_label_fraction: float = 1.0
    routing: str = "soft"
    # which vector the cosine clustering compares with the centers
    cluster_on: str = "preactivation"

    def validate(self):
        if self.lam < 0 or self.alpha < 0:
            raise InvalidConfig("lam and alpha must be nonnegative")
        if not self.mu >= 0:
            raise InvalidConfig("mu must be nonnegative")
        if self.iterations < 1 or self.batch_size < 1:
            raise InvalidConfig("iterations and batch_size must be at least 1")
        if not 0.0 <= self.attribute_label_fraction <= 1.0:
            raise InvalidConfig("attribute_label_fraction must lie in [0, 1]")
        if self.routing not in ("soft", "hard"):
            raise InvalidConfig(f"unknown routing {self.routing!r}")
        if self.cluster_on not in pt.CLUSTER_INPUTS:
            raise InvalidConfig(f"cluster_on must be one of {pt.CLUSTER_INPUTS}")
        schema = pt.AttributeSchema.from_list(self.schema)
        if len(self.widths) != schema.depth + 1:
            raise InvalidConfig(
                f"widths {list(self.widths)} need {schema.depth + 1} entries for this schema"
            )
        return schema


@dataclass
class TrainState:
    tree: pt.PatTree
    classifiers: head.LeafClassifiers
    iteration: int = 0
    history: list = field(default_factory=list)


def init_state(config):
    config.validate()
    tree = pt.build_tree(config.schema, config.widths, config.seed, config.cluster_on)
    classifiers = head.build_classifiers(
        tree.schema.n_leaves, config.widths[-1], config.n_classes, config.seed
    )
    return TrainState(tree, classifiers)


def make_batches(dataset, batch_size, seed, epoch):
    """Seeded index batches for one epoch.

    With a single source: a permutation cut into ``batch_size`` chunks (the
    last one may be short).  When auxiliary samples are present every batch
    takes ``batch_size // 2`` of them (cycled as needed) and fills the rest
    from the primary source, whose size sets the epoch length.
    """
    n = len(dataset)
    if n == 0:
        raise EmptyDataset("cannot batch an empty dataset")
    rng = np.random.default_rng([seed, epoch])
    aux = np.flatnonzero(dataset.sources == AUXILIARY)
    prim = np.flatnonzero(dataset.sources != AUXILIARY)
    if len(aux) == 0 or len(prim) == 0:
        order = rng.permutation(n)
        return [order[i : i + batch_size] for i in range(0, n, batch_size)]

    n_aux = batch_size // 2
    n_prim = batch_size - n_aux
    prim = prim[rng.permutation(len(prim))]
    n_batches = math.ceil(len(prim) / n_prim)
    need = n_aux * n_batches
    aux_stream = np.concatenate(
        [aux[rng.permutation(len(aux))] for _ in range(math.ceil(need / len(aux)) or 1)]
    )
    batches = []
    for b in range(n_batches):
        p = prim[b * n_prim : (b + 1) * n_prim]
        a = aux_stream[b * n_aux : (b + 1) * n_aux]
        batches.append(np.concatenate([a, p]))
    return batches


def _check_finite(values, state, batch_ids):
    if not all(np.isfinite(v) for v in values):
        raise NonFiniteLoss(
            f"non-finite loss at iteration {state.iteration + 1}: {values}",
            dump={
                "iteration": state.iteration + 1,
                "losses": values,
                "batch_ids": [int(i) for i in batch_ids],
            },
        )


def train_step(state, batch, config):
    """One iteration on a :class:`~pattree.data.Dataset` batch; mutates and returns ``state``.

    All gradients come from the pre-step forward pass; updates are then
    applied as classifier parameters, centers, node weights.
    """
    tree, cls = state.tree, state.classifiers
    n = len(batch)
    trace = pt.propagate(tree, batch.features, routing=config.routing)
    hg = head.marginal_softmax_backward(cls, trace, batch.classes, scale=1.0 / n)
    l_ms = float(hg.losses.sum()) / n
    l_pat = pt.pat_loss(tree, trace, batch.attributes) / n if tree.depth > 1 else 0.0
    total = l_ms + config.lam * l_pat
    _check_finite((total, l_ms, l_pat), state, batch.ids)

    deltas = pt.center_deltas(tree, trace, batch.attributes) if tree.depth > 1 else {}
    errors = None
    if tree.depth > 1 and config.lam > 0:
        errors = {
            key: (config.lam / n) * e
            for key, e in pt.pat_feature_errors(tree, trace, batch.attributes).items()
        }
    grads = pt.backward(tree, trace, hg.features, hg.mass, errors)

    cls.W -= config.mu * hg.W
    cls.b -= config.mu * hg.b
    if config.alpha > 0:
        for (j, k), delta in deltas.items():
            pt.apply_center_update(tree.node(j, k), delta, config.alpha)
    for node in tree.nodes():
        key = (node.level, node.index)
        node.W -= config.mu * grads.W[key]
        node.b -= config.mu * grads.b[key]

    state.iteration += 1
    state.history.append((state.iteration, total, l_ms, l_pat))
    return state


def run_training(dataset, config, aux=None, state=None, on_step=None):
    """Run ``config.iterations`` steps cycling over seeded epochs.

    ``aux`` is an optional attribute-labeled second source mixed into every
    batch.  Attribute labels are thinned to ``attribute_label_fraction``
    before training (seeded).  Returns the final :class:`TrainState`.
    """
    config.validate()
    if len(dataset) == 0:
        raise EmptyDataset("training set is empty")
    data = dataset.strip_attributes(config.attribute_label_fraction, config.seed)
    if aux is not None:
        data = data.with_source("primary").concat(aux.with_source("auxiliary"))
    if state is None:
        state = init_state(config)
    epoch, batches = 0, make_batches(data, config.batch_size, config.seed, 0)
    pos = 0
    for _ in range(config.iterations):
        if pos == len(batches):
            epoch += 1
            batches = make_batches(data, config.batch_size, config.seed, epoch)
            pos = 0
        train_step(state, data.subset(batches[pos]), config)
        pos += 1
        if on_step is not None:
            on_step(state)
    log.debug("trained %d iterations, final loss %.4f", state.iteration, state.history[-1][1])
    return state


def format_log_header(config):
    d = config_dict(config)
    return "# " + " ".join(f"{k}={d[k]}" for k in ("lam", "alpha", "mu", "iterations", "batch_size", "seed"))


def write_log(path, state, config):
    """Tab-separated per-iteration records: iteration, L, L_MS, L_PAT."""
    with open(path, "w") as fh:
        fh.write(format_log_header(config) + "\n")
        fh.write("iteration\tL\tL_MS\tL_PAT\n")
        for it, total, l_ms, l_pat in state.history:
            fh.write(f"{it}\t{total!r}\t{l_ms!r}\t{l_pat!r}\n")
