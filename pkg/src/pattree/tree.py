"""Probabilistic attribute tree: topology, soft routing, attribute loss and center updates.

Levels are 0-based in code: level 0 is the root, level ``depth - 1`` holds the
leaves.  Non-leaf level ``j`` clusters its features by attribute ``j`` of the
schema, and cluster ``m`` of node ``k`` feeds child ``k * states(j) + m``.

Batched throughout: a trace holds one row per sample.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidSchema, MissingLabel, ShapeMismatch, DegenerateVector

MISSING = -1


@dataclass(frozen=True)
class AttributeSchema:
    """Ordered ``(name, state_count)`` pairs; one attribute per non-leaf level."""

    attributes: tuple = ()

    def __post_init__(self):
        attrs = tuple((str(name), int(n)) for name, n in self.attributes)
        for name, n in attrs:
            if n < 2:
                raise InvalidSchema(f"attribute {name!r} needs at least 2 states, got {n}")
        object.__setattr__(self, "attributes", attrs)

    @property
    def depth(self):
        return len(self.attributes) + 1

    @property
    def names(self):
        return [name for name, _ in self.attributes]

    def states(self, level):
        return self.attributes[level][1]

    def level_sizes(self):
        sizes = [1]
        for _, n in self.attributes:
            sizes.append(sizes[-1] * n)
        return sizes

    @property
    def n_leaves(self):
        return self.level_sizes()[-1]

    def to_list(self):
        return [[name, n] for name, n in self.attributes]

    @classmethod
    def from_list(cls, pairs):
        try:
            return cls(tuple((name, n) for name, n in pairs))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, InvalidSchema):
                raise
            raise InvalidSchema(f"malformed schema {pairs!r}") from exc


@dataclass
class PatNode:
    level: int
    index: int
    W: np.ndarray
    b: np.ndarray
    centers: np.ndarray = None
    children: tuple = ()

    @property
    def is_leaf(self):
        return self.centers is None

    @property
    def n_clusters(self):
        return 0 if self.centers is None else self.centers.shape[0]


CLUSTER_INPUTS = ("preactivation", "output")


class PatTree:
    """Node store plus topology.

    ``cluster_on`` selects what a non-leaf node clusters: the affine output
    before the rectifier (``"preactivation"``) or the rectified features its
    children consume (``"output"``).
    """

    def __init__(self, schema, widths, levels, cluster_on="preactivation"):
        if cluster_on not in CLUSTER_INPUTS:
            raise InvalidSchema(f"cluster_on must be one of {CLUSTER_INPUTS}")
        self.schema = schema
        self.widths = tuple(int(w) for w in widths)
        self.levels = levels
        self.cluster_on = cluster_on

    @property
    def depth(self):
        return self.schema.depth

    @property
    def root(self):
        return self.levels[0][0]

    @property
    def leaves(self):
        return self.levels[-1]

    def node(self, level, index):
        return self.levels[level][index]

    def nodes(self):
        for level in self.levels:
            yield from level

    def parameters(self, include_centers=True):
        """``(name, array)`` pairs referencing the live parameter arrays."""
        for node in self.nodes():
            tag = f"node[{node.level},{node.index}]"
            yield f"{tag}.W", node.W
            yield f"{tag}.b", node.b
            if include_centers and node.centers is not None:
                yield f"{tag}.centers", node.centers

    def n_params(self, include_centers=True):
        return sum(a.size for _, a in self.parameters(include_centers))

    def copy(self):
        levels = [
            [
                PatNode(
                    n.level,
                    n.index,
                    n.W.copy(),
                    n.b.copy(),
                    None if n.centers is None else n.centers.copy(),
                    n.children,
                )
                for n in level
            ]
            for level in self.levels
        ]
        return PatTree(self.schema, self.widths, levels, self.cluster_on)


def _glorot(rng, fan_out, fan_in):
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_out, fan_in))


def build_tree(schema, widths, seed, cluster_on="preactivation"):
    """Build a tree with seeded Glorot-uniform weights, zero biases and unit-norm centers.

    ``widths`` is ``[d_0, d_1, ..., d_l]``: the input width followed by the
    feature width of every level.
    """
    if not isinstance(schema, AttributeSchema):
        schema = AttributeSchema.from_list(schema)
    widths = [int(w) for w in widths]
    if len(widths) != schema.depth + 1:
        raise InvalidSchema(
            f"need {schema.depth + 1} widths (input plus one per level), got {len(widths)}"
        )
    if any(w <= 0 for w in widths):
        raise InvalidSchema(f"widths must be positive: {widths}")

    rng = np.random.default_rng(seed)
    sizes = schema.level_sizes()
    levels = []
    for j, count in enumerate(sizes):
        d_in, d_out = widths[j], widths[j + 1]
        leaf = j == schema.depth - 1
        level = []
        for k in range(count):
            W = _glorot(rng, d_out, d_in)
            b = np.zeros(d_out)
            centers, children = None, ()
            if not leaf:
                m = schema.states(j)
                centers = rng.standard_normal((m, d_out))
                centers /= np.linalg.norm(centers, axis=1, keepdims=True)
                children = tuple(k * m + i for i in range(m))
            level.append(PatNode(j, k, W, b, centers, children))
        levels.append(level)
    return PatTree(schema, widths, levels, cluster_on)


@dataclass
class MembershipTrace:
    """Forward quantities for a batch of samples.

    ``features[j][k]`` is the rectified (N, d_{j+1}) output, ``mass[j][k]``
    is (N,).  For non-leaf nodes ``clustered[j][k]`` is the vector compared
    against the centers, ``assign[j][k]`` the (N, M) softmax over cosine
    similarities and ``posteriors[j][k]`` that softmax scaled by the node mass
    (one-hot argmax under hard routing).
    """

    inputs: np.ndarray
    features: list
    mass: list
    clustered: list = field(default_factory=list)
    similarities: list = field(default_factory=list)
    assign: list = field(default_factory=list)
    posteriors: list = field(default_factory=list)
    routing: str = "soft"

    @property
    def n_samples(self):
        return self.inputs.shape[0]

    def leaf_mass(self):
        return np.stack(self.mass[-1], axis=1)

    def leaf_features(self):
        return self.features[-1]


def _hard(assign):
    onehot = np.zeros_like(assign)
    onehot[np.arange(assign.shape[0]), np.argmax(assign, axis=1)] = 1.0
    return onehot


def propagate(tree, inputs, routing="soft"):
    """Route a sample (or a batch of row samples) through the tree.

    The root has mass 1; each non-leaf node splits its mass over its children
    by a softmax of cosine similarities between its features and its centers.
    ``routing="hard"`` replaces that split with a one-hot argmax (ties go to the
    lowest index).
    """
    if routing not in ("soft", "hard"):
        raise ValueError(f"unknown routing {routing!r}")
    X = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if X.ndim != 2 or X.shape[1] != tree.widths[0]:
        raise ShapeMismatch(f"input width {X.shape[-1]} != {tree.widths[0]}")
    kernels.row_norms(X, "input")
    n = X.shape[0]

    pre = tree.cluster_on == "preactivation"

    def forward(node, x):
        z = kernels.affine_forward(node.W, node.b, x, relu=False)
        return np.maximum(z, 0.0), z

    root_out, root_z = forward(tree.root, X)
    features = [[root_out]]
    clustered = [[root_z if pre else root_out]]
    mass = [[np.ones(n)]]
    sims, assign, posts = [], [], []
    for j in range(tree.depth - 1):
        lvl_sims, lvl_assign, lvl_posts = [], [], []
        size = len(tree.levels[j + 1])
        next_feats, next_clustered, next_mass = [None] * size, [None] * size, [None] * size
        for k, node in enumerate(tree.levels[j]):
            try:
                D = kernels.cosine_rows(clustered[j][k], node.centers)[0]
            except DegenerateVector as exc:
                raise DegenerateVector(f"node ({j},{k}): {exc}") from None
            s = kernels.softmax(D, axis=1)
            P = mass[j][k][:, None] * (_hard(s) if routing == "hard" else s)
            lvl_sims.append(D)
            lvl_assign.append(s)
            lvl_posts.append(P)
            for m, c in enumerate(node.children):
                out, z = forward(tree.levels[j + 1][c], features[j][k])
                next_feats[c] = out
                next_clustered[c] = z if pre else out
                next_mass[c] = P[:, m]
        sims.append(lvl_sims)
        assign.append(lvl_assign)
        posts.append(lvl_posts)
        features.append(next_feats)
        clustered.append(next_clustered)
        mass.append(next_mass)
    return MembershipTrace(X, features, mass, clustered, sims, assign, posts, routing)


def gt_path_nodes(schema, path, levels=None):
    """Node index per level along a ground-truth attribute path.

    ``path`` holds one state index per attribute (``-1``/``None`` = missing).
    Returns indices for levels ``0..levels-1`` (default: every level).
    """
    if isinstance(schema, PatTree):
        schema = schema.schema
    if levels is None:
        levels = schema.depth
    nodes = [0]
    for j in range(levels - 1):
        y = path[j] if j < len(path) else None
        if y is None or y < 0:
            raise MissingLabel(f"attribute {j} ({schema.names[j]}) is missing on this path")
        if y >= schema.states(j):
            raise MissingLabel(f"state {y} out of range for attribute {schema.names[j]}")
        nodes.append(nodes[-1] * schema.states(j) + int(y))
    return nodes


def path_node_table(schema, attributes):
    """Batched :func:`gt_path_nodes`: (N, depth) node indices, ``-1`` below a missing label."""
    A = np.asarray(attributes, dtype=np.int64).reshape(-1, schema.depth - 1)
    out = np.full((A.shape[0], schema.depth), MISSING, dtype=np.int64)
    out[:, 0] = 0
    for j in range(schema.depth - 1):
        ok = (out[:, j] >= 0) & (A[:, j] >= 0)
        out[ok, j + 1] = out[ok, j] * schema.states(j) + A[ok, j]
    return out


def node_targets(schema, attributes, level, index):
    """Per-sample supervision at node (level, index).

    Returns ``(gt, labeled)``: ``labeled`` marks samples carrying attribute
    labels through ``level``; ``gt`` is their state at ``level`` when this node
    lies on their ground-truth path and ``-1`` otherwise.
    """
    A = np.asarray(attributes, dtype=np.int64).reshape(-1, schema.depth - 1)
    table = path_node_table(schema, A)
    labeled = np.all(A[:, : level + 1] >= 0, axis=1)
    on_path = labeled & (table[:, level] == index)
    gt = np.where(on_path, A[:, level], MISSING)
    return gt, labeled


def _signs(shape, gt):
    sign = np.ones(shape)
    rows = np.flatnonzero(gt >= 0)
    sign[rows, gt[rows]] = -1.0
    return sign


def node_loss(features, centers, posteriors, gt):
    """Per-sample attribute loss of one node.

    On the ground-truth path the true cluster contributes ``p (1 - D)`` and
    every other cluster ``p (1 + D)``; off the path all clusters contribute
    ``p (1 + D)``.  ``gt`` is ``-1`` for off-path samples.
    """
    X = np.atleast_2d(features)
    P = np.atleast_2d(posteriors)
    gt = np.atleast_1d(np.asarray(gt, dtype=np.int64))
    D = kernels.cosine_rows(X, centers)[0]
    out = np.sum(P * (1.0 + _signs(D.shape, gt) * D), axis=1)
    return float(out[0]) if np.ndim(features) == 1 else out


def pat_loss(tree, trace, attributes):
    """Summed attribute loss over every labeled sample and every non-leaf node."""
    return float(sum(v.sum() for v in pat_loss_terms(tree, trace, attributes).values()))


def pat_loss_terms(tree, trace, attributes):
    """``{(level, index): per-sample loss}``, zero for samples unlabeled at that level."""
    A = np.asarray(attributes, dtype=np.int64).reshape(trace.n_samples, -1)
    terms = {}
    for j in range(tree.depth - 1):
        for k, node in enumerate(tree.levels[j]):
            gt, labeled = node_targets(tree.schema, A, j, k)
            loss = np.zeros(trace.n_samples)
            if labeled.any():
                loss[labeled] = node_loss(
                    trace.clustered[j][k][labeled],
                    node.centers,
                    trace.posteriors[j][k][labeled],
                    gt[labeled],
                )
            terms[(j, k)] = loss
    return terms


def pat_backward_features(features, centers, posteriors, gt, labeled=None):
    """Feature error of the attribute loss at one node, per sample.

    On-path samples: ``1/(M-1) sum_{m != gt} p_m dD_m/dx - p_gt dD_gt/dx``;
    off-path samples: ``1/M sum_m p_m dD_m/dx``.  Posteriors are held fixed.
    Rows outside ``labeled`` are zero.
    """
    single = np.ndim(features) == 1
    X = np.atleast_2d(features)
    P = np.atleast_2d(posteriors)
    gt = np.atleast_1d(np.asarray(gt, dtype=np.int64))
    M = P.shape[1]
    on = gt >= 0
    G = np.where(on[:, None], P / (M - 1), P / M)
    rows = np.flatnonzero(on)
    G[rows, gt[rows]] = -P[rows, gt[rows]]
    if labeled is not None:
        G[~np.asarray(labeled, dtype=bool)] = 0.0
    D, Xhat, Chat, xn, cn = kernels.cosine_rows(X, centers)
    gX, _ = kernels.cosine_rows_backward(G, D, Xhat, Chat, xn, cn)
    return gX[0] if single else gX


def center_delta(features, centers, posteriors, gt, labeled=None):
    """Center displacement for one node over a batch.

    A sample pulls its ground-truth center (weight ``-p dD/dc``) and pushes
    every other center of this node (``+p dD/dc``); the pull and push sums are
    normalized by ``1 +`` the respective counts.  Off-path samples push all
    centers; unlabeled samples contribute nothing.
    """
    C = np.asarray(centers, dtype=np.float64)
    X = np.atleast_2d(features)
    if X.shape[0] == 0:
        return np.zeros_like(C)
    P = np.atleast_2d(posteriors)
    gt = np.atleast_1d(np.asarray(gt, dtype=np.int64))
    keep = np.ones(X.shape[0], dtype=bool) if labeled is None else np.asarray(labeled, bool)
    if not keep.any():
        return np.zeros_like(C)
    X, P, gt = X[keep], P[keep], gt[keep]
    pull = np.zeros_like(P)
    rows = np.flatnonzero(gt >= 0)
    pull[rows, gt[rows]] = 1.0
    push = 1.0 - pull
    D, Xhat, Chat, xn, cn = kernels.cosine_rows(X, C)
    _, g_pull = kernels.cosine_rows_backward(-pull * P, D, Xhat, Chat, xn, cn)
    _, g_push = kernels.cosine_rows_backward(push * P, D, Xhat, Chat, xn, cn)
    n_pull = 1.0 + pull.sum(axis=0)
    n_push = 1.0 + push.sum(axis=0)
    return g_pull / n_pull[:, None] + g_push / n_push[:, None]


def apply_center_update(node, delta, alpha):
    """In-place ``c <- c - alpha * delta``; refuses to leave a center degenerate."""
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    updated = node.centers - alpha * np.asarray(delta, dtype=np.float64)
    kernels.row_norms(updated, f"center of node ({node.level},{node.index})")
    node.centers[...] = updated


def pat_feature_errors(tree, trace, attributes):
    """Feature error of the attribute loss for every non-leaf node: ``{(j, k): (N, d)}``."""
    A = np.asarray(attributes, dtype=np.int64).reshape(trace.n_samples, -1)
    out = {}
    for j in range(tree.depth - 1):
        for k, node in enumerate(tree.levels[j]):
            gt, labeled = node_targets(tree.schema, A, j, k)
            if labeled.any():
                out[(j, k)] = pat_backward_features(
                    trace.clustered[j][k], node.centers, trace.posteriors[j][k], gt, labeled
                )
            else:
                out[(j, k)] = np.zeros_like(trace.clustered[j][k])
    return out


def center_deltas(tree, trace, attributes):
    """Center displacement for every non-leaf node: ``{(j, k): (M, d)}``."""
    A = np.asarray(attributes, dtype=np.int64).reshape(trace.n_samples, -1)
    out = {}
    for j in range(tree.depth - 1):
        for k, node in enumerate(tree.levels[j]):
            gt, labeled = node_targets(tree.schema, A, j, k)
            out[(j, k)] = center_delta(
                trace.clustered[j][k], node.centers, trace.posteriors[j][k], gt, labeled
            )
    return out


@dataclass
class TreeGrads:
    W: dict
    b: dict
    centers: dict
    inputs: np.ndarray


def backward(tree, trace, leaf_feature_grads, leaf_mass_grads=None, feature_errors=None):
    """Backpropagate through the node chain.

    ``leaf_feature_grads`` is a list of (N, d_l) arrays, one per leaf;
    ``leaf_mass_grads`` an optional (N, K_l) gradient with respect to leaf
    masses, which is chained through the routing softmaxes back into ancestor
    features and centers (nothing flows through hard routing);
    ``feature_errors`` an optional ``{(j, k): (N, d)}`` error injected on the
    clustered vectors of non-leaf nodes.
    """
    depth = tree.depth
    pre = tree.cluster_on == "preactivation"
    gx = [[np.zeros_like(f) for f in level] for level in trace.features]
    gu = [[None for _ in level] for level in trace.features]
    gq = [[np.zeros(trace.n_samples) for _ in level] for level in trace.features]
    for k, g in enumerate(leaf_feature_grads):
        gx[-1][k] = gx[-1][k] + g
    if leaf_mass_grads is not None:
        for k in range(len(gq[-1])):
            gq[-1][k] = gq[-1][k] + leaf_mass_grads[:, k]
    if feature_errors:
        for (j, k), e in feature_errors.items():
            gu[j][k] = e

    grads = TreeGrads({}, {}, {}, np.zeros_like(trace.inputs))
    for j in range(depth - 1, -1, -1):
        for k, node in enumerate(tree.levels[j]):
            if not node.is_leaf:
                gP = np.stack([gq[j + 1][c] for c in node.children], axis=1)
                gC = np.zeros_like(node.centers)
                if trace.routing == "soft":
                    s = trace.assign[j][k]
                    q = trace.mass[j][k]
                    if j > 0:
                        gq[j][k] = gq[j][k] + np.sum(gP * s, axis=1)
                    gs = q[:, None] * gP
                    gD = s * (gs - np.sum(s * gs, axis=1, keepdims=True))
                    D, Xhat, Chat, xn, cn = kernels.cosine_rows(trace.clustered[j][k], node.centers)
                    gX, gC = kernels.cosine_rows_backward(gD, D, Xhat, Chat, xn, cn)
                    gu[j][k] = gX if gu[j][k] is None else gu[j][k] + gX
                grads.centers[(j, k)] = gC
            out = trace.features[j][k]
            if gu[j][k] is None:
                g_pre = np.where(out > 0.0, gx[j][k], 0.0)
            elif pre:
                g_pre = np.where(out > 0.0, gx[j][k], 0.0) + gu[j][k]
            else:
                g_pre = np.where(out > 0.0, gx[j][k] + gu[j][k], 0.0)
            parent = k // tree.schema.states(j - 1) if j > 0 else 0
            parent_x = trace.inputs if j == 0 else trace.features[j - 1][parent]
            gW, gb, gin = kernels.affine_backward(node.W, parent_x, g_pre)
            grads.W[(j, k)] = gW
            grads.b[(j, k)] = gb
            if j == 0:
                grads.inputs = gin
            else:
                gx[j - 1][parent] = gx[j - 1][parent] + gin
    return grads
