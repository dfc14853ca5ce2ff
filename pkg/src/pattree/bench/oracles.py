"""Independent re-derivations used to check the production code paths.

The formula oracle below is deliberately naive: scalar loops over samples,
clusters and coordinates, its own cosine arithmetic, and its own ground-truth
path walk.  It shares nothing with :mod:`pattree.tree` beyond reading the
tree's parameters and the clustered vectors of a trace.
"""

import math

import numpy as np


def finite_diff_grad(evaluate, parameters, h=1e-5):
    """Central-difference gradient of ``evaluate()`` w.r.t. every entry of ``parameters``.

    ``parameters`` is a sequence of arrays perturbed in place (and restored).
    Returns a list of arrays shaped like the parameters.
    """
    if not h > 0:
        raise ValueError("step h must be positive")
    grads = []
    for p in parameters:
        g = np.zeros(p.shape)
        flat = p.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = evaluate()
            flat[i] = old - h
            down = evaluate()
            flat[i] = old
            g.reshape(-1)[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def _dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def _cos(a, b):
    return _dot(a, b) / (math.sqrt(_dot(a, a)) * math.sqrt(_dot(b, b)))


def _dcos_dfirst(a, b):
    # d cos(a, b) / da = b/(|b||a|) - (b.a / (|b| |a|^3)) a
    na, nb = math.sqrt(_dot(a, a)), math.sqrt(_dot(b, b))
    k = _dot(b, a) / (nb * na**3)
    return [bi / (nb * na) - k * ai for ai, bi in zip(a, b)]


def _posteriors(x, centers, q):
    sims = [_cos(c, x) for c in centers]
    z = [math.exp(s) for s in sims]
    total = sum(z)
    return [q * v / total for v in z], sims


def oracle_pat_formulas(tree, trace, attributes):
    """Recompute the attribute loss, per-node feature errors and center deltas.

    Returns ``(loss, errors, deltas)``: ``loss`` summed over samples and nodes,
    ``errors[(j, k)]`` a list of per-sample vectors, ``deltas[(j, k)]`` a list
    of per-center vectors.
    """
    attributes = np.asarray(attributes).tolist()
    n = trace.inputs.shape[0]
    states = [s for _, s in tree.schema.attributes]
    loss = 0.0
    errors, deltas = {}, {}

    # masses walked from the root with the oracle's own posteriors
    mass = [{0: [1.0] * n}]
    for j, M in enumerate(states):
        level_mass = {}
        for k, node in enumerate(tree.levels[j]):
            centers = node.centers.tolist()
            d = len(centers[0])
            err_rows = []
            pull_sum = [[0.0] * d for _ in range(M)]
            push_sum = [[0.0] * d for _ in range(M)]
            pull_cnt = [0] * M
            push_cnt = [0] * M
            for i in range(n):
                x = trace.clustered[j][k][i].tolist()
                q = mass[j][k][i]
                p, D = _posteriors(x, centers, q)
                for m in range(M):
                    level_mass.setdefault(k * M + m, [0.0] * n)[i] = p[m]

                labels = attributes[i]
                if any(labels[r] < 0 for r in range(j + 1)):
                    err_rows.append([0.0] * d)
                    continue
                node_on_path = 0
                for r in range(j):
                    node_on_path = node_on_path * states[r] + labels[r]
                gt = labels[j] if node_on_path == k else None

                e = [0.0] * d
                for m in range(M):
                    gx = _dcos_dfirst(x, centers[m])
                    gc = _dcos_dfirst(centers[m], x)
                    if gt is None:
                        loss += p[m] * (1 + D[m])
                        w = p[m] / M
                    elif m == gt:
                        loss += p[m] * (1 - D[m])
                        w = -p[m]
                    else:
                        loss += p[m] * (1 + D[m])
                        w = p[m] / (M - 1)
                    for t in range(d):
                        e[t] += w * gx[t]
                    if gt is not None and m == gt:
                        pull_cnt[m] += 1
                        for t in range(d):
                            pull_sum[m][t] -= p[m] * gc[t]
                    else:
                        push_cnt[m] += 1
                        for t in range(d):
                            push_sum[m][t] += p[m] * gc[t]
                err_rows.append(e)
            errors[(j, k)] = err_rows
            deltas[(j, k)] = [
                [
                    pull_sum[m][t] / (1 + pull_cnt[m]) + push_sum[m][t] / (1 + push_cnt[m])
                    for t in range(d)
                ]
                for m in range(M)
            ]
        mass.append(level_mass)
    return loss, errors, deltas


def feature_error_divergence(features, centers, mass, gt, h=1e-6):
    """How far the prescribed per-node feature error is from the true gradient of the node loss.

    The prescribed error treats posteriors as constants and drops the
    ``(1 +/- D)`` factors.  Here the node loss is differentiated numerically
    with the posteriors recomputed from the perturbed features (node mass held
    fixed).  Returns ``(cosine, norm ratio)`` per sample, where the ratio is
    ``|prescribed| / |true|``; a cosine near 1 means the two point the same way.
    """
    from .. import kernels
    from ..tree import node_loss, pat_backward_features

    X = np.array(np.atleast_2d(features), dtype=np.float64)
    q = np.asarray(mass, dtype=np.float64).reshape(-1)
    gt = np.asarray(gt, dtype=np.int64).reshape(-1)

    def loss(i):
        P = q[i] * kernels.softmax(kernels.cosine_rows(X[i : i + 1], centers)[0], axis=1)
        return float(node_loss(X[i : i + 1], centers, P, gt[i : i + 1])[0])

    P = q[:, None] * kernels.softmax(kernels.cosine_rows(X, centers)[0], axis=1)
    prescribed = pat_backward_features(X, centers, P, gt)
    out = []
    for i in range(X.shape[0]):
        true = finite_diff_grad(lambda: loss(i), [X[i]], h)[0]
        a, b = prescribed[i], true
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        cos = float(a @ b / (na * nb)) if na > 0 and nb > 0 else float("nan")
        out.append((cos, float(na / nb) if nb > 0 else float("inf")))
    return out
