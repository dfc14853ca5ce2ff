"""Datasets: synthetic attribute-confounded generation, CSV files, model files."""

import csv
import io
import json
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvalidConfig, ParseError, SchemaMismatch, VersionMismatch
from .head import LeafClassifiers
from .tree import AttributeSchema, PatNode, PatTree

MISSING = -1
SOURCES = ("primary", "auxiliary")
MODEL_FORMAT = "pattree-model/1"

DEFAULT_SCHEMA = (("gender", 2), ("race", 3))


class Sample(NamedTuple):
    id: int
    features: np.ndarray
    attributes: np.ndarray
    label: int
    source: str


@dataclass
class Dataset:
    """Column-oriented sample store.

    ``attributes`` is (N, n_attributes) with ``-1`` for a missing label, and
    ``classes`` is (N,) with ``-1`` for a missing class label.  ``sources``
    holds indices into :data:`SOURCES`.
    """

    schema: AttributeSchema
    ids: np.ndarray
    features: np.ndarray
    attributes: np.ndarray
    classes: np.ndarray
    sources: np.ndarray = None

    def __post_init__(self):
        n = len(self.ids)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] != n:
            self.features = self.features.reshape(n, -1)
        self.attributes = np.asarray(self.attributes, dtype=np.int64).reshape(
            n, len(self.schema.attributes)
        )
        self.classes = np.asarray(self.classes, dtype=np.int64).reshape(n)
        if self.sources is None:
            self.sources = np.zeros(n, dtype=np.int64)
        self.sources = np.asarray(self.sources, dtype=np.int64).reshape(n)

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, i):
        return Sample(
            int(self.ids[i]),
            self.features[i],
            self.attributes[i],
            int(self.classes[i]),
            SOURCES[self.sources[i]],
        )

    @property
    def width(self):
        return self.features.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(
            self.schema,
            self.ids[idx],
            self.features[idx],
            self.attributes[idx],
            self.classes[idx],
            self.sources[idx],
        )

    def with_source(self, source):
        out = self.subset(np.arange(len(self)))
        out.sources[:] = SOURCES.index(source)
        return out

    def concat(self, other):
        if other.schema != self.schema:
            raise SchemaMismatch("cannot concatenate datasets with different schemas")
        return Dataset(
            self.schema,
            np.concatenate([self.ids, other.ids]),
            np.vstack([self.features, other.features]),
            np.vstack([self.attributes, other.attributes]),
            np.concatenate([self.classes, other.classes]),
            np.concatenate([self.sources, other.sources]),
        )

    def strip_attributes(self, fraction, seed):
        """Copy keeping attribute labels on a seeded ``round(fraction * N)`` subset only."""
        if not 0.0 <= fraction <= 1.0:
            raise InvalidConfig(f"attribute label fraction {fraction} outside [0, 1]")
        out = self.subset(np.arange(len(self)))
        keep = int(round(fraction * len(self)))
        if keep == len(self):
            return out
        rng = np.random.default_rng([seed, 7])
        drop = rng.permutation(len(self))[keep:]
        out.attributes[drop] = MISSING
        return out

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.schema == other.schema
            and all(
                np.array_equal(getattr(self, f), getattr(other, f))
                for f in ("ids", "features", "attributes", "classes", "sources")
            )
        )


@dataclass
class SynthConfig:
    schema: tuple = DEFAULT_SCHEMA
    n_classes: int = 7
    width: int = 16
    attribute_separation: float = 6.0
    class_separation: float = 2.0
    noise_sigma: float = 1.0
    # share of each class direction common to every attribute combination
    class_sharing: float = 0.5
    n_train: int = 6000
    n_test: int = 2000
    seed: int = 0

    def validate(self):
        try:
            schema = AttributeSchema.from_list(self.schema)
        except ValueError as exc:
            raise InvalidConfig(str(exc)) from exc
        if self.attribute_separation <= 0 or self.class_separation <= 0:
            raise InvalidConfig("separations must be positive")
        if self.noise_sigma < 0:
            raise InvalidConfig("noise_sigma must be nonnegative")
        if min(self.n_train, self.n_test, self.n_classes, self.width) < 1:
            raise InvalidConfig("counts and width must be at least 1")
        if not 0.0 <= self.class_sharing <= 1.0:
            raise InvalidConfig("class_sharing must lie in [0, 1]")
        return schema


def _unit(rng, shape):
    v = rng.standard_normal(shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def combinations(schema):
    """Every full attribute combination in mixed-radix (leaf) order, (K_l, n_attributes)."""
    sizes = [n for _, n in schema.attributes]
    if not sizes:
        return np.zeros((1, 0), dtype=np.int64)
    grids = np.meshgrid(*[np.arange(n) for n in sizes], indexing="ij")
    return np.stack([g.reshape(-1) for g in grids], axis=1)


def generate(config):
    """Draw seeded train/test datasets where attribute variation dominates class variation.

    Each attribute state gets an offset vector; a combination's anchor is the
    sum of its states' offsets, so anchors differing in one attribute sit
    ``attribute_separation`` apart.  Class ``e`` under combination ``a`` moves
    the anchor by ``class_separation`` along a direction mixing a shared class
    direction with a combination-specific one, then isotropic noise is added.
    """
    schema = config.validate()
    rng = np.random.default_rng(config.seed)
    d, E = config.width, config.n_classes
    combos, anchors = _anchors(schema, config, rng)
    shared = _unit(rng, (E, d))
    specific = _unit(rng, (len(combos), E, d))
    rho = config.class_sharing
    dirs = np.sqrt(rho) * shared[None] + np.sqrt(1.0 - rho) * specific
    dirs *= config.class_separation / np.linalg.norm(dirs, axis=-1, keepdims=True)

    n = config.n_train + config.n_test
    combo_idx = rng.integers(len(combos), size=n)
    cls = rng.integers(E, size=n)
    noise = rng.standard_normal((n, d)) * config.noise_sigma
    X = anchors[combo_idx] + dirs[combo_idx, cls] + noise
    A = combos[combo_idx]
    ids = np.arange(n)
    full = Dataset(schema, ids, X, A, cls)
    train = full.subset(np.arange(config.n_train))
    test = full.subset(np.arange(config.n_train, n))
    return train, test


def _anchors(schema, config, rng):
    combos = combinations(schema)
    # |u_s - u_t| is about attribute_separation for distinct states of one attribute
    offsets = [
        _unit(rng, (n, config.width)) * config.attribute_separation / np.sqrt(2.0)
        for _, n in schema.attributes
    ]
    anchors = np.zeros((len(combos), config.width))
    for j, u in enumerate(offsets):
        anchors += u[combos[:, j]]
    return combos, anchors


def anchors_of(config):
    """The combination anchors :func:`generate` draws for ``config``, (combos, anchors)."""
    schema = config.validate()
    return _anchors(schema, config, np.random.default_rng(config.seed))


# -- dataset files -----------------------------------------------------------


def _fmt(x):
    return format(x, ".17g")


def dataset_header(width, n_attributes):
    return (
        ["id"]
        + [f"f{i}" for i in range(width)]
        + [f"attr_{j}" for j in range(n_attributes)]
        + ["class", "source"]
    )


def write_dataset(path, dataset):
    with open(path, "w", newline="") as fh:
        fh.write(dumps_dataset(dataset))


def dumps_dataset(dataset):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(dataset_header(dataset.width, len(dataset.schema.attributes)))
    for i in range(len(dataset)):
        w.writerow(
            [int(dataset.ids[i])]
            + [_fmt(v) for v in dataset.features[i]]
            + [int(a) for a in dataset.attributes[i]]
            + [int(dataset.classes[i]), SOURCES[dataset.sources[i]]]
        )
    return buf.getvalue()


def read_dataset(path, schema):
    """Parse a dataset file written by :func:`write_dataset`.

    ``schema`` supplies the attribute state counts; the header must agree with
    its attribute count.
    """
    if not isinstance(schema, AttributeSchema):
        schema = AttributeSchema.from_list(schema)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty dataset file", line=1)
    header = rows[0]
    n_attr = len(schema.attributes)
    width = len(header) - 3 - n_attr
    if width < 1 or header != dataset_header(width, n_attr):
        attr_cols = sum(h.startswith("attr_") for h in header)
        if attr_cols != n_attr and header[:1] == ["id"]:
            raise SchemaMismatch(
                f"file has {attr_cols} attribute columns, schema expects {n_attr}"
            )
        raise ParseError(f"unexpected header {header[:4]}...", line=1)

    ids, X, A, y, src = [], [], [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
        try:
            ids.append(int(row[0]))
            feats = [float(v) for v in row[1 : 1 + width]]
            attrs = [int(v) for v in row[1 + width : 1 + width + n_attr]]
            label = int(row[-2])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
        if not np.all(np.isfinite(feats)):
            raise ParseError("non-finite feature", line=lineno)
        for j, a in enumerate(attrs):
            if a < MISSING or a >= schema.states(j):
                raise ParseError(f"attribute {j} value {a} out of range", line=lineno)
        if label < MISSING:
            raise ParseError(f"class label {label} out of range", line=lineno)
        if row[-1] not in SOURCES:
            raise ParseError(f"unknown source {row[-1]!r}", line=lineno)
        X.append(feats)
        A.append(attrs)
        y.append(label)
        src.append(SOURCES.index(row[-1]))
    n = len(ids)
    return Dataset(
        schema,
        np.array(ids, dtype=np.int64),
        np.array(X, dtype=np.float64).reshape(n, width),
        np.array(A, dtype=np.int64).reshape(n, n_attr),
        np.array(y, dtype=np.int64),
        np.array(src, dtype=np.int64),
    )


# -- model files -------------------------------------------------------------


def _tolist(a):
    return np.asarray(a, dtype=np.float64).tolist()


def dumps_model(tree, classifiers, config=None):
    doc = {
        "format": MODEL_FORMAT,
        "schema": tree.schema.to_list(),
        "widths": list(tree.widths),
        "cluster_on": tree.cluster_on,
        "n_classes": int(classifiers.n_classes),
        "config": config or {},
        "nodes": [
            {
                "level": n.level,
                "index": n.index,
                "W": _tolist(n.W),
                "b": _tolist(n.b),
                "centers": None if n.centers is None else _tolist(n.centers),
            }
            for n in tree.nodes()
        ],
        "classifiers": {"W": _tolist(classifiers.W), "b": _tolist(classifiers.b)},
    }
    return json.dumps(doc, indent=1) + "\n"


def save_model(path, tree, classifiers, config=None):
    with open(path, "w") as fh:
        fh.write(dumps_model(tree, classifiers, config))


def loads_model(text, schema=None):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    if doc.get("format") != MODEL_FORMAT:
        raise VersionMismatch(f"model format {doc.get('format')!r}, expected {MODEL_FORMAT!r}")
    try:
        file_schema = AttributeSchema.from_list(doc["schema"])
        if schema is not None:
            if not isinstance(schema, AttributeSchema):
                schema = AttributeSchema.from_list(schema)
            if schema != file_schema:
                raise SchemaMismatch(
                    f"model schema {file_schema.to_list()} != requested {schema.to_list()}"
                )
        widths = doc["widths"]
        sizes = file_schema.level_sizes()
        levels = [[None] * n for n in sizes]
        for nd in doc["nodes"]:
            j, k = nd["level"], nd["index"]
            centers = None if nd["centers"] is None else np.array(nd["centers"], dtype=np.float64)
            children = ()
            if centers is not None:
                m = file_schema.states(j)
                children = tuple(k * m + i for i in range(m))
            levels[j][k] = PatNode(
                j, k, np.array(nd["W"], dtype=np.float64), np.array(nd["b"], dtype=np.float64),
                centers, children,
            )
        if any(n is None for level in levels for n in level):
            raise ParseError("model file is missing nodes")
        tree = PatTree(file_schema, widths, levels, doc.get("cluster_on", "preactivation"))
        cls = LeafClassifiers(
            np.array(doc["classifiers"]["W"], dtype=np.float64).reshape(
                sizes[-1], doc["n_classes"], widths[-1]
            ),
            np.array(doc["classifiers"]["b"], dtype=np.float64).reshape(sizes[-1], doc["n_classes"]),
        )
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        if isinstance(exc, (SchemaMismatch, ParseError)):
            raise
        raise ParseError(f"malformed model file: {exc}") from None
    return tree, cls, doc.get("config", {})


def load_model(path, schema=None):
    with open(path) as fh:
        return loads_model(fh.read(), schema)


def config_dict(obj):
    """Plain-JSON view of a config dataclass."""
    d = asdict(obj)
    if "schema" in d:
        d["schema"] = [list(p) for p in d["schema"]]
    return d
