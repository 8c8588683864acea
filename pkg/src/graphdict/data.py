"""Graph data model, TU-format ingestion, featurization, fold splitting.

Graphs are undirected, unweighted, with optional integer node labels and a
class label per graph.  The loader reads the plain-text multi-file layout
used by the public graph-classification benchmarks: a global 1-indexed edge
list, a node-to-graph indicator, one class label per graph, and an optional
node-label file.  Feature matrices and normalized adjacencies are plain
float64 NumPy arrays.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, ParseError, SchemeError, ShapeError

NODE_LABEL_ONEHOT = "node-label-onehot"
DEGREE_ONEHOT = "degree-onehot"


@dataclass
class LabeledGraph:
    """One undirected graph with an optional node labeling and a class label.

    The adjacency is binary and symmetric with a zero diagonal; node labels,
    when present, are contiguous 0-based ids.
    """

    adjacency: np.ndarray
    class_label: int
    node_labels: np.ndarray | None = None

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=np.float64)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or adj.shape[0] < 1:
            raise FormatError(f"adjacency must be square and non-empty, got {adj.shape}")
        if not np.array_equal(adj, adj.T):
            raise FormatError("adjacency must be symmetric")
        if np.trace(adj) != 0.0:
            raise FormatError("adjacency diagonal must be zero")
        if not np.isin(adj, (0.0, 1.0)).all():
            raise FormatError("adjacency must be binary")
        self.adjacency = adj
        if self.node_labels is not None:
            labels = np.asarray(self.node_labels, dtype=np.int64)
            if labels.shape != (adj.shape[0],):
                raise FormatError("node_labels length must equal node count")
            self.node_labels = labels

    @property
    def node_count(self):
        return self.adjacency.shape[0]

    def degrees(self):
        return self.adjacency.sum(axis=1).astype(np.int64)


@dataclass
class DatasetBundle:
    """A named collection of graphs with contiguous 0-based label spaces."""

    graphs: list[LabeledGraph]
    num_classes: int
    num_node_labels: int  # 0 when the dataset is unlabeled
    name: str
    labels: np.ndarray = field(init=False)

    def __post_init__(self):
        self.labels = np.asarray([g.class_label for g in self.graphs],
                                 dtype=np.int64)

    def __len__(self):
        return len(self.graphs)

    def max_node_count(self):
        return max(g.node_count for g in self.graphs)


def _load_int_table(path, columns):
    """Parse a whitespace/comma-delimited integer table with ``columns`` columns."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != columns:
                raise ParseError(f"{path}:{lineno}: expected {columns} "
                                 f"integer field(s), got {len(parts)}")
            try:
                rows.append([int(p) for p in parts])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-integer token in {line!r}")
    return np.asarray(rows, dtype=np.int64).reshape(-1, columns)


def _remap_contiguous(values):
    """Map arbitrary integer ids onto 0..k-1, preserving sorted order."""
    uniques = np.unique(values)
    lookup = {int(v): i for i, v in enumerate(uniques)}
    return np.asarray([lookup[int(v)] for v in values], dtype=np.int64), len(uniques)


def load_tu_dataset(directory, name):
    """Load a TU-format dataset directory into a :class:`DatasetBundle`.

    Expects ``NAME_A.txt`` (1-indexed edge pairs), ``NAME_graph_indicator.txt``
    (node -> graph id), ``NAME_graph_labels.txt`` and, optionally,
    ``NAME_node_labels.txt``.  Edges are symmetrized, self-loops dropped, and
    graph/node label ids remapped to contiguous 0-based ranges.
    """
    prefix = os.path.join(directory, f"{name}_")
    paths = {key: prefix + suffix for key, suffix in [
        ("edges", "A.txt"),
        ("indicator", "graph_indicator.txt"),
        ("graph_labels", "graph_labels.txt"),
        ("node_labels", "node_labels.txt"),
    ]}
    for key in ("edges", "indicator", "graph_labels"):
        if not os.path.isfile(paths[key]):
            raise FormatError(f"missing mandatory dataset file: {paths[key]}")

    edges = _load_int_table(paths["edges"], 2)
    indicator = _load_int_table(paths["indicator"], 1).ravel()
    raw_graph_labels = _load_int_table(paths["graph_labels"], 1).ravel()

    total_nodes = indicator.shape[0]
    if total_nodes == 0:
        raise FormatError(f"{paths['indicator']}: no nodes listed")
    graph_ids = np.unique(indicator)
    if graph_ids.shape[0] != raw_graph_labels.shape[0]:
        raise FormatError(
            f"{name}: {graph_ids.shape[0]} graphs in the indicator but "
            f"{raw_graph_labels.shape[0]} graph labels")
    graph_index = {int(gid): i for i, gid in enumerate(graph_ids)}

    # global 1-based node id -> (graph index, local 0-based node index)
    node_graph = np.asarray([graph_index[int(g)] for g in indicator], dtype=np.int64)
    local_index = np.zeros(total_nodes, dtype=np.int64)
    counts = np.zeros(graph_ids.shape[0], dtype=np.int64)
    for node, g in enumerate(node_graph):
        local_index[node] = counts[g]
        counts[g] += 1

    adjacencies = [np.zeros((int(c), int(c)), dtype=np.float64) for c in counts]
    for u, v in edges:
        if not (1 <= u <= total_nodes) or not (1 <= v <= total_nodes):
            raise FormatError(f"{paths['edges']}: node {max(u, v)} referenced "
                              f"outside any graph (only {total_nodes} nodes)")
        gu, gv = node_graph[u - 1], node_graph[v - 1]
        if gu != gv:
            raise FormatError(f"{paths['edges']}: edge ({u}, {v}) crosses graphs")
        if u == v:
            continue  # self-loops are not part of the data model
        lu, lv = local_index[u - 1], local_index[v - 1]
        adjacencies[gu][lu, lv] = 1.0
        adjacencies[gu][lv, lu] = 1.0

    node_labels = None
    num_node_labels = 0
    if os.path.isfile(paths["node_labels"]):
        raw_node_labels = _load_int_table(paths["node_labels"], 1).ravel()
        if raw_node_labels.shape[0] != total_nodes:
            raise FormatError(
                f"{paths['node_labels']}: {raw_node_labels.shape[0]} labels "
                f"for {total_nodes} nodes")
        node_labels, num_node_labels = _remap_contiguous(raw_node_labels)

    class_labels, num_classes = _remap_contiguous(raw_graph_labels)

    graphs = []
    for g in range(graph_ids.shape[0]):
        members = node_graph == g
        labels = node_labels[members] if node_labels is not None else None
        graphs.append(LabeledGraph(adjacency=adjacencies[g],
                                   class_label=int(class_labels[g]),
                                   node_labels=labels))
    return DatasetBundle(graphs=graphs, num_classes=num_classes,
                         num_node_labels=num_node_labels, name=name)


def save_tu_dataset(bundle, directory):
    """Write a bundle back out in TU format (both edge directions stored)."""
    os.makedirs(directory, exist_ok=True)
    prefix = os.path.join(directory, f"{bundle.name}_")
    edge_lines = []
    indicator_lines = []
    node_label_lines = []
    offset = 0
    for gid, graph in enumerate(bundle.graphs, start=1):
        n = graph.node_count
        rows, cols = np.nonzero(graph.adjacency)
        for u, v in zip(rows, cols):
            edge_lines.append(f"{offset + u + 1}, {offset + v + 1}\n")
        indicator_lines.extend(f"{gid}\n" for _ in range(n))
        if graph.node_labels is not None:
            node_label_lines.extend(f"{lab}\n" for lab in graph.node_labels)
        offset += n
    with open(prefix + "A.txt", "w") as fh:
        fh.writelines(edge_lines)
    with open(prefix + "graph_indicator.txt", "w") as fh:
        fh.writelines(indicator_lines)
    with open(prefix + "graph_labels.txt", "w") as fh:
        fh.writelines(f"{g.class_label}\n" for g in bundle.graphs)
    if node_label_lines:
        with open(prefix + "node_labels.txt", "w") as fh:
            fh.writelines(node_label_lines)


def featurize(graph, scheme, dim):
    """One-hot node features under the given scheme.

    ``node-label-onehot`` uses the graph's node labels and requires ``dim``
    to cover every label id.  ``degree-onehot`` buckets each node by degree,
    clamping degrees above ``dim - 1`` into the last bin.  Every row sums to
    exactly 1.
    """
    n = graph.node_count
    if dim < 1:
        raise SchemeError(f"featurize: dim must be >= 1, got {dim}")
    if scheme == NODE_LABEL_ONEHOT:
        if graph.node_labels is None:
            raise SchemeError("node-label-onehot requested for a graph "
                              "without node labels")
        if int(graph.node_labels.max()) >= dim:
            raise SchemeError(f"node label id {int(graph.node_labels.max())} "
                              f"does not fit feature dim {dim}")
        bins = graph.node_labels
    elif scheme == DEGREE_ONEHOT:
        bins = np.minimum(graph.degrees(), dim - 1)
    else:
        raise SchemeError(f"unknown featurization scheme: {scheme!r}")
    features = np.zeros((n, dim), dtype=np.float64)
    features[np.arange(n), bins] = 1.0
    return features


def normalize_adjacency(adjacency):
    """Symmetric degree normalization with self-loops added first.

    Returns D^(-1/2) (A + I) D^(-1/2) where D is the degree matrix of A + I;
    an isolated node ends up with a single self-loop of weight 1.
    """
    adj = np.asarray(adjacency, dtype=np.float64)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ShapeError(f"normalize_adjacency: expected a square matrix, "
                         f"got {adj.shape}")
    with_loops = adj + np.eye(adj.shape[0])
    inv_sqrt = 1.0 / np.sqrt(with_loops.sum(axis=1))
    return with_loops * inv_sqrt[:, None] * inv_sqrt[None, :]


def stratified_folds(labels, k, seed):
    """Partition indices into k folds with per-class counts differing by <= 1.

    Members of each class are shuffled and dealt round-robin; the dealing
    start rotates by each class's remainder so leftover items stagger across
    folds (a 188-graph two-class set at k=10 yields fold sizes 18 or 19).
    Deterministic given the seed.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if k < 2:
        raise ConfigError(f"stratified_folds: k must be >= 2, got {k}")
    if k > labels.shape[0]:
        raise ConfigError(f"stratified_folds: k={k} exceeds dataset size "
                          f"{labels.shape[0]}")
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    start = 0
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        rng.shuffle(members)
        for i, idx in enumerate(members):
            folds[(start + i) % k].append(int(idx))
        start = (start + members.shape[0]) % k
    return [np.asarray(sorted(fold), dtype=np.int64) for fold in folds]
