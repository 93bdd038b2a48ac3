"""Graph ingestion, splits, traversal, and label-agreement metrics.

Graphs are undirected, unweighted, without self-loops, stored as adjacency
lists with sorted neighbor arrays. A Dataset is immutable after load and
safe to share across parallel runs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Dataset",
    "DatasetError",
    "Split",
    "NeighborhoodMap",
    "load_dataset",
    "homophily_ratio",
    "noise_ratio",
    "homophily_over_map",
    "k_hop",
    "k_hop_map",
    "mean_1hop_features",
    "stratified_split",
]


class DatasetError(ValueError):
    """Raised for malformed dataset directories or invariant violations."""


@dataclass(frozen=True)
class Dataset:
    """Undirected graph with node features and (possibly partial) labels.

    edges hold each unordered pair once as (u, v) with u < v; adj[u] is a
    sorted int array of u's neighbors.
    """

    node_count: int
    edges: np.ndarray          # [E, 2] int, u < v per row
    features: np.ndarray       # [node_count, d] float64
    labels: dict[int, int]     # node -> class id
    class_count: int
    name: str = "unnamed"
    adj: list[np.ndarray] = field(repr=False, default=None)

    def __post_init__(self):
        if self.adj is None:
            object.__setattr__(self, "adj", _build_adjacency(self.node_count, self.edges))
        _validate(self)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def degree(self, u: int) -> int:
        return len(self.adj[u])

    def degrees(self) -> np.ndarray:
        return np.array([len(a) for a in self.adj], dtype=np.int64)

    def label_array(self) -> np.ndarray:
        """Labels as an int array; -1 marks unlabeled nodes."""
        arr = np.full(self.node_count, -1, dtype=np.int64)
        for u, c in self.labels.items():
            arr[u] = c
        return arr


@dataclass(frozen=True)
class Split:
    """Disjoint train/val/test node-id sets covering all labeled nodes."""

    train: frozenset[int]
    val: frozenset[int]
    test: frozenset[int]
    seed: int

    def __post_init__(self):
        if self.train & self.val or self.train & self.test or self.val & self.test:
            raise ValueError("split sets overlap")


@dataclass
class NeighborhoodMap:
    """node -> ordered node list; kind is 'local', 'non-local', or 'k-hop'.

    `groups`, when present, is a list of (members, core, self_extra) triples
    produced by the neighborhood constructors: every node in `members`
    aggregates over `core`, plus itself when self_extra is True and the node
    is not already in `core`. It is an evaluation-speed detail; `neighbors`
    is always the authoritative per-node view.
    """

    neighbors: dict[int, np.ndarray]
    kind: str
    groups: list[tuple[np.ndarray, np.ndarray, bool]] | None = None

    def __post_init__(self):
        if self.kind not in ("local", "non-local", "k-hop"):
            raise ValueError(f"unknown neighborhood kind {self.kind!r}")


def _build_adjacency(node_count: int, edges: np.ndarray) -> list[np.ndarray]:
    buckets: list[list[int]] = [[] for _ in range(node_count)]
    for u, v in edges:
        buckets[int(u)].append(int(v))
        buckets[int(v)].append(int(u))
    return [np.array(sorted(b), dtype=np.int64) for b in buckets]


def _validate(d: Dataset) -> None:
    n = d.node_count
    if d.features.shape[0] != n:
        raise DatasetError(f"feature rows {d.features.shape[0]} != node count {n}")
    if len(d.edges):
        if d.edges.min() < 0 or d.edges.max() >= n:
            raise DatasetError("edge endpoint out of range")
        if np.any(d.edges[:, 0] == d.edges[:, 1]):
            raise DatasetError("self-loop present after load")
        canon = np.sort(d.edges, axis=1)
        if len(np.unique(canon, axis=0)) != len(canon):
            raise DatasetError("duplicate edge present after load")
    for u, c in d.labels.items():
        if not (0 <= u < n):
            raise DatasetError(f"labeled node {u} out of range")
        if not (0 <= c < d.class_count):
            raise DatasetError(f"label id {c} >= class count {d.class_count}")


def load_dataset(directory: str | os.PathLike, name: str | None = None) -> Dataset:
    """Load edges.tsv / features.tsv / labels.tsv from one directory.

    Edge lines are treated as undirected: duplicates and reversed duplicates
    collapse to one edge, self-loop lines are dropped. Feature lines are
    "id<TAB>f_1 f_2 ... f_d"; node ids must be exactly 0..N-1. Label lines
    are "id<TAB>class_id"; class_count is max class id + 1.
    """
    directory = os.fspath(directory)
    for fname in ("edges.tsv", "features.tsv", "labels.tsv"):
        if not os.path.isfile(os.path.join(directory, fname)):
            raise DatasetError(f"missing file {fname} in {directory}")

    feat_rows: dict[int, np.ndarray] = {}
    dim = None
    with open(os.path.join(directory, "features.tsv")) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            ident, _, rest = line.partition("\t")
            u = _parse_node_id(ident)
            row = np.array([float(x) for x in rest.split()], dtype=np.float64)
            if dim is None:
                dim = len(row)
            elif len(row) != dim:
                raise DatasetError(f"feature row length mismatch at node {u}: {len(row)} != {dim}")
            if u in feat_rows:
                raise DatasetError(f"duplicate feature row for node {u}")
            feat_rows[u] = row
    n = len(feat_rows)
    if n == 0:
        raise DatasetError("empty features.tsv")
    if sorted(feat_rows) != list(range(n)):
        raise DatasetError("feature node ids are not exactly 0..N-1")
    features = np.stack([feat_rows[u] for u in range(n)])

    pairs: set[tuple[int, int]] = set()
    with open(os.path.join(directory, "edges.tsv")) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DatasetError(f"malformed edge line {line!r}")
            u, v = _parse_node_id(parts[0]), _parse_node_id(parts[1])
            if u >= n or v >= n:
                raise DatasetError(f"edge endpoint {max(u, v)} >= node count {n}")
            if u == v:
                continue
            pairs.add((min(u, v), max(u, v)))
    edges = (np.array(sorted(pairs), dtype=np.int64)
             if pairs else np.zeros((0, 2), dtype=np.int64))

    labels: dict[int, int] = {}
    with open(os.path.join(directory, "labels.tsv")) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DatasetError(f"malformed label line {line!r}")
            u, c = _parse_node_id(parts[0]), _parse_node_id(parts[1])
            if u >= n:
                raise DatasetError(f"labeled node {u} >= node count {n}")
            labels[u] = c
    if not labels:
        raise DatasetError("empty labels.tsv")
    class_count = max(labels.values()) + 1

    if name is None:
        name = os.path.basename(os.path.normpath(directory))
    return Dataset(node_count=n, edges=edges, features=features,
                   labels=labels, class_count=class_count, name=name)


def _parse_node_id(token: str) -> int:
    try:
        value = int(token)
    except ValueError:
        raise DatasetError(f"non-integer node id {token!r}") from None
    if value < 0:
        raise DatasetError(f"negative node id {value}")
    return value


def homophily_ratio(d: Dataset) -> float:
    """Mean over non-isolated nodes of the fraction of same-label direct
    neighbors. Degree-0 nodes are skipped; all-isolated graphs are an error.
    """
    labels = _require_all_labeled(d)
    fractions = []
    for u in range(d.node_count):
        nbrs = d.adj[u]
        if len(nbrs) == 0:
            continue
        fractions.append(np.mean(labels[nbrs] == labels[u]))
    if not fractions:
        raise DatasetError("undefined HR: every node is isolated")
    return float(np.mean(fractions))


def noise_ratio(d: Dataset, nm: NeighborhoodMap) -> float:
    """Mean over nodes of the fraction of different-label nodes in the
    given neighborhood. A node's own entry is ignored; nodes whose
    neighborhood is empty (after dropping self) are skipped.
    """
    labels = _require_all_labeled(d)
    fractions = []
    for u in range(d.node_count):
        nbrs = nm.neighbors.get(u)
        if nbrs is None or len(nbrs) == 0:
            continue
        nbrs = np.asarray(nbrs)
        nbrs = nbrs[nbrs != u]
        if len(nbrs) == 0:
            continue
        fractions.append(np.mean(labels[nbrs] != labels[u]))
    if not fractions:
        raise DatasetError("undefined NR: every neighborhood is empty")
    return float(np.mean(fractions))


def homophily_over_map(d: Dataset, nm: NeighborhoodMap) -> float:
    """Same-label counterpart of noise_ratio (per node: 1 - noise fraction)."""
    return 1.0 - noise_ratio(d, nm)


def _require_all_labeled(d: Dataset) -> np.ndarray:
    labels = d.label_array()
    if np.any(labels < 0):
        raise DatasetError("metric requires every node to be labeled")
    return labels


def k_hop(d: Dataset, u: int, k: int) -> set[int]:
    """Nodes v != u within shortest-path distance k of u (k=0 -> empty)."""
    if not (0 <= u < d.node_count):
        raise DatasetError(f"invalid node id {u}")
    if k < 0:
        raise ValueError("k must be >= 0")
    seen = {u}
    frontier = [u]
    out: set[int] = set()
    for _ in range(k):
        nxt = []
        for w in frontier:
            for v in d.adj[w]:
                v = int(v)
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
                    out.add(v)
        if not nxt:
            break
        frontier = nxt
    return out


def k_hop_map(d: Dataset, k: int) -> NeighborhoodMap:
    neighbors = {u: np.array(sorted(k_hop(d, u, k)), dtype=np.int64)
                 for u in range(d.node_count)}
    return NeighborhoodMap(neighbors=neighbors, kind="k-hop")


def mean_1hop_features(d: Dataset) -> np.ndarray:
    """Row u = mean of u's neighbors' feature rows; isolated nodes keep
    their own row so the matrix stays total.
    """
    out = np.empty_like(d.features)
    for u in range(d.node_count):
        nbrs = d.adj[u]
        out[u] = d.features[nbrs].mean(axis=0) if len(nbrs) else d.features[u]
    return out


def stratified_split(d: Dataset, seed: int) -> Split:
    """Per-class 60/20/20 split of the labeled nodes, deterministic in seed.

    Within each class: floor(0.6 n) train, floor(0.2 n) val, remainder test.
    """
    by_class: dict[int, list[int]] = {}
    for u, c in d.labels.items():
        by_class.setdefault(c, []).append(u)
    for c, members in sorted(by_class.items()):
        if len(members) < 3:
            raise DatasetError(f"class {c} has {len(members)} labeled nodes; need >= 3")
    rng = np.random.default_rng(seed)
    train: list[int] = []
    val: list[int] = []
    test: list[int] = []
    for c in sorted(by_class):
        members = np.array(sorted(by_class[c]), dtype=np.int64)
        rng.shuffle(members)
        n = len(members)
        n_tr = int(np.floor(0.6 * n))
        n_va = int(np.floor(0.2 * n))
        train.extend(members[:n_tr].tolist())
        val.extend(members[n_tr:n_tr + n_va].tolist())
        test.extend(members[n_tr + n_va:].tolist())
    return Split(train=frozenset(train), val=frozenset(val), test=frozenset(test), seed=seed)
