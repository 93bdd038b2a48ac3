"""Neighborhood construction: MI-weighted communities and MI clusters.

Local neighborhoods are Louvain communities of the graph whose edges are
reweighted by estimated pairwise MI (clamped at zero; structure unchanged).
Non-local neighborhoods are k-means-style MI clusters of the self-embedding
space, capped per node by degree-centrality sampling. Both include the node
itself so singleton groups still aggregate something.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .estimator import EstimatorParams
from .graph import Dataset, NeighborhoodMap

__all__ = [
    "WeightedGraph",
    "Partition",
    "Clustering",
    "weight_edges",
    "weighted_modularity",
    "louvain",
    "local_neighborhood",
    "mi_cluster",
    "cluster_assign_step",
    "non_local_neighborhood",
    "write_groups",
]


@dataclass(frozen=True)
class WeightedGraph:
    """The dataset's edge set with nonnegative symmetric weights."""

    node_count: int
    edges: np.ndarray          # [E, 2], identical to the source dataset
    weights: np.ndarray        # [E] >= 0

    def __post_init__(self):
        if len(self.weights) != len(self.edges):
            raise ValueError("one weight per edge required")
        if len(self.weights) and self.weights.min() < 0:
            raise ValueError("negative edge weight")

    @property
    def total_weight(self) -> float:
        """|W|, the sum of all edge weights (each undirected edge once)."""
        return float(self.weights.sum())

    def strengths(self) -> np.ndarray:
        s = np.zeros(self.node_count)
        np.add.at(s, self.edges[:, 0], self.weights)
        np.add.at(s, self.edges[:, 1], self.weights)
        return s


@dataclass(frozen=True)
class Partition:
    """Community id per node; ids contiguous from 0."""

    membership: np.ndarray
    count: int

    def __post_init__(self):
        ids = np.unique(self.membership)
        if len(ids) != self.count or ids[0] != 0 or ids[-1] != self.count - 1:
            raise ValueError("community ids must be contiguous from 0")

    def communities(self) -> list[np.ndarray]:
        order = np.argsort(self.membership, kind="stable")
        bounds = np.searchsorted(self.membership[order], np.arange(self.count + 1))
        return [np.sort(order[bounds[c]:bounds[c + 1]]) for c in range(self.count)]


@dataclass(frozen=True)
class Clustering:
    """Cluster id per node, K clusters, plus the per-iteration objective trace."""

    assignment: np.ndarray
    cluster_count: int
    objective_trace: tuple[float, ...] = field(default=())
    reached_fixed_point: bool = False

    def __post_init__(self):
        if self.assignment.min() < 0 or self.assignment.max() >= self.cluster_count:
            raise ValueError("cluster id out of range")

    def clusters(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.assignment == k) for k in range(self.cluster_count)]


# ---------------------------------------------------------------------------
# edge weighting and modularity

def weight_edges(d: Dataset, mi) -> WeightedGraph:
    """Weight each existing edge by max(0, mi(u, v)); no edges added/removed."""
    w = np.array([max(0.0, float(mi(int(u), int(v)))) for u, v in d.edges])
    return WeightedGraph(node_count=d.node_count, edges=d.edges, weights=w)


def weighted_modularity(g: WeightedGraph, p: Partition) -> float:
    """Q = (1/2|W|) sum_{u,v} [W_uv - S(u)S(v)/2|W|] delta_uv over ordered
    node pairs (diagonal included)."""
    m2 = 2.0 * g.total_weight
    if m2 == 0.0:
        raise ValueError("modularity undefined for all-zero weights")
    member = p.membership
    intra = member[g.edges[:, 0]] == member[g.edges[:, 1]]
    internal = np.zeros(p.count)
    np.add.at(internal, member[g.edges[intra, 0]], 2.0 * g.weights[intra])
    sigma_tot = np.zeros(p.count)
    np.add.at(sigma_tot, member, g.strengths())
    return float(np.sum(internal / m2 - (sigma_tot / m2) ** 2))


# ---------------------------------------------------------------------------
# Louvain

def louvain(g: WeightedGraph, seed: int | None = None) -> Partition:
    """Two-phase greedy modularity maximization.

    Nodes are scanned in id order and a move is accepted only for a strictly
    positive modularity gain, so the result is deterministic; `seed` is
    accepted for interface stability but unused. If every clamped weight is
    zero the graph falls back to unit weights.
    """
    weights = g.weights
    if g.total_weight == 0.0:
        weights = np.ones_like(weights) if len(weights) else weights
    if len(g.edges) == 0:
        return Partition(membership=np.arange(g.node_count), count=g.node_count)

    # current coarse level: neighbor lists, self-loop diagonal, strengths
    n = g.node_count
    adj: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    for (u, v), w in zip(g.edges, weights):
        adj[int(u)].append((int(v), float(w)))
        adj[int(v)].append((int(u), float(w)))
    loops = np.zeros(n)
    strengths = np.array([sum(w for _, w in nbrs) for nbrs in adj]) + loops
    m2 = float(strengths.sum())
    membership = np.arange(g.node_count)

    level_graph = WeightedGraph(node_count=g.node_count, edges=g.edges, weights=weights)
    prev_q = weighted_modularity(level_graph, Partition(membership=membership.copy(), count=n))

    while True:
        node2com, moved = _one_level(adj, loops, strengths, m2)
        node2com, n_comms = _relabel(node2com)
        new_membership = node2com[membership]
        q = weighted_modularity(
            level_graph,
            Partition(membership=_relabel(new_membership)[0], count=len(np.unique(new_membership))))
        assert q >= prev_q - 1e-9, "modularity decreased across a Louvain pass"
        prev_q = q
        if not moved or n_comms == len(adj):
            break
        membership = new_membership
        adj, loops, strengths = _coarsen(adj, loops, node2com, n_comms)

    final, count = _relabel(membership)
    return Partition(membership=final, count=count)


def _one_level(adj, loops, strengths, m2):
    n = len(adj)
    node2com = np.arange(n)
    sigma_tot = strengths.copy()
    moved_any = False
    while True:
        moved_pass = False
        for u in range(n):
            cu = int(node2com[u])
            links: dict[int, float] = {}
            for v, w in adj[u]:
                c = int(node2com[v])
                links[c] = links.get(c, 0.0) + w
            sigma_tot[cu] -= strengths[u]
            stay_gain = links.get(cu, 0.0) - sigma_tot[cu] * strengths[u] / m2
            best_c, best_gain = cu, stay_gain
            for c in sorted(links):
                if c == cu:
                    continue
                gain = links[c] - sigma_tot[c] * strengths[u] / m2
                if gain > best_gain + 1e-12:
                    best_c, best_gain = c, gain
            sigma_tot[best_c] += strengths[u]
            if best_c != cu:
                # accepted move strictly increases Q by 2*(best_gain - stay_gain)/m2
                assert best_gain > stay_gain
                node2com[u] = best_c
                moved_pass = moved_any = True
        if not moved_pass:
            break
    return node2com, moved_any


def _relabel(assignment: np.ndarray) -> tuple[np.ndarray, int]:
    """Contiguous ids ordered by first appearance (node-id order)."""
    mapping: dict[int, int] = {}
    out = np.empty_like(assignment)
    for i, c in enumerate(assignment):
        c = int(c)
        if c not in mapping:
            mapping[c] = len(mapping)
        out[i] = mapping[c]
    return out, len(mapping)


def _coarsen(adj, loops, node2com, n_comms):
    new_loops = np.zeros(n_comms)
    cross: dict[tuple[int, int], float] = {}
    for u, nbrs in enumerate(adj):
        cu = int(node2com[u])
        new_loops[cu] += loops[u]
        for v, w in nbrs:
            if v < u:
                continue  # each undirected edge once
            cv = int(node2com[v])
            if cu == cv:
                new_loops[cu] += 2.0 * w  # ordered-pair units
            else:
                key = (min(cu, cv), max(cu, cv))
                cross[key] = cross.get(key, 0.0) + w
    new_adj: list[list[tuple[int, float]]] = [[] for _ in range(n_comms)]
    for (cu, cv), w in sorted(cross.items()):
        new_adj[cu].append((cv, w))
        new_adj[cv].append((cu, w))
    new_strengths = np.array([sum(w for _, w in nbrs) for nbrs in new_adj]) + new_loops
    return new_adj, new_loops, new_strengths


def local_neighborhood(p: Partition) -> NeighborhoodMap:
    """u's list = all members of u's community, self included."""
    neighbors: dict[int, np.ndarray] = {}
    groups = []
    for members in p.communities():
        groups.append((members, members, False))
        for u in members:
            neighbors[int(u)] = members
    return NeighborhoodMap(neighbors=neighbors, kind="local", groups=groups)


# ---------------------------------------------------------------------------
# MI clustering (k-means style on the symmetrized bilinear logit)

def _mean_mi_scores(Z: np.ndarray, params: EstimatorParams, assignment: np.ndarray,
                    K: int) -> np.ndarray:
    """scores[u, k] = mean over v in cluster k of logit(u, v).

    The logit is linear in Z_v, so the mean over members equals the logit
    against the cluster-mean embedding; this is exact at every scale.
    """
    n, dim = Z.shape
    sums = np.zeros((K, dim))
    np.add.at(sums, assignment, Z)
    counts = np.bincount(assignment, minlength=K).astype(float)
    if np.any(counts == 0):
        raise ValueError("empty cluster in score computation")
    centroids = sums / counts[:, None]
    return Z @ params.kernel() @ centroids.T + params.bias()


def cluster_assign_step(Z: np.ndarray, params: EstimatorParams,
                        assignment: np.ndarray, K: int) -> np.ndarray:
    """One synchronous update: argmax of mean MI over clusters per node,
    ties kept with the incumbent cluster, otherwise lowest cluster id."""
    scores = _mean_mi_scores(Z, params, assignment, K)
    new = np.argmax(scores, axis=1).astype(np.int64)
    rows = np.arange(len(new))
    keep = scores[rows, assignment] >= scores[rows, new]
    new[keep] = assignment[keep]
    return new


def _reseed_empty(assignment: np.ndarray, Z: np.ndarray, params: EstimatorParams,
                  K: int) -> np.ndarray:
    """Move the node with the lowest mean MI to its current cluster into each
    empty cluster (ascending id); never empties another cluster."""
    assignment = assignment.copy()
    while True:
        counts = np.bincount(assignment, minlength=K)
        empty = np.flatnonzero(counts == 0)
        if len(empty) == 0:
            return assignment
        k = int(empty[0])
        scores = _masked_self_scores(Z, params, assignment, K)
        movable = counts[assignment] >= 2
        cand = np.flatnonzero(movable)
        u = int(cand[np.argmin(scores[cand])])
        assignment[u] = k


def _masked_self_scores(Z, params, assignment, K):
    n, dim = Z.shape
    sums = np.zeros((K, dim))
    np.add.at(sums, assignment, Z)
    counts = np.bincount(assignment, minlength=K).astype(float)
    safe = np.maximum(counts, 1.0)
    centroids = sums / safe[:, None]
    own = centroids[assignment]
    return np.einsum("ij,ij->i", Z @ params.kernel(), own) + params.bias()


def mi_cluster(Z: np.ndarray, params: EstimatorParams, K: int, labeled,
               labels: np.ndarray, max_iter: int = 20,
               seed: int | np.random.Generator = 0) -> Clustering:
    """Label-seeded synchronous MI clustering.

    Labeled nodes start in their class's cluster (class id mod K), unlabeled
    nodes start uniformly at random. Iteration stops at a fixed point, at
    max_iter, or when the objective sum_u meanMI(u, cluster(u)) would drop
    (the offending step is reverted), which makes the recorded objective
    trace non-decreasing by construction.
    """
    n = Z.shape[0]
    if K < 2:
        raise ValueError("need at least 2 clusters")
    if K > n:
        raise ValueError(f"K={K} exceeds node count {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    assignment = np.empty(n, dtype=np.int64)
    labeled = np.asarray(sorted(labeled), dtype=np.int64)
    is_labeled = np.zeros(n, dtype=bool)
    is_labeled[labeled] = True
    assignment[labeled] = labels[labeled] % K
    unl = np.flatnonzero(~is_labeled)
    assignment[unl] = rng.integers(0, K, size=len(unl))
    assignment = _reseed_empty(assignment, Z, params, K)

    def objective(a: np.ndarray) -> float:
        scores = _mean_mi_scores(Z, params, a, K)
        return float(scores[np.arange(n), a].sum())

    trace = [objective(assignment)]
    fixed_point = False
    for _ in range(max_iter):
        proposed = cluster_assign_step(Z, params, assignment, K)
        if np.array_equal(proposed, assignment):
            fixed_point = True
            break
        proposed = _reseed_empty(proposed, Z, params, K)
        obj = objective(proposed)
        if obj < trace[-1] - 1e-9:
            break  # revert: keep previous assignment
        assignment = proposed
        trace.append(obj)
    return Clustering(assignment=assignment, cluster_count=K,
                      objective_trace=tuple(trace), reached_fixed_point=fixed_point)


# ---------------------------------------------------------------------------
# non-local neighborhoods with degree-centrality sampling

def non_local_neighborhood(c: Clustering, d: Dataset, limit: int) -> NeighborhoodMap:
    """u's list = members of u's cluster; clusters above `limit` are capped:
    the top-`limit` nodes by (degree desc, id asc) keep that set, every other
    member gets the top-(limit-1) set plus itself, so |N(u)| <= limit."""
    if limit < 2:
        raise ValueError("limit must be >= 2")
    deg = d.degrees()
    neighbors: dict[int, np.ndarray] = {}
    groups = []
    for members in c.clusters():
        if len(members) == 0:
            continue
        if len(members) <= limit:
            groups.append((members, members, False))
            for u in members:
                neighbors[int(u)] = members
            continue
        order = members[np.lexsort((members, -deg[members]))]
        core_full = np.sort(order[:limit])
        core_minus = np.sort(order[:limit - 1])
        rest = np.sort(order[limit:])
        groups.append((core_full, core_full, False))
        groups.append((rest, core_minus, True))
        for u in core_full:
            neighbors[int(u)] = core_full
        for u in rest:
            neighbors[int(u)] = np.sort(np.append(core_minus, u))
    return NeighborhoodMap(neighbors=neighbors, kind="non-local", groups=groups)


def write_groups(path, assignment: np.ndarray) -> None:
    """Dump a partition/clustering as one "node_id<TAB>group_id" line per node."""
    with open(path, "w") as fh:
        for u, g in enumerate(assignment):
            fh.write(f"{u}\t{int(g)}\n")
