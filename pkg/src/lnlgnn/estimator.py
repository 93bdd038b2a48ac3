"""Self-embedding MLP, bilinear MI estimator, and its self-supervised training.

The estimator scores a node pair by a bilinear form on their self-embeddings,
E(z_u, z_v) = sigmoid(l(u, v)) with the symmetrized logit
l(u, v) = 0.5 * (z_u^T W_e z_v + z_v^T W_e z_u) + b. The logit itself serves
as the pairwise MI value: for a single pair the softplus construction
sp(x) - sp(-x) collapses exactly to x. Training is noise-contrastive
(same-class pairs positive, different-class negative), with a multi-stage
pseudo-labeling loop that grows the labeled pool from confident unlabeled
nodes between training stages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graph import Split
from .numerics import (
    ParameterStore,
    TrainConfig,
    dropout_mask,
    glorot,
    selu,
    selu_backward,
    sigmoid,
    softplus,
    sgd_momentum_step,
)

__all__ = [
    "SelfEmbeddings",
    "EstimatorParams",
    "PairBatch",
    "init_estimator",
    "self_embed",
    "mi_score",
    "pairwise_mi",
    "mi_logit_to_vector",
    "estimation_loss",
    "sample_pairs",
    "class_centroids",
    "pseudo_label",
    "m3s_train",
    "save_estimator",
    "load_estimator",
]

_SPARSE_DENSITY_CUTOFF = 0.25


@dataclass
class SelfEmbeddings:
    """Per-node latent vectors from the self-embedding MLP (no aggregation)."""

    Z: np.ndarray              # [node_count, se_dim]
    source: str                # "raw" | "mean1hop"

    def __post_init__(self):
        if not np.all(np.isfinite(self.Z)):
            raise ValueError("non-finite self-embeddings")


@dataclass
class EstimatorParams:
    """MLP weights producing Z plus the bilinear kernel W_e and bias b."""

    store: ParameterStore
    in_dim: int
    hidden_dim: int
    se_dim: int

    def kernel(self) -> np.ndarray:
        """Symmetric part of W_e; the logit only ever sees this."""
        W = self.store.value("est.W_e")
        return 0.5 * (W + W.T)

    def bias(self) -> float:
        return float(self.store.value("est.b")[0])


@dataclass
class PairBatch:
    """Anchor/partner node pairs with positive/negative polarity."""

    anchors: np.ndarray
    partners: np.ndarray
    positive: np.ndarray       # bool per pair

    def __post_init__(self):
        if not (len(self.anchors) == len(self.partners) == len(self.positive)):
            raise ValueError("pair batch arrays must have equal length")

    def __len__(self) -> int:
        return len(self.anchors)


def init_estimator(in_dim: int, cfg: TrainConfig, rng: np.random.Generator) -> EstimatorParams:
    store = ParameterStore()
    store.add("mlp.W1", glorot(rng, cfg.hidden_dim, in_dim))
    store.add("mlp.b1", np.zeros(cfg.hidden_dim))
    store.add("mlp.W2", glorot(rng, cfg.se_dim, cfg.hidden_dim))
    store.add("mlp.b2", np.zeros(cfg.se_dim))
    store.add("est.W_e", glorot(rng, cfg.se_dim, cfg.se_dim))
    store.add("est.b", np.zeros(1))
    return EstimatorParams(store=store, in_dim=in_dim, hidden_dim=cfg.hidden_dim,
                           se_dim=cfg.se_dim)


# ---------------------------------------------------------------------------
# self-embedding MLP

def _mlp_forward(X, params: EstimatorParams, *, rows=None, training=False,
                 dropout=0.0, rng=None):
    """Z = SELU(W2 . dropout(SELU(W1 x + b1)) + b2), rows optional subset."""
    s = params.store
    Xr = X[rows] if rows is not None else X
    A1 = np.asarray(Xr @ s.value("mlp.W1").T) + s.value("mlp.b1")
    H1 = selu(A1)
    if training and dropout > 0.0:
        mask = dropout_mask(H1.shape, dropout, rng)
        D1 = H1 * mask
    else:
        mask = None
        D1 = H1
    A2 = D1 @ s.value("mlp.W2").T + s.value("mlp.b2")
    Z = selu(A2)
    cache = (Xr, A1, mask, D1, A2)
    return Z, cache


def _mlp_backward(cache, dZ: np.ndarray, params: EstimatorParams) -> None:
    Xr, A1, mask, D1, A2 = cache
    s = params.store
    dA2 = selu_backward(A2, dZ)
    s.accumulate("mlp.W2", dA2.T @ D1)
    s.accumulate("mlp.b2", dA2.sum(axis=0))
    dD1 = dA2 @ s.value("mlp.W2")
    dH1 = dD1 * mask if mask is not None else dD1
    dA1 = selu_backward(A1, dH1)
    if sp.issparse(Xr):
        s.accumulate("mlp.W1", np.asarray(Xr.T @ dA1).T)
    else:
        s.accumulate("mlp.W1", dA1.T @ Xr)
    s.accumulate("mlp.b1", dA1.sum(axis=0))


def self_embed(features: np.ndarray, params: EstimatorParams, *, training=False,
               dropout=0.0, rng=None, source: str = "raw") -> SelfEmbeddings:
    if features.shape[1] != params.in_dim:
        raise ValueError(f"feature dim {features.shape[1]} != estimator input {params.in_dim}")
    Z, _ = _mlp_forward(features, params, training=training, dropout=dropout, rng=rng)
    return SelfEmbeddings(Z=Z, source=source)


# ---------------------------------------------------------------------------
# pairwise scoring

def _pair_logits(A: np.ndarray, B: np.ndarray, params: EstimatorParams) -> np.ndarray:
    S = params.kernel()
    return np.einsum("ij,ij->i", A @ S, B) + params.bias()


def pairwise_mi(u: int, v: int, Z: np.ndarray, params: EstimatorParams) -> float:
    """Symmetrized pre-activation logit; equals the MI value exactly because
    sp(x) - sp(-x) = x for a single pair."""
    return float(_pair_logits(Z[None, u], Z[None, v], params)[0])


def mi_score(u: int, v: int, Z: np.ndarray, params: EstimatorParams) -> float:
    """Sigmoid of the symmetrized logit, in (0, 1)."""
    return float(sigmoid(pairwise_mi(u, v, Z, params)))


def mi_logit_to_vector(z: np.ndarray, vec: np.ndarray, params: EstimatorParams) -> float:
    """Logit between an embedding row and an arbitrary vector (e.g. a centroid)."""
    return float(z @ params.kernel() @ vec + params.bias())


def edge_mi_fn(Z: np.ndarray, params: EstimatorParams):
    """Closure (u, v) -> logit with the kernel product precomputed once."""
    ZS = Z @ params.kernel()
    b = params.bias()

    def mi(u: int, v: int) -> float:
        return float(ZS[u] @ Z[v] + b)

    return mi


# ---------------------------------------------------------------------------
# estimation loss (noise-contrastive binary cross-entropy)

def estimation_loss(batch: PairBatch, Z: np.ndarray, params: EstimatorParams,
                    *, accumulate=True) -> tuple[float, np.ndarray]:
    """Mean of -ln E over positives and -ln(1-E) over negatives.

    Returns (loss, dL/dZ); gradients for est.W_e and est.b are accumulated
    into the parameter store when `accumulate` is set.
    """
    if len(batch) == 0:
        raise ValueError("empty pair batch")
    A = Z[batch.anchors]
    B = Z[batch.partners]
    S = params.kernel()
    AS = A @ S
    logits = np.einsum("ij,ij->i", AS, B) + params.bias()
    pos = batch.positive
    losses = np.where(pos, softplus(-logits), softplus(logits))
    sig = sigmoid(logits)
    g = np.where(pos, sig - 1.0, sig) / len(batch)
    loss = float(losses.mean())

    if accumulate:
        M = (A * g[:, None]).T @ B
        params.store.accumulate("est.W_e", 0.5 * (M + M.T))
        params.store.accumulate("est.b", np.array([g.sum()]))
    dZ = np.zeros_like(Z)
    np.add.at(dZ, batch.anchors, g[:, None] * (B @ S))
    np.add.at(dZ, batch.partners, g[:, None] * AS)
    return loss, dZ


# ---------------------------------------------------------------------------
# pair sampling

def _sample_rows(pool_size: int, n_rows: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """n_rows independent uniform draws of k indices from [0, pool_size).

    Without replacement when the pool suffices, with replacement otherwise.
    """
    if pool_size < k:
        return rng.integers(0, pool_size, size=(n_rows, k))
    if pool_size <= 4 * k:
        keys = rng.random((n_rows, pool_size))
        return np.argpartition(keys, k - 1, axis=1)[:, :k]
    # rejection sampling: redraw the few rows containing duplicates
    draw = rng.integers(0, pool_size, size=(n_rows, k))
    while True:
        srt = np.sort(draw, axis=1)
        bad = np.any(srt[:, 1:] == srt[:, :-1], axis=1)
        if not bad.any():
            return draw
        draw[bad] = rng.integers(0, pool_size, size=(int(bad.sum()), k))


def sample_pairs(labeled, labels: np.ndarray, per_anchor: int,
                 rng: np.random.Generator | int) -> PairBatch:
    """Per anchor: per_anchor same-label partners and per_anchor different-label
    partners, drawn uniformly (without replacement when the pool suffices).
    Anchors whose class has no other member contribute negatives only.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    labeled = np.array(sorted(labeled), dtype=np.int64)
    lab = labels[labeled]
    classes = np.unique(lab)
    if len(classes) < 2:
        raise ValueError("need at least two classes among labeled nodes")

    anchors_out, partners_out, pol_out = [], [], []
    for c in classes:
        members = labeled[lab == c]
        others = labeled[lab != c]
        m = len(members)
        # positives: sample from members minus the anchor itself
        if m >= 2:
            idx = _sample_rows(m - 1, m, per_anchor, rng)
            # shift indices >= own position to skip the anchor
            own = np.arange(m)[:, None]
            idx = idx + (idx >= own)
            anchors_out.append(np.repeat(members, per_anchor))
            partners_out.append(members[idx].reshape(-1))
            pol_out.append(np.ones(m * per_anchor, dtype=bool))
        # negatives
        idx = _sample_rows(len(others), m, per_anchor, rng)
        anchors_out.append(np.repeat(members, per_anchor))
        partners_out.append(others[idx].reshape(-1))
        pol_out.append(np.zeros(m * per_anchor, dtype=bool))

    return PairBatch(anchors=np.concatenate(anchors_out),
                     partners=np.concatenate(partners_out),
                     positive=np.concatenate(pol_out))


# ---------------------------------------------------------------------------
# centroids and pseudo-labels

def class_centroids(Z: np.ndarray, labeled, labels: np.ndarray,
                    class_count: int) -> np.ndarray:
    labeled = np.asarray(sorted(labeled), dtype=np.int64)
    out = np.empty((class_count, Z.shape[1]))
    for c in range(class_count):
        members = labeled[labels[labeled] == c]
        if len(members) == 0:
            raise ValueError(f"class {c} has no labeled members")
        out[c] = Z[members].mean(axis=0)
    return out


def pseudo_label(u: int, centroids: np.ndarray, Z: np.ndarray,
                 params: EstimatorParams) -> tuple[int, float]:
    """(argmax-MI class, that MI); ties break toward the lowest class id."""
    scores = centroids @ params.kernel() @ Z[u] + params.bias()
    c = int(np.argmax(scores))
    return c, float(scores[c])


def _pseudo_label_all(nodes: np.ndarray, centroids: np.ndarray, Z: np.ndarray,
                      params: EstimatorParams) -> tuple[np.ndarray, np.ndarray]:
    scores = Z[nodes] @ params.kernel() @ centroids.T + params.bias()
    cls = np.argmax(scores, axis=1)
    conf = scores[np.arange(len(nodes)), cls]
    return cls.astype(np.int64), conf


# ---------------------------------------------------------------------------
# multi-stage self-supervised training

def _train_epochs(X, pool: np.ndarray, pool_labels: np.ndarray, params: EstimatorParams,
                  cfg: TrainConfig, rng: np.random.Generator, epochs: int) -> float:
    """Contrastive epochs over the current pool; returns the last epoch's loss."""
    last = math.nan
    for _ in range(epochs):
        batch = sample_pairs(pool, pool_labels, cfg.per_anchor, rng)
        rows = np.unique(np.concatenate([batch.anchors, batch.partners]))
        remap = np.empty(int(rows.max()) + 1, dtype=np.int64)
        remap[rows] = np.arange(len(rows))
        local = PairBatch(anchors=remap[batch.anchors], partners=remap[batch.partners],
                          positive=batch.positive)
        Zr, cache = _mlp_forward(X, params, rows=rows, training=True,
                                 dropout=cfg.dropout, rng=rng)
        last, dZr = estimation_loss(local, Zr, params)
        _mlp_backward(cache, dZr, params)
        sgd_momentum_step(params.store, cfg)
    return last


def m3s_train(features: np.ndarray, labels: np.ndarray, split: Split,
              cfg: TrainConfig, *, source: str = "raw",
              rng: np.random.Generator | None = None
              ) -> tuple[EstimatorParams, SelfEmbeddings]:
    """Warm-up on true train labels, then stages of pseudo-labeling the most
    confident unlabeled nodes (top t by MI to their best class centroid) and
    retraining. Pseudo-labels never overwrite true labels and die with this
    function; once added, a node's pseudo-label is frozen.
    """
    n, d = features.shape
    rng = rng or np.random.default_rng(cfg.seed)
    params = init_estimator(d, cfg, rng)
    class_count = int(labels[labels >= 0].max()) + 1
    t = cfg.m3s_top_t if cfg.m3s_top_t is not None else math.ceil(0.05 * n)

    X = features
    if d and not sp.issparse(X):
        density = np.count_nonzero(features) / features.size
        if density < _SPARSE_DENSITY_CUTOFF:
            X = sp.csr_matrix(features)

    pool = np.array(sorted(split.train), dtype=np.int64)
    pool_labels = labels.copy()
    in_pool = np.zeros(n, dtype=bool)
    in_pool[pool] = True

    _train_epochs(X, pool, pool_labels, params, cfg, rng, cfg.m3s_warmup_epochs)

    for _stage in range(cfg.m3s_stages):
        unlabeled = np.flatnonzero(~in_pool)
        if len(unlabeled):
            Z_full, _ = _mlp_forward(X, params)
            centroids = class_centroids(Z_full, pool, pool_labels, class_count)
            cls, conf = _pseudo_label_all(unlabeled, centroids, Z_full, params)
            order = np.lexsort((unlabeled, -conf))
            take = order[:min(t, len(unlabeled))]
            chosen = unlabeled[take]
            pool_labels[chosen] = cls[take]
            in_pool[chosen] = True
            pool = np.flatnonzero(in_pool)
        _train_epochs(X, pool, pool_labels, params, cfg, rng, cfg.m3s_stage_epochs)

    Z_final, _ = _mlp_forward(X, params)
    return params, SelfEmbeddings(Z=Z_final, source=source)


# ---------------------------------------------------------------------------
# persistence: flat text file, header "se_dim node_count", then named blocks

def save_estimator(path, params: EstimatorParams, embeddings: SelfEmbeddings) -> None:
    """Block layout: "name rows cols" on one line, then `rows` lines of
    `cols` %.17g numbers. Blocks: the five parameter tensors plus Z."""
    with open(path, "w") as fh:
        fh.write(f"{params.se_dim} {embeddings.Z.shape[0]}\n")
        fh.write(f"source {embeddings.source}\n")
        blocks = [(name, np.atleast_2d(params.store.value(name)))
                  for name in params.store.names()]
        blocks.append(("Z", embeddings.Z))
        for name, arr in blocks:
            fh.write(f"{name} {arr.shape[0]} {arr.shape[1]}\n")
            for row in arr:
                fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def load_estimator(path) -> tuple[EstimatorParams, SelfEmbeddings]:
    with open(path) as fh:
        se_dim, _node_count = (int(x) for x in fh.readline().split())
        _, source = fh.readline().split()
        blocks: dict[str, np.ndarray] = {}
        line = fh.readline()
        while line:
            name, rows, cols = line.split()
            rows, cols = int(rows), int(cols)
            data = np.array([[float(x) for x in fh.readline().split()]
                             for _ in range(rows)])
            if data.shape != (rows, cols):
                raise ValueError(f"corrupt block {name!r}")
            blocks[name] = data
            line = fh.readline()
    store = ParameterStore()
    for name in ("mlp.W1", "mlp.b1", "mlp.W2", "mlp.b2", "est.W_e", "est.b"):
        arr = blocks[name]
        store.add(name, arr[0] if name.endswith((".b1", ".b2", ".b")) else arr)
    params = EstimatorParams(store=store, in_dim=store.value("mlp.W1").shape[1],
                             hidden_dim=store.value("mlp.W1").shape[0], se_dim=se_dim)
    return params, SelfEmbeddings(Z=blocks["Z"], source=source)
