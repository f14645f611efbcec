"""Graph-context signals: relation-aware post-smoothing and DeepWalk."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from .core import CandidateQuerySet, TripletStore, mrr
from .models import EmbeddingTable, score_candidates


@dataclass(frozen=True)
class SmoothConfig:
    alpha: float
    model_kind: str = "TransE"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


@dataclass(frozen=True)
class WalkConfig:
    num_walks_per_node: int = 10
    walk_length: int = 20
    window: int = 5
    neg_samples: int = 5
    dim: int = 64
    epochs: int = 1
    lr: float = 0.025
    seed: int = 0
    # pairs per vectorised update; summed row steps grow with a node's
    # repeats per batch, so keep this small relative to the node count
    batch_size: int = 256

    def __post_init__(self):
        for name in ("num_walks_per_node", "walk_length", "window", "neg_samples", "dim", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


def _rotate(x, theta):
    half = x.shape[-1] // 2
    re, im = x[..., :half], x[..., half:]
    c, s = np.cos(theta), np.sin(theta)
    return np.concatenate([re * c - im * s, re * s + im * c], axis=-1)


def relation_messages(table: EmbeddingTable, store: TripletStore):
    """Messages ``(receiver, vector)`` pulling each neighbour back through its relation."""
    kind = table.geometry.model_kind
    if kind not in ("TransE", "RotatE"):
        raise ValueError(f"post-smoothing supports TransE and RotatE, not {kind}")
    ent = table.entity_matrix.astype(np.float64)
    rel = table.relation_params.astype(np.float64)
    h, r, t = store.triples.T
    if kind == "TransE":
        to_head = ent[t] - rel[r]
        to_tail = ent[h] + rel[r]
    else:
        to_head = _rotate(ent[t], -rel[r])
        to_tail = _rotate(ent[h], rel[r])
    return np.concatenate([h, t]), np.concatenate([to_head, to_tail])


def post_smooth(table: EmbeddingTable, store: TripletStore, config: SmoothConfig) -> EmbeddingTable:
    """Blend every entity with the mean of its relation-inverted neighbours.

    ``u' = alpha * u + (1 - alpha) * mean(f(v, r))`` over all incident edges;
    entities without edges are copied. Relations are left untouched.
    """
    if config.model_kind != table.geometry.model_kind:
        raise ValueError(
            f"smoothing config is for {config.model_kind}, table is {table.geometry.model_kind}"
        )
    receivers, msgs = relation_messages(table, store)
    n = table.entity_count
    agg = sparse.csr_matrix(
        (np.ones(len(receivers)), (receivers, np.arange(len(receivers)))),
        shape=(n, len(receivers)),
    )
    total = np.asarray(agg @ msgs)
    degree = np.bincount(receivers, minlength=n)
    u = table.entity_matrix
    has = degree > 0
    out = u.copy()
    mean = total[has] / degree[has][:, None]
    a = config.alpha
    out[has] = (a * u[has].astype(np.float64) + (1.0 - a) * mean).astype(u.dtype)
    return EmbeddingTable(out, table.relation_params.copy(), table.geometry)


def tune_alpha(table: EmbeddingTable, store: TripletStore, queries: CandidateQuerySet,
               alphas: Sequence[float] = (0.7, 0.8, 0.9, 1.0)):
    """Pick the smoothing weight with the best validation MRR.

    Ties prefer the larger alpha, so the identity (alpha=1) wins unless
    smoothing strictly helps. Returns ``(best_alpha, {alpha: mrr})``.
    """
    results = {}
    for a in sorted(alphas, reverse=True):
        smoothed = post_smooth(table, store, SmoothConfig(a, table.geometry.model_kind))
        scores = score_candidates(smoothed, queries.heads, queries.relations,
                                  queries.flat_candidates, queries.offsets)
        results[a] = mrr(queries, _rows(scores, queries.offsets))
    best = max(results, key=lambda a: (results[a], a))
    return best, results


def _rows(values, offsets):
    return [values[a:b] for a, b in zip(offsets[:-1], offsets[1:])]


def undirected_adjacency(store: TripletStore, entity_count: Optional[int] = None) -> sparse.csr_matrix:
    n = store.vocab.entity_count if entity_count is None else entity_count
    h, t = store.heads, store.tails
    m = sparse.coo_matrix(
        (np.ones(2 * len(h), dtype=np.int8), (np.r_[h, t], np.r_[t, h])), shape=(n, n)
    ).tocsr()
    m.sum_duplicates()
    m.sort_indices()
    return m


def generate_walks(store: TripletStore, config: WalkConfig, rng_state=None) -> list:
    """Uniform random walks over the relation-free, undirected graph.

    Walks are emitted round by round, each round visiting every node once
    as a start. Walks from isolated nodes have length one.
    """
    rng = rng_state if isinstance(rng_state, np.random.Generator) else \
        np.random.default_rng(config.seed if rng_state is None else rng_state)
    adj = undirected_adjacency(store)
    indptr, nbrs = adj.indptr, adj.indices
    deg = np.diff(indptr)
    n = adj.shape[0]
    starts = np.tile(np.arange(n), config.num_walks_per_node)
    paths = np.empty((len(starts), config.walk_length), dtype=np.int64)
    paths[:, 0] = starts
    alive = deg[starts] > 0
    cur = starts.copy()
    for step in range(1, config.walk_length):
        u = rng.random(len(starts))
        d = deg[cur]
        pick = indptr[cur] + np.minimum((u * d).astype(np.int64), np.maximum(d - 1, 0))
        nxt = np.where(alive, nbrs[np.minimum(pick, len(nbrs) - 1)] if len(nbrs) else cur, cur)
        paths[:, step] = nxt
        cur = nxt
    return [paths[i].tolist() if alive[i] else [int(starts[i])] for i in range(len(starts))]


def window_pairs(path: Sequence[int], window: int) -> list:
    """(center, context) pairs for positions at distance 1..window."""
    pairs = []
    n = len(path)
    for i in range(n):
        for j in range(max(0, i - window), min(n, i + window + 1)):
            if j != i:
                pairs.append((path[i], path[j]))
    return pairs


def _pairs_array(walks, window):
    centers, contexts = [], []
    for off in range(1, window + 1):
        for walk in walks:
            w = np.asarray(walk, dtype=np.int64)
            if len(w) > off:
                centers.append(w[:-off])
                contexts.append(w[off:])
                centers.append(w[off:])
                contexts.append(w[:-off])
    if not centers:
        return np.zeros((0, 2), dtype=np.int64)
    return np.stack([np.concatenate(centers), np.concatenate(contexts)], axis=1)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _scatter_add(target, idx, grad):
    uniq, inv = np.unique(idx, return_inverse=True)
    onehot = sparse.csr_matrix(
        (np.ones(len(idx)), (inv, np.arange(len(idx)))), shape=(len(uniq), len(idx))
    )
    target[uniq] += onehot @ grad


def skipgram_train(walks, config: WalkConfig, entity_count: Optional[int] = None) -> np.ndarray:
    """Skip-gram with negative sampling; returns the input (node) vectors."""
    if not walks:
        raise ValueError("no walks to train on")
    max_id = max(max(w) for w in walks)
    n = max_id + 1 if entity_count is None else entity_count
    if max_id >= n:
        raise ValueError(f"node id {max_id} beyond entity_count {n}")
    rng = np.random.default_rng(config.seed)
    pairs = _pairs_array(walks, config.window)
    freq = np.bincount(np.concatenate([np.asarray(w) for w in walks]), minlength=n).astype(np.float64)
    noise = freq ** 0.75
    noise /= noise.sum()
    cdf = np.cumsum(noise)
    w_in = (rng.random((n, config.dim)) - 0.5) / config.dim
    w_out = np.zeros((n, config.dim))
    total = config.epochs * len(pairs)
    seen = 0
    for _ in range(config.epochs):
        order = rng.permutation(len(pairs))
        for s in range(0, len(order), config.batch_size):
            batch = pairs[order[s: s + config.batch_size]]
            lr = config.lr * max(1e-4, 1.0 - seen / total)
            seen += len(batch)
            c, o = batch[:, 0], batch[:, 1]
            neg = np.searchsorted(cdf, rng.random((len(batch), config.neg_samples)) * cdf[-1])
            neg = np.minimum(neg, n - 1)
            targets = np.concatenate([o[:, None], neg], axis=1)
            labels = np.zeros(targets.shape)
            labels[:, 0] = 1.0
            vc = w_in[c]
            vo = w_out[targets]
            logits = np.einsum("bd,bkd->bk", vc, vo)
            g = _sigmoid(logits) - labels
            grad_c = np.einsum("bk,bkd->bd", g, vo)
            grad_o = g[..., None] * vc[:, None, :]
            _scatter_add(w_in, c, -lr * grad_c)
            _scatter_add(w_out, targets.ravel(), -lr * grad_o.reshape(-1, config.dim))
    return w_in


def deepwalk_score(node_embeddings: np.ndarray, h: int, t: int) -> float:
    """Cosine similarity of two node vectors (0 if either is all zeros)."""
    a = np.asarray(node_embeddings[h], dtype=np.float64)
    b = np.asarray(node_embeddings[t], dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


def deepwalk_candidate_scores(node_embeddings, queries: CandidateQuerySet) -> np.ndarray:
    emb = np.asarray(node_embeddings, dtype=np.float64)
    norms = np.linalg.norm(emb, axis=1)
    unit = np.divide(emb, norms[:, None], out=np.zeros_like(emb), where=norms[:, None] > 0)
    heads = np.repeat(queries.heads, np.diff(queries.offsets))
    return np.einsum("nd,nd->n", unit[heads], unit[queries.flat_candidates])
