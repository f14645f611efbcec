"""Directional frequency indices and path-probability features.

Each direction counts one ordered pair of triple slots, e.g. ``HT`` counts
head -> tail and ``RT`` relation -> tail. A direction's transition
probability is its count divided by the source row's total. Multi-hop
features chain these transitions; the feature name spells the chain, so
``F_HT_HT_TH`` is ``P_HT . P_HT . P_TH`` evaluated at ``(h, t)``.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from .core import CandidateQuerySet, DataError, TripletStore, Vocab
from .ensemble import ScoreMatrix


class Direction(str, Enum):
    HT = "HT"
    HR = "HR"
    RH = "RH"
    RT = "RT"
    TH = "TH"
    TR = "TR"

    @property
    def source_kind(self):
        return "relation" if self.value[0] == "R" else "entity"

    @property
    def target_kind(self):
        return "relation" if self.value[1] == "R" else "entity"


# (source column, target column) in an (h, r, t) row
_SLOTS = {"H": 0, "R": 1, "T": 2}

HEAD_TAIL_KINDS = ("F_HT", "F_TH", "F_TH_HT", "F_HT_HT", "F_HT_TH", "F_TH_TH", "F_HT_HT_TH")
RELATION_TAIL_KINDS = ("F_RT", "F_RH", "F_RT_TR_RT", "F_RH_HR_RT", "F_RT_HR_RT")
FEATURE_KINDS = HEAD_TAIL_KINDS + RELATION_TAIL_KINDS + ("CAND_FREQ",)


def feature_chain(kind: str) -> tuple:
    """Directions traversed by a path feature, e.g. ``F_TH_HT -> (TH, HT)``."""
    if kind not in HEAD_TAIL_KINDS + RELATION_TAIL_KINDS:
        raise ValueError(f"not a path feature: {kind!r}")
    return tuple(Direction(part) for part in kind[2:].split("_"))


@dataclass(frozen=True)
class FeatureSource:
    include_training: bool = True
    include_candidates: bool = False

    def __post_init__(self):
        if not (self.include_training or self.include_candidates):
            raise ValueError("a feature source must include training triples or candidates")


@dataclass
class DirectionalIndex:
    """Sparse integer counts ``S_d`` with row sums for all six directions."""

    vocab: Vocab
    counts: dict
    row_sums: dict
    max_support: Optional[int] = None
    _probs: dict = field(default_factory=dict, init=False, repr=False)

    def size(self, kind):
        return self.vocab.entity_count if kind == "entity" else self.vocab.relation_count

    def count(self, d: Direction, e1: int, e2: int) -> int:
        return int(self.counts[Direction(d)][e1, e2])

    def transition(self, d: Direction) -> sparse.csr_matrix:
        """Row-normalised ``P_d`` (rows with zero total stay empty)."""
        d = Direction(d)
        if d not in self._probs:
            s = self.counts[d]
            inv = np.divide(1.0, self.row_sums[d], out=np.zeros(s.shape[0]),
                            where=self.row_sums[d] > 0)
            self._probs[d] = sparse.csr_matrix(sparse.diags(inv) @ s.astype(np.float64))
        return self._probs[d]


def _pair_counts(rows, d: Direction, vocab):
    src = rows[:, _SLOTS[d.value[0]]]
    dst = rows[:, _SLOTS[d.value[1]]]
    shape = (
        vocab.entity_count if d.source_kind == "entity" else vocab.relation_count,
        vocab.entity_count if d.target_kind == "entity" else vocab.relation_count,
    )
    m = sparse.coo_matrix((np.ones(len(rows), dtype=np.int64), (src, dst)), shape=shape).tocsr()
    m.sum_duplicates()
    m.sort_indices()
    return m


def candidate_triples(queries: CandidateQuerySet) -> np.ndarray:
    """Pseudo-triples ``(head, relation, c)`` for every listed candidate."""
    lengths = np.diff(queries.offsets)
    heads = np.repeat(queries.heads, lengths)
    rels = np.repeat(queries.relations, lengths)
    return np.stack([heads, rels, queries.flat_candidates], axis=1).astype(np.int64)


def build_index(store: Optional[TripletStore], queries: Optional[CandidateQuerySet] = None,
                source: FeatureSource = FeatureSource(), max_support: Optional[int] = None,
                extra_queries: Sequence[CandidateQuerySet] = ()) -> DirectionalIndex:
    """Count training triples and/or candidate pseudo-triples into all six directions.

    ``extra_queries`` adds the candidates of further query sets (for
    example validation candidates when building a test-time index).
    """
    parts = []
    vocab = None
    if source.include_training:
        if store is None:
            raise ValueError("include_training needs a triplet store")
        parts.append(store.triples)
        vocab = store.vocab
    if source.include_candidates:
        sets = ([queries] if queries is not None else []) + list(extra_queries)
        if not sets:
            raise ValueError("include_candidates needs a query set")
        for qs in sets:
            parts.append(candidate_triples(qs))
            vocab = vocab or qs.vocab
    if vocab is None:
        vocab = store.vocab if store is not None else queries.vocab
    rows = np.concatenate(parts) if parts else np.zeros((0, 3), dtype=np.int64)
    if len(rows):
        if rows.min() < 0 or rows[:, [0, 2]].max() >= vocab.entity_count \
                or rows[:, 1].max() >= vocab.relation_count:
            raise DataError("id out of vocabulary bounds while building the index")
    counts, sums = {}, {}
    for d in Direction:
        m = _pair_counts(rows, d, vocab)
        counts[d] = m
        sums[d] = np.asarray(m.sum(axis=1)).ravel().astype(np.int64)
    return DirectionalIndex(vocab, counts, sums, max_support)


def prob(index: DirectionalIndex, d: Direction, e1: int, e2: int) -> float:
    """Transition probability ``S_d(e1, e2) / sum_e S_d(e1, e)``; 0 for empty rows."""
    d = Direction(d)
    total = index.row_sums[d][e1]
    if total == 0:
        return 0.0
    return float(index.counts[d][e1, e2]) / float(total)


def _cap_rows(m: sparse.csr_matrix, cap: int) -> sparse.csr_matrix:
    m = m.tocsr()
    data, indices, indptr = [], [], [0]
    for i in range(m.shape[0]):
        a, b = m.indptr[i], m.indptr[i + 1]
        vals, cols = m.data[a:b], m.indices[a:b]
        if len(vals) > cap:
            keep = np.sort(np.argsort(-vals, kind="stable")[:cap])
            vals, cols = vals[keep], cols[keep]
        data.append(vals)
        indices.append(cols)
        indptr.append(indptr[-1] + len(vals))
    return sparse.csr_matrix(
        (np.concatenate(data), np.concatenate(indices), np.array(indptr)), shape=m.shape
    )


def _chain_rows(index: DirectionalIndex, kind: str, sources: np.ndarray) -> sparse.csr_matrix:
    """Rows ``sources`` of the chained transition product for ``kind``."""
    chain = feature_chain(kind)
    out = index.transition(chain[0])[sources]
    for d in chain[1:]:
        if index.max_support is not None:
            out = _cap_rows(out, index.max_support)
        out = out @ index.transition(d)
    return sparse.csr_matrix(out)


def feature_head_tail(index: DirectionalIndex, kind: str, h: int, t: int) -> float:
    if kind not in HEAD_TAIL_KINDS:
        raise ValueError(f"{kind} is not a head-to-tail feature")
    return float(_chain_rows(index, kind, np.array([h]))[0, t])


def feature_relation_tail(index: DirectionalIndex, kind: str, r: int, t: int) -> float:
    if kind not in RELATION_TAIL_KINDS:
        raise ValueError(f"{kind} is not a relation-to-tail feature")
    return float(_chain_rows(index, kind, np.array([r]))[0, t])


def candidate_frequency(queries: Optional[CandidateQuerySet]) -> dict:
    """Occurrences of each entity across all candidate lists."""
    if queries is None or len(queries) == 0:
        return {}
    ids, counts = np.unique(queries.flat_candidates, return_counts=True)
    return dict(zip(ids.tolist(), counts.tolist()))


def compute_feature_matrix(index: DirectionalIndex, queries: CandidateQuerySet,
                           kinds: Sequence[str]) -> dict:
    """Evaluate every feature kind at each (query, candidate); one ScoreMatrix per kind."""
    if not kinds:
        raise ValueError("no feature kinds requested")
    out = {}
    lengths = np.diff(queries.offsets)
    cands = queries.flat_candidates
    for kind in kinds:
        if kind == "CAND_FREQ":
            freq = Counter(candidate_frequency(queries))
            values = np.array([freq[c] for c in cands.tolist()], dtype=np.float64)
        elif kind in HEAD_TAIL_KINDS or kind in RELATION_TAIL_KINDS:
            src = queries.heads if kind in HEAD_TAIL_KINDS else queries.relations
            uniq, inv = np.unique(src, return_inverse=True)
            rows = _chain_rows(index, kind, uniq)
            values = np.asarray(rows[np.repeat(inv, lengths), cands]).ravel().astype(np.float64)
        else:
            raise ValueError(f"unknown feature kind {kind!r}")
        out[kind] = ScoreMatrix(kind, values, queries.offsets)
    return out
