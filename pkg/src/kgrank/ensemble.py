"""Score normalisation, weighted combination and greedy weight search."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import CandidateQuerySet, DataError, ranks_flat

DEFAULT_GRID = tuple(round(0.05 * i, 2) for i in range(1, 21))
IMPROVEMENT_EPS = 1e-9
SENTINEL = np.finfo(np.float64).min


@dataclass(frozen=True)
class ScoreMatrix:
    """Per-query candidate scores stored flat with CSR-style offsets."""

    source_name: str
    values: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        offsets = np.asarray(self.offsets, dtype=np.int64)
        if offsets.ndim != 1 or len(offsets) < 1 or offsets[0] != 0 or offsets[-1] != len(values):
            raise DataError(f"{self.source_name}: offsets do not cover the values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "offsets", offsets)

    @classmethod
    def from_rows(cls, name, rows):
        rows = [np.asarray(r, dtype=np.float64).ravel() for r in rows]
        offsets = np.zeros(len(rows) + 1, dtype=np.int64)
        np.cumsum([len(r) for r in rows], out=offsets[1:])
        values = np.concatenate(rows) if rows else np.zeros(0)
        return cls(name, values, offsets)

    @classmethod
    def for_queries(cls, name, queries: CandidateQuerySet, values):
        return cls(name, np.asarray(values, dtype=np.float64), queries.offsets)

    @property
    def query_count(self) -> int:
        return len(self.offsets) - 1

    def rows(self):
        return [self.values[a:b] for a, b in zip(self.offsets[:-1], self.offsets[1:])]

    def row(self, i):
        return self.values[self.offsets[i]: self.offsets[i + 1]]

    def uniform_width(self) -> Optional[int]:
        lengths = np.diff(self.offsets)
        if len(lengths) and (lengths == lengths[0]).all():
            return int(lengths[0])
        return None

    def renamed(self, name) -> "ScoreMatrix":
        return ScoreMatrix(name, self.values, self.offsets)

    def aligned_with(self, other) -> bool:
        return np.array_equal(self.offsets, other.offsets)


@dataclass
class EnsembleWeights:
    entries: dict
    order: list
    mrr: Optional[float] = None

    def __post_init__(self):
        if not any(w > 0 for w in self.entries.values()):
            raise ValueError("ensemble weights need at least one positive entry")
        if any(w < 0 for w in self.entries.values()):
            raise ValueError("ensemble weights must be non-negative")

    def weight(self, name) -> float:
        return self.entries.get(name, 0.0)


def _row_ids(offsets):
    return np.repeat(np.arange(len(offsets) - 1), np.diff(offsets))


def normalize_scores(m: ScoreMatrix) -> ScoreMatrix:
    """Per-row min-max scaling to [0, 1]; constant rows become zeros."""
    if not np.isfinite(m.values).all():
        raise ValueError(f"{m.source_name}: non-finite score")
    if m.query_count == 0:
        return m
    starts = m.offsets[:-1]
    lo = np.minimum.reduceat(m.values, starts)
    hi = np.maximum.reduceat(m.values, starts)
    span = hi - lo
    rid = _row_ids(m.offsets)
    span_e = span[rid]
    out = np.divide(m.values - lo[rid], span_e, out=np.zeros_like(m.values), where=span_e > 0)
    return ScoreMatrix(m.source_name, out, m.offsets)


def combine(sources: Sequence[ScoreMatrix], weights: EnsembleWeights) -> ScoreMatrix:
    """Elementwise ``sum_k w_k * m_k`` over sources named in ``weights``."""
    by_name = {s.source_name: s for s in sources}
    unknown = [n for n in weights.entries if n not in by_name]
    if unknown:
        raise DataError(f"weights mention unknown sources: {', '.join(unknown)}")
    first = sources[0]
    for src in sources:
        if not src.aligned_with(first):
            raise DataError(f"{src.source_name}: shape differs from {first.source_name}")
    # selection order first, so sums match the ones grid_search evaluated
    names = list(weights.order) + [n for n in weights.entries if n not in weights.order]
    out = np.zeros_like(first.values)
    for name in names:
        w = weights.weight(name)
        if w != 0.0:
            out += w * by_name[name].values
    return ScoreMatrix("ensemble", out, first.offsets)


def low_frequency_filter(m: ScoreMatrix, queries: CandidateQuerySet, freq: dict,
                         threshold: int) -> ScoreMatrix:
    """Demote candidates seen fewer than ``threshold`` times to a sentinel score."""
    if not np.array_equal(m.offsets, queries.offsets):
        raise DataError("score matrix does not match the query set")
    if threshold <= 0:
        return m
    mask = frequency_mask(queries, freq, threshold)
    return ScoreMatrix(m.source_name, np.where(mask, m.values, SENTINEL), m.offsets)


def frequency_mask(queries: CandidateQuerySet, freq: dict, threshold: int) -> np.ndarray:
    """True where a candidate's frequency is at least ``threshold``."""
    cands = queries.flat_candidates
    if len(cands) == 0:
        return np.zeros(0, dtype=bool)
    lookup = np.zeros(int(cands.max()) + 1, dtype=np.int64)
    for ent, count in freq.items():
        if ent < len(lookup):
            lookup[ent] = count
    return lookup[cands] >= threshold


def _mrr_values(values, offsets, true_idx, keep):
    if keep is not None:
        values = np.where(keep, values, SENTINEL)
    return float(np.mean(1.0 / ranks_flat(values, offsets, true_idx)))


def grid_search(sources: Sequence[ScoreMatrix], queries: CandidateQuerySet,
                grid: Sequence[float] = DEFAULT_GRID, max_rounds: Optional[int] = None,
                keep_mask: Optional[np.ndarray] = None) -> EnsembleWeights:
    """Greedy forward selection of source weights by validation MRR.

    Round 0 takes the best single source at weight 1. Every later round
    tries each unselected source at each grid weight on top of the frozen
    ensemble and keeps the best strict improvement. Ties go to the higher
    MRR, then the earlier source, then the smaller weight. ``max_rounds``
    caps the number of selected sources; ``keep_mask`` (from
    :func:`frequency_mask`) demotes filtered candidates before ranking.
    """
    if not sources:
        raise ValueError("grid_search needs at least one source")
    if not queries.labelled:
        raise DataError("grid_search needs labelled queries")
    if any(w <= 0 for w in grid):
        raise ValueError("grid weights must be positive")
    grid = sorted(grid)
    true_idx = queries.true_indices
    offsets = queries.offsets
    for s in sources:
        if not np.array_equal(s.offsets, offsets):
            raise DataError(f"{s.source_name}: rows do not match the query set")
    limit = len(sources) if max_rounds is None else min(max_rounds, len(sources))

    best_i, best = None, -np.inf
    for i, s in enumerate(sources):
        score = _mrr_values(s.values, offsets, true_idx, keep_mask)
        if score > best:
            best_i, best = i, score
    entries = {sources[best_i].source_name: 1.0}
    order = [sources[best_i].source_name]
    current = sources[best_i].values.copy()
    selected = {best_i}

    while len(selected) < limit:
        round_best, pick = best, None
        for i, s in enumerate(sources):
            if i in selected:
                continue
            for w in grid:
                score = _mrr_values(current + w * s.values, offsets, true_idx, keep_mask)
                if score > round_best:
                    round_best, pick = score, (i, w)
        if pick is None or round_best - best <= IMPROVEMENT_EPS:
            break
        i, w = pick
        selected.add(i)
        name = sources[i].source_name
        entries[name] = w
        order.append(name)
        current = current + w * sources[i].values
        best = round_best
    return EnsembleWeights(entries, order, best)


def top_k(m: ScoreMatrix, k: int = 10):
    """Per query, candidate positions of the ``k`` best scores (ties by position)."""
    out = []
    for row in m.rows():
        order = np.argsort(-row, kind="stable")
        out.append(order[:k].tolist())
    return out
