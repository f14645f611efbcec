"""Triplet storage, candidate queries and ranking metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass(frozen=True)
class Vocab:
    entity_count: int
    relation_count: int
    entity_labels: Optional[tuple] = None
    relation_labels: Optional[tuple] = None

    def __post_init__(self):
        if self.entity_count < 0 or self.relation_count < 0:
            raise DataError("vocabulary counts must be non-negative")
        if self.entity_labels is not None and len(self.entity_labels) != self.entity_count:
            raise DataError("entity_labels length does not match entity_count")
        if self.relation_labels is not None and len(self.relation_labels) != self.relation_count:
            raise DataError("relation_labels length does not match relation_count")


@dataclass(frozen=True)
class TripletStore:
    """Integer-encoded (head, relation, tail) facts.

    ``triples`` is an ``(n, 3)`` int64 array; duplicates are kept since
    they add multiplicity to the frequency counts.
    """

    triples: np.ndarray
    vocab: Vocab

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.triples, dtype=np.int64).reshape(-1, 3))
        arr.setflags(write=False)
        object.__setattr__(self, "triples", arr)
        if len(arr):
            if arr.min() < 0:
                raise DataError("negative id in triples")
            if arr[:, [0, 2]].max() >= self.vocab.entity_count:
                raise DataError("entity id out of vocabulary bounds")
            if arr[:, 1].max() >= self.vocab.relation_count:
                raise DataError("relation id out of vocabulary bounds")

    def __len__(self):
        return len(self.triples)

    @property
    def heads(self):
        return self.triples[:, 0]

    @property
    def relations(self):
        return self.triples[:, 1]

    @property
    def tails(self):
        return self.triples[:, 2]

    def extend(self, extra) -> "TripletStore":
        extra = np.asarray(extra, dtype=np.int64).reshape(-1, 3)
        return TripletStore(np.concatenate([self.triples, extra]), self.vocab)


@dataclass(frozen=True)
class CandidateQuery:
    head: int
    relation: int
    candidates: tuple
    true_index: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(int(c) for c in self.candidates))
        if len(self.candidates) < 1:
            raise DataError("a query needs at least one candidate")
        if self.true_index is not None and not 0 <= self.true_index < len(self.candidates):
            raise DataError(
                f"true_index {self.true_index} out of range for {len(self.candidates)} candidates"
            )

    @property
    def true_tail(self):
        if self.true_index is None:
            return None
        return self.candidates[self.true_index]


@dataclass(frozen=True)
class CandidateQuerySet:
    queries: tuple
    vocab: Vocab
    _flat: np.ndarray = field(init=False, repr=False, compare=False)
    _offsets: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        queries = tuple(self.queries)
        object.__setattr__(self, "queries", queries)
        labelled = {q.true_index is not None for q in queries}
        if len(labelled) > 1:
            raise DataError("queries disagree on presence of true_index")
        for q in queries:
            if not (0 <= q.head < self.vocab.entity_count):
                raise DataError(f"head {q.head} out of vocabulary bounds")
            if not (0 <= q.relation < self.vocab.relation_count):
                raise DataError(f"relation {q.relation} out of vocabulary bounds")
            if min(q.candidates) < 0 or max(q.candidates) >= self.vocab.entity_count:
                raise DataError("candidate id out of vocabulary bounds")
        lengths = np.array([len(q.candidates) for q in queries], dtype=np.int64)
        offsets = np.zeros(len(queries) + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        flat = np.fromiter(
            (c for q in queries for c in q.candidates), dtype=np.int64, count=int(offsets[-1])
        )
        object.__setattr__(self, "_flat", flat)
        object.__setattr__(self, "_offsets", offsets)

    def __len__(self):
        return len(self.queries)

    def __iter__(self):
        return iter(self.queries)

    @property
    def labelled(self) -> bool:
        return bool(self.queries) and self.queries[0].true_index is not None

    @property
    def offsets(self) -> np.ndarray:
        """Start offset of every query's candidates in :attr:`flat_candidates`."""
        return self._offsets

    @property
    def flat_candidates(self) -> np.ndarray:
        return self._flat

    @property
    def heads(self) -> np.ndarray:
        return np.array([q.head for q in self.queries], dtype=np.int64)

    @property
    def relations(self) -> np.ndarray:
        return np.array([q.relation for q in self.queries], dtype=np.int64)

    @property
    def true_indices(self) -> np.ndarray:
        if not self.labelled:
            raise DataError("query set has no true_index (test mode)")
        return np.array([q.true_index for q in self.queries], dtype=np.int64)

    def true_triples(self) -> np.ndarray:
        """(head, relation, true tail) for every labelled query."""
        if not self.labelled:
            raise DataError("query set has no true_index (test mode)")
        return np.array([(q.head, q.relation, q.true_tail) for q in self.queries], dtype=np.int64)

    def uniform_width(self) -> Optional[int]:
        lengths = np.diff(self._offsets)
        if len(lengths) and (lengths == lengths[0]).all():
            return int(lengths[0])
        return None


def _data_lines(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            yield lineno, stripped.split()


def _parse_ints(fields, lineno):
    try:
        values = [int(f) for f in fields]
    except ValueError:
        raise DataError(f"line {lineno}: non-integer field in {' '.join(fields)!r}") from None
    if any(v < 0 for v in values):
        raise DataError(f"line {lineno}: negative id")
    return values


def load_triplets(
    path,
    entity_count: Optional[int] = None,
    relation_count: Optional[int] = None,
    skip_header: bool = False,
) -> TripletStore:
    """Read a whitespace-delimited ``h r t`` file.

    Vocabulary sizes default to ``1 + max id`` per column; pass explicit
    counts to reserve ids that never appear in the file.
    """
    rows = []
    for i, (lineno, fields) in enumerate(_data_lines(path)):
        if skip_header and i == 0:
            continue
        if len(fields) != 3:
            raise DataError(f"line {lineno}: expected 3 fields, got {len(fields)}")
        rows.append(_parse_ints(fields, lineno))
    arr = np.array(rows, dtype=np.int64).reshape(-1, 3)
    n_ent = entity_count
    n_rel = relation_count
    if n_ent is None:
        n_ent = int(arr[:, [0, 2]].max()) + 1 if len(arr) else 0
    if n_rel is None:
        n_rel = int(arr[:, 1].max()) + 1 if len(arr) else 0
    return TripletStore(arr, Vocab(n_ent, n_rel))


def load_queries(path, vocab: Optional[Vocab] = None) -> CandidateQuerySet:
    """Read a query file: ``head relation C c_1 .. c_C [true_index]`` per line."""
    queries = []
    for lineno, fields in _data_lines(path):
        values = _parse_ints(fields, lineno)
        if len(values) < 3:
            raise DataError(f"line {lineno}: expected head, relation and candidate count")
        head, rel, count = values[:3]
        rest = values[3:]
        if count < 1:
            raise DataError(f"line {lineno}: candidate count must be >= 1")
        if len(rest) == count:
            true_index = None
        elif len(rest) == count + 1:
            true_index = rest[-1]
            if true_index >= count:
                raise DataError(f"line {lineno}: true_index {true_index} >= C={count}")
        else:
            raise DataError(
                f"line {lineno}: declared {count} candidates but found {len(rest)} trailing values"
            )
        queries.append(CandidateQuery(head, rel, tuple(rest[:count]), true_index))
    if vocab is None:
        max_ent = max((max(q.head, *q.candidates) for q in queries), default=-1)
        max_rel = max((q.relation for q in queries), default=-1)
        vocab = Vocab(max_ent + 1, max_rel + 1)
    try:
        return CandidateQuerySet(tuple(queries), vocab)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_triplets(store: TripletStore, path):
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in store.triples:
            fh.write(f"{h}\t{r}\t{t}\n")


def write_queries(queries: Iterable[CandidateQuery], path):
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            parts = [q.head, q.relation, len(q.candidates), *q.candidates]
            if q.true_index is not None:
                parts.append(q.true_index)
            fh.write(" ".join(str(p) for p in parts) + "\n")


def rank_of_true(scores: Sequence[float], true_index: int) -> int:
    """1-based rank of ``scores[true_index]``; ties go to the earlier position."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 0 <= true_index < len(scores):
        raise IndexError(f"true_index {true_index} out of range for {len(scores)} scores")
    if not np.isfinite(scores).all():
        raise ValueError("non-finite score")
    target = scores[true_index]
    better = np.count_nonzero(scores > target)
    tied_before = np.count_nonzero(scores[:true_index] == target)
    return int(1 + better + tied_before)


def ranks_flat(values: np.ndarray, offsets: np.ndarray, true_index: np.ndarray) -> np.ndarray:
    """Vectorised :func:`rank_of_true` over a ragged (flat + offsets) matrix."""
    n = len(offsets) - 1
    lengths = np.diff(offsets)
    if np.any(true_index < 0) or np.any(true_index >= lengths):
        raise IndexError("true_index out of range")
    if not np.isfinite(values).all():
        raise ValueError("non-finite score")
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    if (lengths == lengths[0]).all():
        grid = values.reshape(n, lengths[0])
        target = grid[np.arange(n), true_index][:, None]
        pos = np.arange(lengths[0])[None, :]
        ahead = (grid > target) | ((grid == target) & (pos < true_index[:, None]))
        return 1 + ahead.sum(axis=1)
    row_of = np.repeat(np.arange(n), lengths)
    pos = np.arange(len(values)) - offsets[:-1][row_of]
    target = values[offsets[:-1] + true_index][row_of]
    ahead = (values > target) | ((values == target) & (pos < true_index[row_of]))
    return 1 + np.bincount(row_of, weights=ahead, minlength=n).astype(np.int64)


def mrr(queries: CandidateQuerySet, scores) -> float:
    """Mean reciprocal rank of the true candidates.

    ``scores`` may be a :class:`~kgrank.ensemble.ScoreMatrix` or a list of
    per-query score rows.
    """
    if len(queries) and not queries.labelled:
        raise DataError("mrr needs labelled queries (true_index present)")
    values, offsets = _as_flat(scores)
    if len(offsets) != len(queries.offsets) or not np.array_equal(offsets, queries.offsets):
        raise DataError("score rows do not match candidate lists")
    if len(queries) == 0:
        return math.nan
    ranks = ranks_flat(values, offsets, queries.true_indices)
    return float(np.mean(1.0 / ranks))


def _as_flat(scores):
    if hasattr(scores, "values") and hasattr(scores, "offsets"):
        return scores.values, scores.offsets
    rows = [np.asarray(r, dtype=np.float64).ravel() for r in scores]
    offsets = np.zeros(len(rows) + 1, dtype=np.int64)
    np.cumsum([len(r) for r in rows], out=offsets[1:])
    values = np.concatenate(rows) if rows else np.zeros(0)
    return values, offsets
