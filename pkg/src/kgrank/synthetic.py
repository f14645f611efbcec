"""Synthetic knowledge graphs with planted relation patterns.

Entities are split into ordered groups. Every relation maps group ``g`` to
group ``g + offset`` and links a head to a random subset of that group's
members, so a model only has to learn group positions and per-relation
offsets. The default relation set plants:

* a symmetric relation (offset 0, ``sibling``),
* inverse pairs (``+1``/``-1`` and ``+3``/``-3``),
* compositions (``+3 = +1 then +2`` and ``+4 = +2 then +2``).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import CandidateQuery, CandidateQuerySet, TripletStore, Vocab, write_queries, write_triplets

DEFAULT_OFFSETS = (0, 1, -1, 2, 3, -3, 4, 5)


@dataclass
class SyntheticKG:
    train: TripletStore
    valid: CandidateQuerySet
    test: CandidateQuerySet
    group_of: np.ndarray


def _group_triples(rng, n_groups, group_size, offsets, density):
    n_ent = n_groups * group_size
    group_of = np.repeat(np.arange(n_groups), group_size)
    members = np.arange(n_ent).reshape(n_groups, group_size)
    rows = []
    for r, off in enumerate(offsets):
        for h in range(n_ent):
            g = group_of[h] + off
            if not 0 <= g < n_groups:
                continue
            mask = rng.random(group_size) < density
            tails = members[g][mask]
            tails = tails[tails != h]
            rows.extend((h, r, int(t)) for t in tails)
    return np.array(rows, dtype=np.int64), group_of


def _make_queries(rng, triples, n_ent, n_candidates, filler_pool):
    queries = []
    for h, r, t in triples:
        if filler_pool is not None:
            fill = rng.choice(filler_pool, size=n_candidates - 1, replace=False)
        else:
            fill = rng.choice(n_ent - 1, size=n_candidates - 1, replace=False)
            fill = fill + (fill >= t)
        pos = int(rng.integers(n_candidates))
        cands = np.insert(fill, pos, t)
        queries.append(CandidateQuery(int(h), int(r), tuple(int(c) for c in cands), pos))
    return queries


def make_synthetic_kg(
    n_groups: int = 50,
    group_size: int = 20,
    offsets=DEFAULT_OFFSETS,
    density: float = 0.14,
    n_valid: int = 1000,
    n_test: int = 1000,
    n_candidates: int = 100,
    popular_tails: int | None = None,
    seed: int = 0,
) -> SyntheticKG:
    """Build a grouped KG and hold out ``n_valid + n_test`` facts as queries.

    With ``popular_tails=k`` the held-out facts all point at one of ``k``
    randomly chosen entities and filler candidates are drawn from the other
    entities only, so true tails recur across candidate lists while fillers
    stay rare (given short enough lists).
    """
    rng = np.random.default_rng(seed)
    triples, group_of = _group_triples(rng, n_groups, group_size, offsets, density)
    n_ent = n_groups * group_size
    n_held = n_valid + n_test
    pool = None
    if popular_tails is None:
        held_idx = rng.permutation(len(triples))[:n_held]
    else:
        popular = rng.choice(n_ent, size=popular_tails, replace=False)
        eligible = np.flatnonzero(np.isin(triples[:, 2], popular))
        if len(eligible) < n_held:
            raise ValueError(f"only {len(eligible)} facts point at popular tails, need {n_held}")
        held_idx = rng.permutation(eligible)[:n_held]
        pool = np.setdiff1d(np.arange(n_ent), popular)
    held = triples[held_idx]
    keep = np.ones(len(triples), dtype=bool)
    keep[held_idx] = False
    train = triples[keep]
    vocab = Vocab(n_ent, len(offsets))
    valid = _make_queries(rng, held[:n_valid], n_ent, n_candidates, pool)
    test = _make_queries(rng, held[n_valid:], n_ent, n_candidates, pool)
    return SyntheticKG(
        TripletStore(train, vocab),
        CandidateQuerySet(tuple(valid), vocab),
        CandidateQuerySet(tuple(test), vocab),
        group_of,
    )


def write_synthetic(kg: SyntheticKG, directory) -> dict:
    """Write ``train.txt``, ``valid.txt`` and ``test.txt``; returns their paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {name: directory / f"{name}.txt" for name in ("train", "valid", "test")}
    write_triplets(kg.train, paths["train"])
    write_queries(kg.valid, paths["valid"])
    write_queries(kg.test, paths["test"])
    return paths
