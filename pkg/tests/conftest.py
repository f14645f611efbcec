import numpy as np
import pytest

from kgrank.core import CandidateQuery, CandidateQuerySet, TripletStore, Vocab

A, B, C = 0, 1, 2
R1, R2 = 0, 1
T1_TRIPLES = [(A, R1, B), (A, R1, C), (B, R2, C), (C, R1, B), (A, R2, B)]


@pytest.fixture
def t1():
    return TripletStore(np.array(T1_TRIPLES), Vocab(3, 2))


def random_kg(rng, max_triples=200, max_ent=30, max_rel=5):
    n_ent = int(rng.integers(2, max_ent + 1))
    n_rel = int(rng.integers(1, max_rel + 1))
    n = int(rng.integers(1, max_triples + 1))
    rows = np.stack([
        rng.integers(0, n_ent, n), rng.integers(0, n_rel, n), rng.integers(0, n_ent, n)
    ], axis=1)
    return TripletStore(rows, Vocab(n_ent, n_rel))


def random_queries(rng, vocab, n_queries=5, width=6, labelled=True):
    qs = []
    for _ in range(n_queries):
        cands = tuple(int(c) for c in rng.integers(0, vocab.entity_count, width))
        qs.append(CandidateQuery(int(rng.integers(vocab.entity_count)),
                                 int(rng.integers(vocab.relation_count)), cands,
                                 int(rng.integers(width)) if labelled else None))
    return CandidateQuerySet(tuple(qs), vocab)
