import math

import numpy as np
import pytest

from kgrank.core import (
    CandidateQuery, CandidateQuerySet, DataError, TripletStore, Vocab, load_queries,
    load_triplets, mrr, rank_of_true, ranks_flat, write_queries, write_triplets,
)
from oracles import brute_rank


def _write(tmp_path, text, name="f.txt"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoadTriplets:
    def test_counts_from_max_ids(self, tmp_path):
        store = load_triplets(_write(tmp_path, "0 0 1\n1 1 2\n"))
        assert len(store) == 2
        assert store.vocab == Vocab(3, 2)

    def test_empty_file_with_explicit_counts(self, tmp_path):
        store = load_triplets(_write(tmp_path, ""), entity_count=5, relation_count=2)
        assert len(store) == 0
        assert (store.vocab.entity_count, store.vocab.relation_count) == (5, 2)

    def test_short_row_names_line(self, tmp_path):
        with pytest.raises(DataError, match="line 1"):
            load_triplets(_write(tmp_path, "0 0\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="nope"):
            load_triplets(tmp_path / "nope.txt")

    def test_negative_id(self, tmp_path):
        with pytest.raises(DataError, match="line 2"):
            load_triplets(_write(tmp_path, "0 0 1\n0 -1 1\n"))

    def test_tabs_comments_and_order(self, tmp_path):
        store = load_triplets(_write(tmp_path, "# header\n2\t0\t1\n0\t1\t2\n"))
        assert store.triples.tolist() == [[2, 0, 1], [0, 1, 2]]

    def test_duplicates_kept(self, tmp_path):
        store = load_triplets(_write(tmp_path, "0 0 1\n0 0 1\n"))
        assert len(store) == 2

    def test_ids_beyond_explicit_vocab(self, tmp_path):
        with pytest.raises(DataError):
            load_triplets(_write(tmp_path, "0 0 9\n"), entity_count=3, relation_count=1)

    def test_roundtrip(self, tmp_path, t1):
        write_triplets(t1, tmp_path / "t.txt")
        again = load_triplets(tmp_path / "t.txt")
        assert np.array_equal(again.triples, t1.triples)


class TestLoadQueries:
    def test_labelled_row(self, tmp_path):
        qs = load_queries(_write(tmp_path, "0 0 3 5 6 7 1\n"))
        assert qs.queries[0] == CandidateQuery(0, 0, (5, 6, 7), 1)
        assert qs.queries[0].true_tail == 6

    def test_test_mode_row(self, tmp_path):
        qs = load_queries(_write(tmp_path, "0 0 2 5 6\n"))
        assert qs.queries[0].true_index is None
        assert not qs.labelled

    def test_true_index_out_of_range(self, tmp_path):
        with pytest.raises(DataError, match="true_index 3"):
            load_queries(_write(tmp_path, "0 0 3 5 6 7 3\n"))

    def test_count_mismatch(self, tmp_path):
        with pytest.raises(DataError, match="line 1"):
            load_queries(_write(tmp_path, "0 0 3 5 6\n"))

    def test_mixed_labelled_rejected(self, tmp_path):
        with pytest.raises(DataError):
            load_queries(_write(tmp_path, "0 0 2 5 6 1\n0 0 2 5 6\n"))

    def test_repeated_candidates_preserved(self, tmp_path):
        qs = load_queries(_write(tmp_path, "0 0 3 5 5 6 2\n"))
        assert qs.queries[0].candidates == (5, 5, 6)

    def test_roundtrip_and_offsets(self, tmp_path):
        qs = load_queries(_write(tmp_path, "0 0 2 1 2 0\n1 0 3 2 0 1 2\n"))
        assert qs.offsets.tolist() == [0, 2, 5]
        assert qs.flat_candidates.tolist() == [1, 2, 2, 0, 1]
        write_queries(qs, tmp_path / "again.txt")
        assert load_queries(tmp_path / "again.txt").queries == qs.queries


class TestRank:
    def test_strict_max(self):
        assert rank_of_true([0.9, 0.5, 0.1], 0) == 1

    def test_one_greater(self):
        assert rank_of_true([0.5, 0.9, 0.1], 0) == 2

    def test_ties_by_position(self):
        assert rank_of_true([0.5, 0.5, 0.5], 2) == 3

    def test_errors(self):
        with pytest.raises(ValueError):
            rank_of_true([0.1, float("nan")], 0)
        with pytest.raises(IndexError):
            rank_of_true([0.1, 0.2], 2)

    def test_flat_matches_oracle(self):
        rng = np.random.default_rng(0)
        for width in (None, 7):
            lengths = rng.integers(1, 9, 40) if width is None else np.full(40, width)
            offsets = np.r_[0, np.cumsum(lengths)]
            values = rng.integers(0, 4, offsets[-1]).astype(float)  # lots of ties
            true_idx = np.array([rng.integers(n) for n in lengths])
            got = ranks_flat(values, offsets, true_idx)
            want = [brute_rank(list(values[a:b]), t)
                    for a, b, t in zip(offsets[:-1], offsets[1:], true_idx)]
            assert got.tolist() == want


def _qs(rows):
    vocab = Vocab(2000, 1)
    return CandidateQuerySet(tuple(CandidateQuery(0, 0, c, t) for c, t in rows), vocab)


class TestMRR:
    def test_perfect(self):
        qs = _qs([((1, 2, 3), 0)])
        assert mrr(qs, [[3.0, 2.0, 1.0]]) == 1.0

    def test_ranks_one_and_four(self):
        qs = _qs([((1, 2, 3, 4), 0), ((1, 2, 3, 4), 3)])
        assert mrr(qs, [[4, 3, 2, 1], [4, 3, 2, 1]]) == pytest.approx(0.625)

    def test_uniform_scores_true_first(self):
        qs = _qs([(tuple(range(1001)), 0)])
        assert mrr(qs, [np.zeros(1001)]) == 1.0

    def test_test_mode_rejected(self):
        qs = CandidateQuerySet((CandidateQuery(0, 0, (1, 2)),), Vocab(3, 1))
        with pytest.raises(DataError):
            mrr(qs, [[1.0, 0.0]])

    def test_shape_mismatch(self):
        qs = _qs([((1, 2, 3), 0)])
        with pytest.raises(DataError):
            mrr(qs, [[1.0, 0.0]])

    def test_empty_is_nan(self):
        qs = CandidateQuerySet((), Vocab(1, 1))
        assert math.isnan(mrr(qs, []))


def test_store_is_read_only(t1):
    with pytest.raises(ValueError):
        t1.triples[0, 0] = 2


def test_vocab_label_lengths():
    with pytest.raises(DataError):
        Vocab(2, 1, entity_labels=("a",))
    Vocab(2, 1, entity_labels=("a", "b"), relation_labels=("r",))


def test_query_set_bounds():
    with pytest.raises(DataError):
        CandidateQuerySet((CandidateQuery(0, 0, (5,), 0),), Vocab(3, 1))
    with pytest.raises(DataError):
        CandidateQuerySet((CandidateQuery(0, 4, (1,), 0),), Vocab(3, 1))


def test_store_extend(t1):
    bigger = t1.extend([(0, 0, 0)])
    assert len(bigger) == len(t1) + 1
    with pytest.raises(DataError):
        TripletStore(np.array([[0, 5, 0]]), Vocab(3, 2))
