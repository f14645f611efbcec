import math

import numpy as np
import pytest

from kgrank.models import (
    DegenerateMatrixError, DegenerateParameterError, EmbeddingTable, GeometryConfig,
    gram_schmidt, gram_schmidt_batch, hamilton_product, note_scalar_weights, note_score,
    quate_score, rotate_score, score_candidates, transe_score, get_model,
)
from oracles import matmul_orthogonality_error

GAMMA = 12.0


def table(kind, ent, rel, **geo):
    ent = np.asarray(ent, dtype=np.float64)
    g = GeometryConfig(kind, hidden_size=ent.shape[1], gamma=GAMMA, **geo)
    return EmbeddingTable(ent, np.asarray(rel, dtype=np.float64).reshape(-1, g.relation_dim), g)


def note_table(ent, mats, scal, ds):
    """One relation; ``mats`` (K, ds, ds) and ``scal`` (K, ds)."""
    mats, scal = np.asarray(mats, float), np.asarray(scal, float)
    rel = np.concatenate([mats.ravel(), scal.ravel()])[None]
    return table("NOTE", ent, rel, ote_size=ds)


class TestGeometry:
    def test_dims(self):
        assert GeometryConfig("TransE", 8).relation_dim == 8
        assert GeometryConfig("RotatE", 8).relation_dim == 4
        assert GeometryConfig("QuatE", 8).relation_dim == 8
        g = GeometryConfig("NOTE", 8, ote_size=4)
        assert (g.blocks, g.relation_dim) == (2, 2 * (16 + 4))

    def test_defaults(self):
        g = GeometryConfig("NOTE")
        assert (g.hidden_size, g.gamma, g.ote_size, g.norm_p) == (200, 12.0, 20, 2)
        assert GeometryConfig("RotatE").norm_p == 1

    @pytest.mark.parametrize("kind,d,extra", [("RotatE", 3, {}), ("QuatE", 6, {}),
                                               ("NOTE", 10, {"ote_size": 4}), ("Foo", 4, {})])
    def test_invalid(self, kind, d, extra):
        with pytest.raises(ValueError):
            GeometryConfig(kind, d, **extra)

    def test_table_shape_checked(self):
        with pytest.raises(ValueError):
            EmbeddingTable(np.zeros((2, 4)), np.zeros((1, 3)), GeometryConfig("TransE", 4))


class TestGramSchmidt:
    def test_identity(self):
        assert np.array_equal(gram_schmidt(np.eye(3)), np.eye(3))

    def test_scaling_removed(self):
        assert np.allclose(gram_schmidt([[2, 0], [0, 3]]), np.eye(2), atol=0)

    def test_hand_example(self):
        q = gram_schmidt([[1, 1], [1, 0]])
        s = 1 / math.sqrt(2)
        assert np.allclose(q, [[s, s], [s, -s]], atol=1e-15)
        assert matmul_orthogonality_error(q) < 1e-15

    def test_same_row_space(self):
        rng = np.random.default_rng(1)
        m = rng.normal(size=(5, 5))
        q = gram_schmidt(m)
        # each row of m is a combination of q's first rows (lower triangular)
        lower = m @ q.T
        assert np.allclose(np.triu(lower, 1), 0, atol=1e-12)

    def test_degenerate(self):
        with pytest.raises(DegenerateMatrixError):
            gram_schmidt([[1, 2], [2, 4]])
        with pytest.raises(DegenerateMatrixError):
            gram_schmidt_batch(np.zeros((1, 2, 2)))

    def test_batch_matches_single(self):
        rng = np.random.default_rng(2)
        m = rng.normal(size=(4, 3, 3))
        q, _ = gram_schmidt_batch(m)
        for i in range(4):
            assert np.allclose(q[i], gram_schmidt(m[i]), atol=1e-14)


class TestScalarWeights:
    def test_zero_ds4(self):
        assert np.allclose(np.diag(note_scalar_weights(np.zeros(4))), 0.5, atol=1e-15)

    def test_zero_ds20(self):
        assert np.allclose(np.diag(note_scalar_weights(np.zeros(20))), 1 / math.sqrt(20), atol=1e-15)

    def test_hand_example(self):
        d = np.diag(note_scalar_weights([math.log(3), math.log(4)], "head"))
        assert np.allclose(d, [0.6, 0.8], atol=1e-15)
        assert abs(np.linalg.norm(d) - 1) < 1e-15

    def test_tail_side_uses_negation(self):
        s = np.array([0.3, -1.2, 2.0])
        assert np.allclose(note_scalar_weights(s, "tail"), note_scalar_weights(-s, "head"))

    def test_overflow_safe(self):
        d = np.diag(note_scalar_weights([50.0, 49.0, -50.0]))
        assert np.isfinite(d).all() and (d > 0).all()
        assert abs(np.linalg.norm(d) - 1) < 1e-12
        huge = np.diag(note_scalar_weights([1000.0, 999.0]))
        assert np.isfinite(huge).all() and abs(np.linalg.norm(huge) - 1) < 1e-12

    def test_non_finite(self):
        with pytest.raises(ValueError):
            note_scalar_weights([np.inf, 0.0])


class TestTransE:
    def test_exact_translation(self):
        t = table("TransE", [[1, 2], [0, 1], [1, 3]], [[0, 1]])
        assert transe_score(0, 0, 2, t) == GAMMA

    def test_l2(self):
        t = table("TransE", [[1, 0], [0, 0]], [[0, 1]])
        assert transe_score(0, 0, 1, t) == pytest.approx(12 - math.sqrt(2), abs=1e-12)

    def test_l1(self):
        t = table("TransE", [[1, 0], [0, 0]], [[0, 1]], norm_p=1)
        assert transe_score(0, 0, 1, t) == pytest.approx(10.0, abs=1e-12)

    def test_wrong_kind(self):
        t = table("QuatE", [[1, 0, 0, 0]], [[1, 0, 0, 0]])
        with pytest.raises(ValueError):
            transe_score(0, 0, 0, t)


def rotate_table(h, theta, t):
    ent = [[h.real, h.imag], [t.real, t.imag]]
    return table("RotatE", ent, [[theta]])


class TestRotatE:
    def test_identity_rotation(self):
        t = table("RotatE", [[0.3, -0.2, 0.5, 1.0]], [[0.0, 0.0]])
        assert rotate_score(0, 0, 0, t) == GAMMA

    def test_rotation_by_pi(self):
        t = rotate_table(1 + 0j, math.pi, -1 + 0j)
        assert rotate_score(0, 0, 1, t) == pytest.approx(GAMMA, abs=1e-12)

    def test_quarter_turn(self):
        t = rotate_table(1 + 0j, math.pi / 2, 1 + 0j)
        assert rotate_score(0, 0, 1, t) == pytest.approx(12 - math.sqrt(2), abs=1e-12)

    def test_sum_of_moduli(self):
        # coordinates 3+4i and 0: moduli 5 and 0
        t = table("RotatE", [[3, 0, 4, 0], [0, 0, 0, 0]], [[0, 0]])
        assert rotate_score(0, 0, 1, t) == pytest.approx(GAMMA - 5, abs=1e-12)

    def test_two_pi_invariance(self):
        rng = np.random.default_rng(3)
        ent = rng.normal(size=(2, 6))
        th = rng.uniform(-3, 3, size=(1, 3))
        a = rotate_score(0, 0, 1, table("RotatE", ent, th))
        b = rotate_score(0, 0, 1, table("RotatE", ent, th + 2 * math.pi))
        assert abs(a - b) <= 1e-9


class TestHamilton:
    def test_identity(self):
        b = np.array([0.3, -1, 2, 0.5])
        assert np.array_equal(hamilton_product([1, 0, 0, 0], b), b)

    def test_i_squared(self):
        assert hamilton_product([0, 1, 0, 0], [0, 1, 0, 0]).tolist() == [-1, 0, 0, 0]

    def test_ij_k_noncommutative(self):
        i, j = [0, 1, 0, 0], [0, 0, 1, 0]
        assert hamilton_product(i, j).tolist() == [0, 0, 0, 1]
        assert hamilton_product(j, i).tolist() == [0, 0, 0, -1]

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            hamilton_product([1, 0, 0, 0], [1, 0, 0, 0, 0, 0, 0, 0])

    def test_modulus_multiplicative(self):
        rng = np.random.default_rng(4)
        a, b = rng.normal(size=12), rng.normal(size=12)
        p = hamilton_product(a, b).reshape(-1, 4)
        na = np.linalg.norm(a.reshape(-1, 4), axis=1)
        nb = np.linalg.norm(b.reshape(-1, 4), axis=1)
        assert np.allclose(np.linalg.norm(p, axis=1), na * nb, atol=1e-12)


class TestQuatE:
    def test_identity_is_self_inner_product(self):
        e = np.array([[0.5, -1, 2, 0.25, 1, 1, 0, 3]])
        t = table("QuatE", e, [[2, 0, 0, 0, 0.5, 0, 0, 0]])
        assert quate_score(0, 0, 0, t) == pytest.approx(float(np.sum(e * e)), abs=1e-12)

    def test_hand_example(self):
        t = table("QuatE", [[1, 0, 0, 0], [0, 1, 0, 0]], [[0, 2, 0, 0]])
        assert quate_score(0, 0, 1, t) == pytest.approx(1.0, abs=1e-15)

    def test_orthogonal_tail(self):
        t = table("QuatE", [[1, 0, 0, 0], [0, 0, 1, 0]], [[0, 2, 0, 0]])
        assert quate_score(0, 0, 1, t) == 0.0

    def test_zero_modulus(self):
        t = table("QuatE", [[1, 0, 0, 0]], [[0, 0, 0, 0]])
        with pytest.raises(DegenerateParameterError):
            quate_score(0, 0, 0, t)


class TestNOTE:
    def test_zero_distance_by_construction(self):
        rng = np.random.default_rng(5)
        ds, k = 3, 2
        q = np.stack([np.linalg.qr(rng.normal(size=(ds, ds)))[0] for _ in range(k)])
        q = np.stack([gram_schmidt(b) for b in q])  # exact fixed points
        eh = rng.normal(size=(k, ds))
        et = np.einsum("kij,kj->ki", q, eh) / math.sqrt(ds)
        t = note_table([eh.ravel(), et.ravel()], q, np.zeros((k, ds)), ds)
        assert note_score(0, 0, 1, t) == pytest.approx(GAMMA, abs=1e-12)

    def test_hand_example(self):
        t = note_table([[2, 0], [0, 0]], [np.eye(2)], np.zeros((1, 2)), 2)
        assert note_score(0, 0, 1, t) == pytest.approx(GAMMA - math.sqrt(2), abs=1e-12)

    def test_isometry_of_orthogonal_blocks(self):
        # ||w Q e_h - e_t|| == ||w e_h - Q^T e_t|| for orthogonal Q and scalar w
        rng = np.random.default_rng(6)
        ds = 4
        for _ in range(20):
            mats = rng.normal(size=(2, ds, ds))
            q = np.stack([gram_schmidt(m) for m in mats])
            eh, et = rng.normal(size=(2, 2 * ds))
            t = note_table([eh, et], mats, np.zeros((2, ds)), ds)
            w = 1 / math.sqrt(ds)
            lhs = GAMMA - note_score(0, 0, 1, t)
            ehb, etb = eh.reshape(2, ds), et.reshape(2, ds)
            rhs = sum(np.linalg.norm(w * ehb[i] - q[i].T @ etb[i]) for i in range(2))
            assert abs(lhs - rhs) <= 1e-9

    def test_unit_scale_gives_direction_symmetry(self):
        # with d_s = 1 the weights are exactly 1, so both directions agree
        rng = np.random.default_rng(7)
        mats = rng.normal(size=(3, 1, 1))
        eh, et = rng.normal(size=(2, 3))
        t = note_table([eh, et], mats, rng.normal(size=(3, 1)), 1)
        a = note_score(0, 0, 1, t, "head-to-tail")
        b = note_score(0, 0, 1, t, "tail-to-head")
        assert abs(a - b) <= 1e-9

    def test_tail_to_head_formula(self):
        rng = np.random.default_rng(8)
        ds = 3
        mats = rng.normal(size=(1, ds, ds))
        s = rng.normal(size=(1, ds))
        eh, et = rng.normal(size=(2, ds))
        t = note_table([eh, et], mats, s, ds)
        q = gram_schmidt(mats[0])
        wt = np.diag(note_scalar_weights(s[0], "tail"))
        want = GAMMA - np.linalg.norm(wt * (q.T @ et) - eh)
        assert note_score(0, 0, 1, t, "tail-to-head") == pytest.approx(want, abs=1e-12)


@pytest.mark.parametrize("kind,geo", [("TransE", {}), ("RotatE", {}), ("QuatE", {}),
                                      ("NOTE", {"ote_size": 2})])
def test_score_linear_in_gamma(kind, geo):
    rng = np.random.default_rng(9)
    g1 = GeometryConfig(kind, 4, gamma=12.0, **geo)
    ent, rel = rng.normal(size=(3, 4)), rng.normal(size=(2, g1.relation_dim))
    s1 = get_model(g1).score_triples(EmbeddingTable(ent, rel, g1), [0, 1], [1, 0], [2, 2])
    g2 = GeometryConfig(kind, 4, gamma=13.5, **geo)
    s2 = get_model(g2).score_triples(EmbeddingTable(ent, rel, g2), [0, 1], [1, 0], [2, 2])
    slope = 0.0 if kind == "QuatE" else 1.5  # similarity scores carry no margin
    assert np.allclose(s2 - s1, slope, atol=1e-12)


@pytest.mark.parametrize("kind,geo", [("TransE", {}), ("RotatE", {}), ("QuatE", {}),
                                      ("NOTE", {"ote_size": 2})])
def test_score_candidates_matches_scalar(kind, geo):
    rng = np.random.default_rng(10)
    g = GeometryConfig(kind, 8, **geo)
    t = EmbeddingTable(rng.normal(size=(6, 8)), rng.normal(size=(2, g.relation_dim)), g)
    model = get_model(g)
    heads, rels = np.array([0, 3, 5]), np.array([1, 0, 1])
    for lengths in ([4, 4, 4], [2, 5, 1]):
        offsets = np.r_[0, np.cumsum(lengths)]
        flat = rng.integers(0, 6, offsets[-1])
        got = score_candidates(t, heads, rels, flat, offsets, chunk=2)
        for i in range(3):
            c = flat[offsets[i]: offsets[i + 1]]
            want = model.score_triples(t, np.full(len(c), heads[i]), np.full(len(c), rels[i]), c)
            assert np.allclose(got[offsets[i]: offsets[i + 1]], want, atol=1e-12)
