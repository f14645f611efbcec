"""Score functions for TransE, RotatE, QuatE and NOTE.

Every model is split into a *query* transform, which maps an anchor entity
and a relation into the space of the missing entity, and a *match* step
that scores the transformed query against candidate embeddings. Both
halves expose an analytic backward pass so the trainer can compute exact
sparse gradients without an autodiff framework.

Modes:

``"tail"``
    anchor is the head, candidates are tails (``d((h, r), t)``).
``"head"``
    anchor is the tail, candidates are heads (``d(h, (r, t))``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

MODEL_KINDS = ("TransE", "RotatE", "QuatE", "NOTE")
KIND_CODES = {"TransE": 0, "RotatE": 1, "QuatE": 2, "NOTE": 3, "DeepWalk": 4}

GS_EPS = 1e-10


class DegenerateMatrixError(ArithmeticError):
    """Gram-Schmidt hit a (numerically) linearly dependent row."""


class DegenerateParameterError(ArithmeticError):
    """A relation parameter cannot be normalised (zero modulus)."""


@dataclass(frozen=True)
class GeometryConfig:
    model_kind: str
    hidden_size: int = 200
    gamma: float = 12.0
    norm_p: Optional[int] = None
    ote_size: int = 20

    def __post_init__(self):
        if self.model_kind not in KIND_CODES:
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        if self.hidden_size < 1:
            raise ValueError("hidden_size must be positive")
        if self.norm_p is None:
            object.__setattr__(self, "norm_p", 1 if self.model_kind == "RotatE" else 2)
        if self.norm_p not in (1, 2):
            raise ValueError("norm_p must be 1 or 2")
        d = self.hidden_size
        if self.model_kind == "RotatE" and d % 2:
            raise ValueError("RotatE needs an even hidden_size")
        if self.model_kind == "QuatE" and d % 4:
            raise ValueError("QuatE needs hidden_size divisible by 4")
        if self.model_kind == "NOTE" and d % self.ote_size:
            raise ValueError("NOTE needs hidden_size divisible by ote_size")

    @property
    def blocks(self) -> int:
        """Number of NOTE sub-blocks K."""
        return self.hidden_size // self.ote_size

    @property
    def entity_dim(self) -> int:
        return self.hidden_size

    @property
    def relation_dim(self) -> int:
        d = self.hidden_size
        if self.model_kind == "RotatE":
            return d // 2
        if self.model_kind == "NOTE":
            ds = self.ote_size
            return self.blocks * (ds * ds + ds)
        if self.model_kind == "DeepWalk":
            return 0
        return d


@dataclass
class EmbeddingTable:
    entity_matrix: np.ndarray
    relation_params: np.ndarray
    geometry: GeometryConfig

    def __post_init__(self):
        g = self.geometry
        if self.entity_matrix.ndim != 2 or self.entity_matrix.shape[1] != g.entity_dim:
            raise ValueError(
                f"entity matrix width {self.entity_matrix.shape[-1]} != {g.entity_dim} for {g.model_kind}"
            )
        if self.relation_params.ndim != 2 or self.relation_params.shape[1] != g.relation_dim:
            raise ValueError(
                f"relation width {self.relation_params.shape[-1]} != {g.relation_dim} for {g.model_kind}"
            )

    @property
    def entity_count(self):
        return self.entity_matrix.shape[0]

    @property
    def relation_count(self):
        return self.relation_params.shape[0]

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.entity_matrix.copy(), self.relation_params.copy(), self.geometry)

    def astype(self, dtype) -> "EmbeddingTable":
        return EmbeddingTable(
            self.entity_matrix.astype(dtype), self.relation_params.astype(dtype), self.geometry
        )

    def note_parts(self, rel):
        """Raw blocks ``(n, K, ds, ds)`` and scalar vectors ``(n, K, ds)`` for relations ``rel``."""
        g = self.geometry
        k, ds = g.blocks, g.ote_size
        params = self.relation_params[rel]
        mats = params[..., : k * ds * ds].reshape(*params.shape[:-1], k, ds, ds)
        scal = params[..., k * ds * ds :].reshape(*params.shape[:-1], k, ds)
        return mats, scal


# -- primitives ---------------------------------------------------------------


def gram_schmidt(m) -> np.ndarray:
    """Orthonormalise the rows of a square matrix, first row first."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("gram_schmidt expects a square matrix")
    return gram_schmidt_batch(m[None])[0][0]


def gram_schmidt_batch(m: np.ndarray, eps: float = GS_EPS):
    """Row-wise Gram-Schmidt over the last two axes.

    Returns ``(q, pivots)`` where ``pivots`` holds the norm of each row after
    the projections were removed (the diagonal of the implied lower
    triangular factor).
    """
    q = np.array(m, copy=True)
    n = q.shape[-2]
    pivots = np.empty(q.shape[:-1], dtype=q.dtype)
    for k in range(n):
        v = q[..., k, :]
        for j in range(k):
            prev = q[..., j, :]
            v -= np.sum(prev * v, axis=-1, keepdims=True) * prev
        norm = np.sqrt(np.sum(v * v, axis=-1))
        if np.any(~(norm > eps)):
            raise DegenerateMatrixError(
                f"row {k} collapsed during Gram-Schmidt (norm {float(np.min(norm)):.3g} <= {eps:g})"
            )
        v /= norm[..., None]
        pivots[..., k] = norm
    return q, pivots


def gram_schmidt_backward(m: np.ndarray, q: np.ndarray, grad_q: np.ndarray) -> np.ndarray:
    """Pull a gradient on the orthonormal output back to the raw input.

    With ``m = L q`` (``L`` lower triangular) the cotangent is
    ``L^-T triu(G - G^T, 1) q`` where ``G = grad_q q^T``.
    """
    qt = np.swapaxes(q, -1, -2)
    lower = m @ qt
    g = grad_q @ qt
    b = np.triu(g - np.swapaxes(g, -1, -2), 1)
    return np.linalg.solve(np.swapaxes(lower, -1, -2), b @ q)


def _note_weight_vector(s: np.ndarray, sign: float) -> np.ndarray:
    z = sign * s
    z = z - np.max(z, axis=-1, keepdims=True)
    a = np.exp(z)
    return a / np.sqrt(np.sum(a * a, axis=-1, keepdims=True))


def note_scalar_weights(s, side: str = "head") -> np.ndarray:
    """Unit-norm diagonal scaling ``diag(exp(+-s)) / ||exp(+-s)||``."""
    s = np.asarray(s, dtype=np.float64)
    if not np.isfinite(s).all():
        raise ValueError("scalar vector must be finite")
    if side not in ("head", "tail"):
        raise ValueError("side must be 'head' or 'tail'")
    return np.diag(_note_weight_vector(s, 1.0 if side == "head" else -1.0))


def _note_weight_backward(w: np.ndarray, grad_w: np.ndarray, sign: float) -> np.ndarray:
    return sign * w * (grad_w - w * np.sum(w * grad_w, axis=-1, keepdims=True))


def _quat(a):
    return a.reshape(*a.shape[:-1], -1, 4)


def _hamilton(a, b):
    """Hamilton product of arrays shaped ``(..., 4)``."""
    a0, a1, a2, a3 = np.moveaxis(a, -1, 0)
    b0, b1, b2, b3 = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3,
            a0 * b1 + a1 * b0 + a2 * b3 - a3 * b2,
            a0 * b2 - a1 * b3 + a2 * b0 + a3 * b1,
            a0 * b3 + a1 * b2 - a2 * b1 + a3 * b0,
        ],
        axis=-1,
    )


def _conj(a):
    return a * np.array([1.0, -1.0, -1.0, -1.0], dtype=a.dtype)


def hamilton_product(a, b) -> np.ndarray:
    """Coordinate-wise quaternion product of flat ``(w, x, y, z, ...)`` vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.shape[-1] % 4:
        raise ValueError("quaternion vectors need a length divisible by 4")
    return _hamilton(_quat(a), _quat(b)).reshape(a.shape)


def _unit_quaternions(w):
    wq = _quat(w)
    mod = np.sqrt(np.sum(wq * wq, axis=-1, keepdims=True))
    if np.any(mod == 0):
        raise DegenerateParameterError("zero-modulus relation quaternion")
    return wq / mod, mod


def _norm_with_grad(x, p):
    """p-norm over the last axis and its gradient (zero where the norm is zero)."""
    if p == 1:
        return np.sum(np.abs(x), axis=-1), np.sign(x)
    n = np.sqrt(np.einsum("...i,...i->...", x, x))
    inv = np.divide(1.0, n, out=np.zeros_like(n), where=n > 0)
    return n, x * inv[..., None]


# -- models -------------------------------------------------------------------


class ScoreModel:
    """Base: ``score = gamma - distance(query, candidate)``."""

    similarity = False

    def __init__(self, geometry: GeometryConfig):
        self.geometry = geometry

    # query: (B,) anchor ids and relations -> (B, D)
    def query(self, table, anchor, rel, mode):
        raise NotImplementedError

    def query_backward(self, table, cache, grad_q):
        """Return ``(anchor_grad (B, D), rel_ids, rel_grad)``."""
        raise NotImplementedError

    def distance(self, diff):
        raise NotImplementedError

    def match(self, q, cand):
        """Scores ``(B, N)`` of queries ``(B, D)`` against candidates ``(B, N, D)``."""
        return self.match_grad(q, cand)[0]

    def match_grad(self, q, cand):
        """Scores plus a closure mapping ``grad_score`` to ``(grad_q, grad_cand)``."""
        diff = q[:, None, :] - cand
        dist, ddiff = self.distance(diff)

        def backward(grad_score):
            g = ddiff
            g *= -grad_score[..., None]
            return g.sum(axis=1), -g

        return self.geometry.gamma - dist, backward

    def score_triples(self, table, h, r, t, mode="tail"):
        h, r, t = (np.atleast_1d(np.asarray(x, dtype=np.int64)) for x in (h, r, t))
        if mode == "tail":
            q, _ = self.query(table, h, r, mode)
            cand = table.entity_matrix[t][:, None, :]
        else:
            q, _ = self.query(table, t, r, mode)
            cand = table.entity_matrix[h][:, None, :]
        return self.match(q, cand)[:, 0]


class TransE(ScoreModel):
    def query(self, table, anchor, rel, mode):
        sign = 1.0 if mode == "tail" else -1.0
        q = table.entity_matrix[anchor] + sign * table.relation_params[rel]
        return q, (rel, sign)

    def query_backward(self, table, cache, grad_q):
        rel, sign = cache
        return grad_q, rel, sign * grad_q

    def distance(self, diff):
        return _norm_with_grad(diff, self.geometry.norm_p)


class RotatE(ScoreModel):
    """Complex rotation; entities are ``[real half | imaginary half]``."""

    @staticmethod
    def _split(x):
        half = x.shape[-1] // 2
        return x[..., :half], x[..., half:]

    def query(self, table, anchor, rel, mode):
        sign = 1.0 if mode == "tail" else -1.0
        re, im = self._split(table.entity_matrix[anchor])
        theta = sign * table.relation_params[rel]
        c, s = np.cos(theta), np.sin(theta)
        q = np.concatenate([re * c - im * s, re * s + im * c], axis=-1)
        return q, (rel, sign, c, s, q)

    def query_backward(self, table, cache, grad_q):
        rel, sign, c, s, q = cache
        gre, gim = self._split(grad_q)
        qre, qim = self._split(q)
        g_anchor = np.concatenate([gre * c + gim * s, -gre * s + gim * c], axis=-1)
        g_theta = sign * (-gre * qim + gim * qre)
        return g_anchor, rel, g_theta

    def distance(self, diff):
        re, im = self._split(diff)
        mod = np.sqrt(re * re + im * im)
        nz = mod > 0
        safe = np.where(nz, mod, 1.0)
        if self.geometry.norm_p == 1:
            gmod = np.ones_like(mod)
            dist = mod.sum(axis=-1)
        else:
            dist = np.sqrt(np.sum(mod * mod, axis=-1))
            gmod = mod / np.where(dist > 0, dist, 1.0)[..., None]
        scale = gmod * nz / safe
        return dist, np.concatenate([re * scale, im * scale], axis=-1)


class QuatE(ScoreModel):
    """Quaternion rotation scored by inner product (similarity, no margin)."""

    similarity = True

    def query(self, table, anchor, rel, mode):
        e = _quat(table.entity_matrix[anchor])
        unit, mod = _unit_quaternions(table.relation_params[rel])
        if mode == "tail":
            q = _hamilton(e, unit)
        else:
            q = _hamilton(e, _conj(unit))
        return q.reshape(len(anchor), -1), (rel, mode, e, unit, mod)

    def query_backward(self, table, cache, grad_q):
        rel, mode, e, unit, mod = cache
        gq = _quat(grad_q)
        if mode == "tail":
            g_e = _hamilton(gq, _conj(unit))
            g_u = _hamilton(_conj(e), gq)
        else:
            g_e = _hamilton(gq, unit)
            g_u = _conj(_hamilton(_conj(e), gq))
        g_w = (g_u - unit * np.sum(unit * g_u, axis=-1, keepdims=True)) / mod
        n = len(rel)
        return g_e.reshape(n, -1), rel, g_w.reshape(n, -1)

    def match_grad(self, q, cand):
        scores = np.einsum("bd,bnd->bn", q, cand)

        def backward(grad_score):
            return np.einsum("bn,bnd->bd", grad_score, cand), grad_score[..., None] * q[:, None, :]

        return scores, backward


class NOTE(ScoreModel):
    """Orthogonal block transforms with unit-norm scalar weights.

    Tail mode uses ``w_h * phi(M) e_h`` (compared with ``e_t``); head mode
    uses the transposed block ``w_t * phi(M)^T e_t`` (compared with ``e_h``).
    """

    def query(self, table, anchor, rel, mode):
        g = self.geometry
        k, ds = g.blocks, g.ote_size
        urel, inv = np.unique(rel, return_inverse=True)
        mats, scal = table.note_parts(urel)
        ortho, _ = gram_schmidt_batch(mats)
        sign = 1.0 if mode == "tail" else -1.0
        w = _note_weight_vector(scal, sign)
        e = table.entity_matrix[anchor].reshape(len(anchor), k, ds)
        o = ortho[inv]
        if mode == "tail":
            y = np.einsum("bkij,bkj->bki", o, e)
        else:
            y = np.einsum("bkji,bkj->bki", o, e)
        q = w[inv] * y
        cache = (urel, inv, mats, ortho, w, e, y, mode, sign)
        return q.reshape(len(anchor), -1), cache

    def query_backward(self, table, cache, grad_q):
        urel, inv, mats, ortho, w, e, y, mode, sign = cache
        g = self.geometry
        k, ds = g.blocks, g.ote_size
        n = len(inv)
        gq = grad_q.reshape(n, k, ds)
        wi = w[inv]
        gy = wi * gq
        gw_rows = gq * y
        o = ortho[inv]
        if mode == "tail":
            g_e = np.einsum("bkij,bki->bkj", o, gy)
            go_rows = gy[..., :, None] * e[..., None, :]
        else:
            g_e = np.einsum("bkji,bki->bkj", o, gy)
            go_rows = e[..., :, None] * gy[..., None, :]
        nu = len(urel)
        g_ortho = np.zeros((nu, k, ds, ds), dtype=gq.dtype)
        np.add.at(g_ortho, inv, go_rows)
        g_w = np.zeros((nu, k, ds), dtype=gq.dtype)
        np.add.at(g_w, inv, gw_rows)
        g_mats = gram_schmidt_backward(mats, ortho, g_ortho)
        g_scal = _note_weight_backward(w, g_w, sign)
        g_rel = np.concatenate([g_mats.reshape(nu, -1), g_scal.reshape(nu, -1)], axis=-1)
        return g_e.reshape(n, -1), urel, g_rel

    def distance(self, diff):
        g = self.geometry
        blocks = diff.reshape(*diff.shape[:-1], g.blocks, g.ote_size)
        dist, grad = _norm_with_grad(blocks, g.norm_p)
        return dist.sum(axis=-1), grad.reshape(diff.shape)


_MODEL_CLASSES = {"TransE": TransE, "RotatE": RotatE, "QuatE": QuatE, "NOTE": NOTE}


def get_model(geometry: GeometryConfig) -> ScoreModel:
    try:
        return _MODEL_CLASSES[geometry.model_kind](geometry)
    except KeyError:
        raise ValueError(f"no score function for {geometry.model_kind!r}") from None


def _check_kind(table, kind):
    if table.geometry.model_kind != kind:
        raise ValueError(f"table geometry is {table.geometry.model_kind}, expected {kind}")


def transe_score(h, r, t, table: EmbeddingTable) -> float:
    _check_kind(table, "TransE")
    return float(get_model(table.geometry).score_triples(table, h, r, t)[0])


def rotate_score(h, r, t, table: EmbeddingTable) -> float:
    _check_kind(table, "RotatE")
    return float(get_model(table.geometry).score_triples(table, h, r, t)[0])


def quate_score(h, r, t, table: EmbeddingTable) -> float:
    _check_kind(table, "QuatE")
    return float(get_model(table.geometry).score_triples(table, h, r, t)[0])


def note_score(h, r, t, table: EmbeddingTable, direction: str = "head-to-tail") -> float:
    """NOTE plausibility; ``direction`` is ``"head-to-tail"`` or ``"tail-to-head"``."""
    _check_kind(table, "NOTE")
    mode = {"head-to-tail": "tail", "tail-to-head": "head"}[direction]
    return float(get_model(table.geometry).score_triples(table, h, r, t, mode=mode)[0])


def score_candidates(table: EmbeddingTable, heads, relations, flat_candidates, offsets,
                     chunk: int = 4096) -> np.ndarray:
    """Tail-prediction scores for ragged candidate lists, flattened."""
    model = get_model(table.geometry)
    heads = np.asarray(heads, dtype=np.int64)
    relations = np.asarray(relations, dtype=np.int64)
    lengths = np.diff(offsets)
    out = np.empty(len(flat_candidates), dtype=np.float64)
    if len(lengths) and (lengths == lengths[0]).all():
        width = int(lengths[0])
        cand = flat_candidates.reshape(-1, width)
        for s in range(0, len(heads), chunk):
            sl = slice(s, s + chunk)
            q, _ = model.query(table, heads[sl], relations[sl], "tail")
            sc = model.match(q, table.entity_matrix[cand[sl]])
            out[offsets[s]: offsets[min(s + chunk, len(heads))]] = sc.ravel()
        return out
    for i in range(len(heads)):
        q, _ = model.query(table, heads[i:i + 1], relations[i:i + 1], "tail")
        c = flat_candidates[offsets[i]: offsets[i + 1]]
        out[offsets[i]: offsets[i + 1]] = model.match(q, table.entity_matrix[c][None])[0]
    return out
