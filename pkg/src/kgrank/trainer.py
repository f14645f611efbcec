"""Negative-sampling SGD for the triplet embedding models."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import sparse

from .core import TripletStore
from .models import EmbeddingTable, GeometryConfig, get_model

logger = logging.getLogger(__name__)


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    geometry: GeometryConfig
    batch_size: int = 1000
    lr: float = 0.1
    lrd_step: int = 100_000
    neg_sample_size: int = 64
    adversarial_temperature: float = 1.0
    epochs: int = 1
    max_steps: Optional[int] = None
    seed: int = 0
    dtype: str = "float32"
    row_normalize: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.neg_sample_size < 1 or self.lrd_step < 1:
            raise ValueError("batch_size, neg_sample_size and lrd_step must be positive")
        if self.lr < 0 or self.adversarial_temperature < 0:
            raise ValueError("lr and adversarial_temperature must be non-negative")
        if self.epochs < 1 or (self.max_steps is not None and self.max_steps < 1):
            raise ValueError("epochs and max_steps must be positive")


@dataclass
class NegativeBatch:
    positives: np.ndarray
    corrupted_side: str
    negatives: np.ndarray


@dataclass
class GradientReport:
    model_kind: str
    max_rel_error: float
    n_params: int
    tolerance: float
    worst: tuple = field(default=())

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def sample_negatives(store: TripletStore, batch, side: str, config: TrainConfig,
                     rng: np.random.Generator) -> NegativeBatch:
    """Uniform entity corruption of ``side`` ("head" or "tail") for every positive."""
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 3)
    if len(batch) == 0:
        raise ValueError("empty batch")
    n_ent = store.vocab.entity_count
    if n_ent < 1:
        raise ValueError("empty entity vocabulary")
    if side not in ("head", "tail"):
        raise ValueError("side must be 'head' or 'tail'")
    neg = rng.integers(0, n_ent, size=(len(batch), config.neg_sample_size), dtype=np.int64)
    return NegativeBatch(batch, side, neg)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return np.exp(-_softplus(-x))


def _adversarial_weights(neg_scores, temperature):
    z = temperature * neg_scores
    z = z - z.max(axis=-1, keepdims=True)
    w = np.exp(z)
    return w / w.sum(axis=-1, keepdims=True)


def loss_self_adversarial(pos_score, neg_scores, config=None, temperature=None):
    """Logistic loss with softmax-weighted negatives.

    Returns ``(loss, weights)``; weights are constants w.r.t. the gradient.
    """
    if temperature is None:
        temperature = config.adversarial_temperature if config is not None else 1.0
    pos = np.float64(pos_score)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if not (np.isfinite(pos) and np.isfinite(neg).all()):
        raise ValueError("non-finite score")
    w = _adversarial_weights(neg, temperature)
    loss = _softplus(-pos) + np.sum(w * _softplus(neg))
    return float(loss), w


def init_table(geometry: GeometryConfig, entity_count: int, relation_count: int,
               rng: np.random.Generator, dtype="float32") -> EmbeddingTable:
    bound = 6.0 / np.sqrt(geometry.hidden_size)
    ent = rng.uniform(-bound, bound, size=(entity_count, geometry.entity_dim))
    rel = rng.uniform(-bound, bound, size=(relation_count, geometry.relation_dim))
    if geometry.model_kind == "NOTE":
        k, ds = geometry.blocks, geometry.ote_size
        mats = np.eye(ds) + rng.uniform(-0.1, 0.1, size=(relation_count, k, ds, ds))
        rel[:, : k * ds * ds] = mats.reshape(relation_count, -1)
    return EmbeddingTable(ent.astype(dtype), rel.astype(dtype), geometry)


def batch_loss_grads(model, table, positives, negatives, side, temperature, weights=None):
    """Mean loss of one corrupted batch and its gradients.

    Returns ``(loss, (ent_idx, ent_grad), (rel_idx, rel_grad), weights)``
    with index arrays that may repeat.
    """
    h, r, t = positives.T
    if side == "tail":
        anchor, mode, true_c = h, "tail", t
    else:
        anchor, mode, true_c = t, "head", h
    b = len(positives)
    q, cache = model.query(table, anchor, r, mode)
    cand_ids = np.concatenate([true_c[:, None], negatives], axis=1)
    cand = table.entity_matrix[cand_ids]
    scores, match_backward = model.match_grad(q, cand)
    pos, neg = scores[:, 0], scores[:, 1:]
    if not np.isfinite(scores).all():
        raise TrainingDivergedError("non-finite score during training")
    if weights is None:
        weights = _adversarial_weights(neg, temperature)
    loss = _softplus(-pos) + np.sum(weights * _softplus(neg), axis=1)
    g = np.empty_like(scores)
    g[:, 0] = -_sigmoid(-pos)
    g[:, 1:] = weights * _sigmoid(neg)
    g /= b
    gq, gcand = match_backward(g)
    g_anchor, rel_idx, g_rel = model.query_backward(table, cache, gq)
    ent_idx = np.concatenate([anchor, cand_ids.ravel()])
    ent_grad = np.concatenate([g_anchor, gcand.reshape(-1, gcand.shape[-1])])
    return float(loss.mean()), (ent_idx, ent_grad), (rel_idx, g_rel), weights


def train_step(model, table, store, positives, config: TrainConfig, rng, lr):
    """One SGD step over head- and tail-corrupted negatives; returns the loss.

    Per-example gradients are summed per row. With ``row_normalize`` each
    row's sum is divided by the number of positive slots (anchor or true
    candidate) it fills in this step, so hub rows and relations take an
    averaged step instead of one scaled by their batch frequency.
    """
    b = len(positives)
    ent_idx, ent_grad, rel_idx, rel_grad, losses = [], [], [], [], []
    for side in ("tail", "head"):
        nb = sample_negatives(store, positives, side, config, rng)
        loss, (ei, eg), (ri, rg), _ = batch_loss_grads(
            model, table, positives, nb.negatives, side, config.adversarial_temperature
        )
        losses.append(loss)
        ent_idx.append(ei)
        ent_grad.append(eg)
        rel_idx.append(ri)
        rel_grad.append(rg)
    scale = np.asarray(0.5 * b, dtype=table.entity_matrix.dtype)
    ue, ge = _scatter(np.concatenate(ent_idx), np.concatenate(ent_grad) * scale)
    ur, gr = _scatter(np.concatenate(rel_idx), np.concatenate(rel_grad) * scale)
    if config.row_normalize:
        ent_slots = np.bincount(positives[:, [0, 2]].ravel(), minlength=table.entity_count)
        rel_slots = np.bincount(positives[:, 1], minlength=table.relation_count)
        ge /= np.maximum(ent_slots[ue], 1)[:, None].astype(ge.dtype)
        gr /= np.maximum(rel_slots[ur], 1)[:, None].astype(gr.dtype)
    table.entity_matrix[ue] -= np.asarray(lr, dtype=ge.dtype) * ge
    table.relation_params[ur] -= np.asarray(lr, dtype=gr.dtype) * gr
    return 0.5 * (losses[0] + losses[1])


def _scatter(idx, grad):
    """Sum gradient rows sharing an index (one-hot sparse product, fixed order)."""
    uniq, inv = np.unique(idx, return_inverse=True)
    onehot = sparse.csr_matrix(
        (np.ones(len(idx), dtype=grad.dtype), (inv, np.arange(len(idx)))),
        shape=(len(uniq), len(idx)),
    )
    return uniq, np.asarray(onehot @ grad)


def train(store: TripletStore, config: TrainConfig,
          callback: Optional[Callable[[int, float, float], None]] = None,
          init: Optional[EmbeddingTable] = None) -> EmbeddingTable:
    """Mini-batch SGD over shuffled triples with sparse row updates.

    ``callback(epoch, mean_loss, elapsed_seconds)`` runs after every epoch.
    The learning rate halves every ``lrd_step`` steps.
    """
    if len(store) == 0:
        raise ValueError("cannot train on an empty store")
    rng = np.random.default_rng(config.seed)
    table = init.copy() if init is not None else init_table(
        config.geometry, store.vocab.entity_count, store.vocab.relation_count, rng, config.dtype
    )
    model = get_model(config.geometry)
    triples = store.triples
    step = 0
    start = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(triples))
        total, n = 0.0, 0
        for s in range(0, len(order), config.batch_size):
            if config.max_steps is not None and step >= config.max_steps:
                break
            lr = config.lr * 0.5 ** (step // config.lrd_step)
            batch = triples[order[s: s + config.batch_size]]
            loss = train_step(model, table, store, batch, config, rng, lr)
            total += loss
            n += 1
            step += 1
            if not np.isfinite(total):
                raise TrainingDivergedError(f"loss became non-finite at step {step}")
        mean = total / max(n, 1)
        elapsed = time.perf_counter() - start
        logger.info("epoch %d loss %.6f (%.1fs)", epoch, mean, elapsed)
        if callback is not None:
            callback(epoch, mean, elapsed)
        if config.max_steps is not None and step >= config.max_steps:
            break
    return table


def gradient_check(model_kind, sample, table: EmbeddingTable, tolerance: float,
                   side: str = "tail", temperature: float = 1.0, step: float = 1e-5) -> GradientReport:
    """Compare analytic loss gradients with central finite differences.

    ``sample`` is ``(h, r, t, negatives)``. Runs in float64; the
    adversarial weights are frozen at the unperturbed point, matching the
    analytic gradient which treats them as constants.
    """
    if table.geometry.model_kind != model_kind:
        raise ValueError(f"table is {table.geometry.model_kind}, not {model_kind}")
    table = table.astype(np.float64)
    model = get_model(table.geometry)
    h, r, t, negatives = sample
    pos = np.array([[h, r, t]], dtype=np.int64)
    negs = np.asarray(negatives, dtype=np.int64).reshape(1, -1)
    _, (ei, eg), (ri, rg), w = batch_loss_grads(model, table, pos, negs, side, temperature)
    ue, ge = _scatter(ei, eg)
    ur, gr = _scatter(ri, rg)

    def loss_at():
        return batch_loss_grads(model, table, pos, negs, side, temperature, weights=w)[0]

    worst, worst_at, count = 0.0, (), 0
    for name, matrix, rows, grads in (
        ("entity", table.entity_matrix, ue, ge),
        ("relation", table.relation_params, ur, gr),
    ):
        for row, grow in zip(rows, grads):
            for col in range(matrix.shape[1]):
                orig = matrix[row, col]
                matrix[row, col] = orig + step
                up = loss_at()
                matrix[row, col] = orig - step
                down = loss_at()
                matrix[row, col] = orig
                numeric = (up - down) / (2 * step)
                err = abs(grow[col] - numeric) / max(1.0, abs(numeric))
                count += 1
                if err > worst:
                    worst, worst_at = err, (name, int(row), col)
    return GradientReport(model_kind, worst, count, tolerance, worst_at)
