"""Prototype classification and pairwise ranking losses with analytic gradients.

The ``*_kernel`` functions work on stacked arrays (leading batch axis) and are
what training uses; the per-item functions wrap them for single examples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateVectorError, DimensionError, InputError, NumericalError
from .linalg import as_vector


@dataclass(frozen=True)
class LossConfig:
    T: float = 0.25
    alpha: float = 10.0
    lam: float = 0.25

    def __post_init__(self):
        if not self.T > 0:
            raise InputError(f"temperature must be positive, got {self.T}")
        if not self.alpha > 0:
            raise InputError(f"alpha must be positive, got {self.alpha}")
        if not self.lam >= 0:
            raise InputError(f"lambda must be non-negative, got {self.lam}")


@dataclass
class ClassificationBatch:
    """Row 0 of ``prototypes`` is the target property, the rest are negatives."""

    prototypes: np.ndarray
    centroid: np.ndarray
    temperature: float = 0.25

    def __post_init__(self):
        self.prototypes = np.asarray(self.prototypes, dtype=np.float64)
        self.centroid = as_vector(self.centroid)
        if self.prototypes.ndim != 2 or self.prototypes.shape[0] < 2:
            raise DimensionError("prototypes must be a (k, d) array with k >= 2")
        if self.prototypes.shape[1] != self.centroid.size:
            raise DimensionError("prototype and centroid dimensions differ")
        if not self.temperature > 0:
            raise InputError("temperature must be positive")


@dataclass
class ClassificationGrads:
    prototypes: np.ndarray
    centroid: np.ndarray


@dataclass
class RankBatchItem:
    e1: np.ndarray
    e2: np.ndarray
    f: np.ndarray
    y: int
    alpha: float = 10.0

    def __post_init__(self):
        self.e1, self.e2, self.f = as_vector(self.e1), as_vector(self.e2), as_vector(self.f)
        if not (self.e1.size == self.e2.size == self.f.size):
            raise DimensionError("ranking vectors must share one dimension")
        if self.y not in (-1, 1):
            raise InputError(f"y must be -1 or +1, got {self.y}")
        if not self.alpha > 0:
            raise InputError("alpha must be positive")


@dataclass
class RankGrads:
    e1: np.ndarray
    e2: np.ndarray
    f: np.ndarray


@dataclass
class CombinedGrads:
    classification: list[ClassificationGrads] = field(default_factory=list)
    ranking: list[RankGrads] = field(default_factory=list)


def sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def classification_kernel(protos: np.ndarray, cents: np.ndarray, T: float):
    """Softmax loss over prototype-centroid logits.

    ``protos`` is (B, k, d) with the target at index 0, ``cents`` is (B, d).
    Returns per-batch losses (B,), gradients for ``protos`` and ``cents``.
    """
    logits = np.einsum("bkd,bd->bk", protos, cents) / T
    if not np.all(np.isfinite(logits)):
        raise NumericalError("non-finite classification logits")
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    losses = lse - shifted[:, 0]
    coef = np.exp(shifted - lse[:, None])
    coef[:, 0] -= 1.0
    g_protos = coef[:, :, None] * cents[:, None, :] / T
    g_cents = np.einsum("bk,bkd->bd", coef, protos) / T
    return losses, g_protos, g_cents


def ranking_kernel(e1: np.ndarray, e2: np.ndarray, f: np.ndarray, y: np.ndarray, alpha):
    """``sigmoid(-alpha * y * (e1 - e2) . f)`` for stacked (B, d) inputs."""
    diff = e1 - e2
    x = -alpha * y * np.einsum("bd,bd->b", diff, f)
    losses = sigmoid(x)
    gx = losses * (1.0 - losses) * (-alpha * y)
    g_e1 = gx[:, None] * f
    return losses, g_e1, -g_e1, gx[:, None] * diff


def normalize_rows_backprop(u: np.ndarray, upstream: np.ndarray):
    """Row-wise ``u / |u|`` and the gradient pulled back through it."""
    norms = np.linalg.norm(u, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateVectorError("cannot normalize a zero vector")
    unit = u / norms
    radial = np.sum(unit * upstream, axis=-1, keepdims=True)
    return unit, (upstream - unit * radial) / norms


def centroid(entities) -> np.ndarray:
    """Plain mean of the entity embeddings (not re-normalized)."""
    arr = np.asarray(entities, dtype=np.float64)
    if arr.size == 0 or len(arr) == 0:
        raise InputError("centroid of an empty set")
    if arr.ndim != 2:
        raise DimensionError("entity embeddings must share one dimension")
    return arr.mean(axis=0)


def classification_loss(batch: ClassificationBatch) -> tuple[float, ClassificationGrads]:
    losses, gp, gc = classification_kernel(batch.prototypes[None], batch.centroid[None], batch.temperature)
    return float(losses[0]), ClassificationGrads(gp[0], gc[0])


def ranking_loss(item: RankBatchItem) -> tuple[float, RankGrads]:
    losses, g1, g2, gf = ranking_kernel(
        item.e1[None], item.e2[None], item.f[None], np.array([float(item.y)]), item.alpha
    )
    return float(losses[0]), RankGrads(g1[0], g2[0], gf[0])


def combined_loss(class_batches, rank_items, cfg: LossConfig = LossConfig()):
    """``mean(classification) + lam * mean(ranking)``; an empty list contributes 0.

    Temperature and alpha are taken from the batches themselves; ``cfg`` only
    supplies the mixing weight.
    """
    class_batches, rank_items = list(class_batches), list(rank_items)
    if not class_batches and not rank_items:
        raise InputError("combined loss needs classification batches or rank items")
    grads = CombinedGrads()
    l1 = l2 = 0.0
    if class_batches:
        w = 1.0 / len(class_batches)
        parts = [classification_loss(b) for b in class_batches]
        l1 = float(np.mean([p[0] for p in parts]))
        grads.classification = [ClassificationGrads(g.prototypes * w, g.centroid * w) for _, g in parts]
    if rank_items:
        w = cfg.lam / len(rank_items)
        parts = [ranking_loss(r) for r in rank_items]
        l2 = float(np.mean([p[0] for p in parts]))
        grads.ranking = [RankGrads(g.e1 * w, g.e2 * w, g.f * w) for _, g in parts]
    return l1 + cfg.lam * l2, grads


def normalize_with_backprop(v, upstream):
    v, upstream = as_vector(v), as_vector(upstream)
    if v.size != upstream.size:
        raise DimensionError("vector and upstream gradient dimensions differ")
    unit, grad = normalize_rows_backprop(v[None], upstream[None])
    return unit[0], grad[0]
