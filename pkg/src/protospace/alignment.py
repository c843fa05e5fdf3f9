"""Alignment adapter training and the orthogonal Procrustes baseline.

The adapter is a square matrix ``W`` applied as ``W @ v`` to prototype
embeddings (and, with ``scope="shared"``, to entity embeddings too),
followed by re-normalization. Training minimizes
``mean(classification) + lam * mean(ranking)`` with Adam.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .corpus import ClassificationItem, EmbeddingStore, RankPair
from .errors import ConfigError, DimensionError, InputError, NumericalError
from .linalg import as_matrix, as_vector, svd
from .objectives import LossConfig, classification_kernel, normalize_rows_backprop, ranking_kernel

log = logging.getLogger(__name__)

SCOPES = ("prototypes-only", "shared")
MODES = ("pretrained", "classification", "rank-perc", "rank-full", "class+rank-perc", "class+rank-full")
INIT_EPS = 1e-3
GRAD_FLOOR = 1e-5


def mode_uses_classification(mode: str) -> bool:
    return mode in ("classification", "class+rank-perc", "class+rank-full")


def mode_uses_ranking(mode: str) -> bool:
    return mode.startswith("rank") or mode.startswith("class+rank")


@dataclass
class AlignmentAdapter:
    W: np.ndarray
    scope: str = "prototypes-only"
    renormalize: bool = True

    def __post_init__(self):
        self.W = as_matrix(self.W)
        if self.W.shape[0] != self.W.shape[1]:
            raise DimensionError(f"adapter matrix must be square, got {self.W.shape}")
        if self.scope not in SCOPES:
            raise ConfigError(f"unknown adapter scope {self.scope!r}")

    @property
    def dim(self) -> int:
        return self.W.shape[0]

    def maps(self, side: str) -> bool:
        if side not in ("entity", "prototype"):
            raise InputError(f"side must be 'entity' or 'prototype', got {side!r}")
        return side == "prototype" or self.scope == "shared"

    def forward_rows(self, x: np.ndarray, side: str) -> np.ndarray:
        """Vectorized ``forward`` over the rows of ``x``."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise DimensionError(f"vector dimension {x.shape[-1]} does not match adapter dimension {self.dim}")
        if not self.maps(side):
            return x
        out = x @ self.W.T
        if self.renormalize:
            out = out / np.linalg.norm(out, axis=-1, keepdims=True)
        return out

    def to_json(self) -> dict:
        return {"dim": self.dim, "scope": self.scope, "renormalize": self.renormalize, "W": self.W.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "AlignmentAdapter":
        adapter = cls(np.array(data["W"], dtype=np.float64), data.get("scope", "prototypes-only"),
                      bool(data.get("renormalize", True)))
        if adapter.dim != data.get("dim", adapter.dim):
            raise DimensionError("adapter 'dim' disagrees with the matrix shape")
        return adapter

    def serialize(self) -> str:
        return json.dumps(self.to_json()) + "\n"

    def sha256(self) -> str:
        return hashlib.sha256(self.serialize().encode("utf-8")).hexdigest()


def identity_adapter(d: int, scope: str = "prototypes-only") -> AlignmentAdapter:
    return AlignmentAdapter(np.eye(d), scope)


def save_adapter(adapter: AlignmentAdapter, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(adapter.serialize())


def load_adapter(path) -> AlignmentAdapter:
    with open(path, encoding="utf-8") as fh:
        return AlignmentAdapter.from_json(json.load(fh))


def init_adapter(d: int, scope: str = "prototypes-only", seed: int = 0, eps: float = INIT_EPS,
                 renormalize: bool = True) -> AlignmentAdapter:
    """Near-identity start ``I + eps * G`` with seeded standard normal ``G``."""
    if d < 1:
        raise InputError("adapter dimension must be positive")
    g = np.random.default_rng(seed).standard_normal((d, d))
    return AlignmentAdapter(np.eye(d) + eps * g, scope, renormalize)


def forward(adapter: AlignmentAdapter, v, side: str) -> np.ndarray:
    return adapter.forward_rows(as_vector(v)[None], side)[0]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 16
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    mode: str = "class+rank-perc"
    early_stop_patience: int = 20
    val_fraction: float = 0.1
    orthogonalize: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")


@dataclass
class TrainTrace:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    best_epoch: Optional[int] = None
    stopped_early: bool = False

    def __len__(self) -> int:
        return len(self.train_loss)

    def to_csv(self, path, header: Optional[str] = None) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "train_loss", "val_loss", "grad_norm"])
            for i, row in enumerate(zip(self.train_loss, self.val_loss, self.grad_norm), start=1):
                writer.writerow([i, *(repr(float(x)) for x in row)])


class TrainingProblem:
    """Supervision compiled into index arrays over two embedding tables.

    Prototype rows go through the adapter; entity rows only under the shared
    scope. ``prototype_ids`` maps a rank-pair dimension to the store id of its
    prototype description (identity by default).
    """

    def __init__(self, class_items: Sequence[ClassificationItem], rank_pairs: Sequence[RankPair],
                 store: EmbeddingStore, prototype_ids: Optional[dict[str, str]] = None):
        prototype_ids = prototype_ids or {}
        proto_index: dict[str, int] = {}
        ent_index: dict[str, int] = {}

        def idx(table, key):
            store[key]  # raises MissingEmbeddingError with the offending id
            return table.setdefault(key, len(table))

        self.n_class = len(class_items)
        self.class_protos = []
        self.class_members = []
        for item in class_items:
            self.class_protos.append([idx(proto_index, s) for s in (item.target, *item.negatives)])
            self.class_members.append([idx(ent_index, s) for s in item.examples])

        self.n_rank = len(rank_pairs)
        self.rank_a = np.array([idx(ent_index, p.item_a) for p in rank_pairs], dtype=np.intp)
        self.rank_b = np.array([idx(ent_index, p.item_b) for p in rank_pairs], dtype=np.intp)
        self.rank_f = np.array([idx(proto_index, prototype_ids.get(p.dimension, p.dimension))
                                for p in rank_pairs], dtype=np.intp)
        self.rank_y = np.array([float(p.label) for p in rank_pairs])

        self.P = store.matrix(proto_index)
        self.E = store.matrix(ent_index)
        self.proto_ids = list(proto_index)
        self.entity_ids = list(ent_index)

    def loss_and_grad(self, adapter: AlignmentAdapter, loss_cfg: LossConfig,
                      class_sel=None, rank_sel=None, need_grad: bool = True):
        """Combined loss over the selected items and its gradient w.r.t. ``adapter.W``."""
        class_sel = np.arange(self.n_class) if class_sel is None else np.asarray(class_sel, dtype=np.intp)
        rank_sel = np.arange(self.n_rank) if rank_sel is None else np.asarray(rank_sel, dtype=np.intp)
        if class_sel.size == 0 and rank_sel.size == 0:
            raise InputError("no supervision selected")
        W = adapter.W
        shared = adapter.scope == "shared"

        cls_protos = [self.class_protos[i] for i in class_sel]
        cls_members = [self.class_members[i] for i in class_sel]
        p_used = np.unique(np.concatenate([np.concatenate(cls_protos) if cls_protos else [],
                                           self.rank_f[rank_sel]]).astype(np.intp))
        e_used = np.unique(np.concatenate([np.concatenate(cls_members) if cls_members else [],
                                           self.rank_a[rank_sel], self.rank_b[rank_sel]]).astype(np.intp))
        p_loc = np.full(len(self.P), -1, dtype=np.intp)
        p_loc[p_used] = np.arange(p_used.size)
        e_loc = np.full(len(self.E), -1, dtype=np.intp)
        e_loc[e_used] = np.arange(e_used.size)

        p_in = self.P[p_used]
        e_in = self.E[e_used]
        p_pre = p_in @ W.T
        # a collapsed W gives 0/0 here; the non-finite check below reports it
        with np.errstate(invalid="ignore", divide="ignore"):
            p_out = p_pre / np.linalg.norm(p_pre, axis=1, keepdims=True) if adapter.renormalize else p_pre
            if shared:
                e_pre = e_in @ W.T
                e_out = e_pre / np.linalg.norm(e_pre, axis=1, keepdims=True) if adapter.renormalize else e_pre
            else:
                e_out = e_in
        g_p = np.zeros_like(p_out)
        g_e = np.zeros_like(e_out)

        total = 0.0
        if class_sel.size:
            w = 1.0 / class_sel.size
            # relaxed datasets may mix negative counts; group by prototype count
            by_k: dict[int, list[int]] = {}
            for j, protos in enumerate(cls_protos):
                by_k.setdefault(len(protos), []).append(j)
            member_w = np.zeros((class_sel.size, e_used.size))
            for j, members in enumerate(cls_members):
                np.add.at(member_w[j], e_loc[members], 1.0 / len(members))
            cents = member_w @ e_out
            g_c = np.zeros_like(cents)
            for k, rows in by_k.items():
                pidx = p_loc[np.array([cls_protos[j] for j in rows])]
                losses, gp, gc = classification_kernel(p_out[pidx], cents[rows], loss_cfg.T)
                total += w * float(losses.sum())
                np.add.at(g_p, pidx, w * gp)
                g_c[rows] += w * gc
            if shared:
                g_e += member_w.T @ g_c
        if rank_sel.size:
            w = loss_cfg.lam / rank_sel.size
            a, b, f = e_loc[self.rank_a[rank_sel]], e_loc[self.rank_b[rank_sel]], p_loc[self.rank_f[rank_sel]]
            losses, g1, g2, gf = ranking_kernel(e_out[a], e_out[b], p_out[f], self.rank_y[rank_sel], loss_cfg.alpha)
            total += w * float(losses.sum())
            np.add.at(g_p, f, w * gf)
            if shared:
                np.add.at(g_e, a, w * g1)
                np.add.at(g_e, b, w * g2)

        if not math.isfinite(total):
            raise NumericalError("non-finite training loss")
        if not need_grad:
            return total, None
        if adapter.renormalize:
            _, g_p = normalize_rows_backprop(p_pre, g_p)
        grad = g_p.T @ p_in
        if shared:
            if adapter.renormalize:
                _, g_e = normalize_rows_backprop(e_pre, g_e)
            grad += g_e.T @ e_in
        return total, grad


def _check_mode_data(mode: str, class_items, rank_pairs) -> None:
    if mode == "pretrained":
        return
    if mode_uses_classification(mode) and not class_items:
        raise ConfigError(f"mode {mode!r} needs classification items")
    if mode_uses_ranking(mode) and not rank_pairs:
        raise ConfigError(f"mode {mode!r} needs rank pairs")


def _split(n: int, fraction: float, rng: np.random.Generator):
    perm = rng.permutation(n)
    n_val = int(math.floor(fraction * n)) if n > 1 else 0
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def orthogonalize(W: np.ndarray) -> np.ndarray:
    q, r = np.linalg.qr(W)
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def train(adapter: AlignmentAdapter, class_items: Sequence[ClassificationItem], rank_pairs: Sequence[RankPair],
          store: EmbeddingStore, cfg: TrainConfig, prototype_ids: Optional[dict[str, str]] = None,
          on_epoch=None) -> tuple[AlignmentAdapter, TrainTrace]:
    """Fit the adapter with Adam; returns a new adapter and the loss trace.

    Classification items and rank pairs are shuffled together each epoch and
    cut into mini-batches, so both kinds appear in proportion to their counts;
    a batch's loss is its classification mean plus ``lam`` times its ranking
    mean. 10% of each stream is held out for early stopping, and the
    adapter with the best validation loss is returned.
    """
    if cfg.mode == "pretrained":
        return replace(adapter, W=adapter.W.copy()), TrainTrace()
    class_items = list(class_items) if mode_uses_classification(cfg.mode) else []
    rank_pairs = list(rank_pairs) if mode_uses_ranking(cfg.mode) else []
    _check_mode_data(cfg.mode, class_items, rank_pairs)

    problem = TrainingProblem(class_items, rank_pairs, store, prototype_ids)
    if problem.P.shape[1] != adapter.dim:
        raise DimensionError(f"embeddings have dimension {problem.P.shape[1]}, adapter {adapter.dim}")
    rng = np.random.default_rng(cfg.seed)
    c_train, c_val = _split(problem.n_class, cfg.val_fraction, rng)
    r_train, r_val = _split(problem.n_rank, cfg.val_fraction, rng)
    has_val = c_val.size > 0 or r_val.size > 0

    # positions < n_c index c_train, the rest index r_train
    n_c = c_train.size
    pool_size = n_c + r_train.size
    steps = math.ceil(pool_size / cfg.batch_size)

    current = replace(adapter, W=adapter.W.copy())
    m = np.zeros_like(current.W)
    v = np.zeros_like(current.W)
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
    t = 0
    trace = TrainTrace()
    best_val, best_W, since_best = math.inf, current.W.copy(), 0

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(pool_size)
        for step in range(steps):
            batch = order[step * cfg.batch_size : (step + 1) * cfg.batch_size]
            c_batch, r_batch = c_train[batch[batch < n_c]], r_train[batch[batch >= n_c] - n_c]
            try:
                _, grad = problem.loss_and_grad(current, cfg.loss, c_batch, r_batch)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch}: {exc}") from None
            t += 1
            m = beta1 * m + (1 - beta1) * grad
            v = beta2 * v + (1 - beta2) * grad * grad
            m_hat = m / (1 - beta1**t)
            v_hat = v / (1 - beta2**t)
            current.W = current.W - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + adam_eps)

        train_loss, grad = problem.loss_and_grad(current, cfg.loss, c_train, r_train)
        val_loss = (problem.loss_and_grad(current, cfg.loss, c_val, r_val, need_grad=False)[0]
                    if has_val else math.nan)
        if not np.all(np.isfinite(current.W)):
            raise NumericalError(f"epoch {epoch}: adapter diverged")
        trace.train_loss.append(train_loss)
        trace.val_loss.append(val_loss)
        trace.grad_norm.append(float(np.linalg.norm(grad)))
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val_loss, trace.grad_norm[-1])

        if has_val:
            if val_loss < best_val:
                best_val, best_W, since_best = val_loss, current.W.copy(), 0
                trace.best_epoch = epoch
            else:
                since_best += 1
                if since_best >= cfg.early_stop_patience:
                    trace.stopped_early = True
                    log.info("early stop at epoch %d (best %d)", epoch, trace.best_epoch)
                    break

    if has_val:
        current.W = best_W
    if cfg.orthogonalize:
        current.W = orthogonalize(current.W)
    return current, trace


def procrustes(P, C) -> np.ndarray:
    """Orthogonal ``W`` minimizing ``||P @ W - C||_F`` (rows are vectors).

    With ``svd(C.T @ P) = U diag(S) V.T`` the minimizer is ``V @ U.T``.
    """
    P, C = as_matrix(P), as_matrix(C)
    if P.shape != C.shape:
        raise DimensionError(f"P is {P.shape} but C is {C.shape}")
    U, _, V = svd(C.T @ P)
    return V @ U.T


def procrustes_adapter(P, C) -> AlignmentAdapter:
    """Procrustes solution wrapped as an adapter (column convention: ``W.T @ p``)."""
    return AlignmentAdapter(procrustes(P, C).T, "prototypes-only", renormalize=True)


def relative_error(analytic, numeric, floor: float = GRAD_FLOOR):
    """``|a - n| / max(|a|, |n|, floor)`` elementwise."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def grad_check(adapter: AlignmentAdapter, class_items, rank_pairs, store: EmbeddingStore, eps: float = 1e-6,
               cfg: Optional[TrainConfig] = None, prototype_ids=None, n_entries: int = 64, seed: int = 0) -> float:
    """Largest relative error between analytic dL/dW and central differences."""
    cfg = cfg or TrainConfig(mode="class+rank-full")
    if cfg.mode == "pretrained":
        raise ConfigError("nothing to check in pretrained mode")
    class_items = list(class_items) if mode_uses_classification(cfg.mode) else []
    rank_pairs = list(rank_pairs) if mode_uses_ranking(cfg.mode) else []
    _check_mode_data(cfg.mode, class_items, rank_pairs)
    problem = TrainingProblem(class_items, rank_pairs, store, prototype_ids)
    _, grad = problem.loss_and_grad(adapter, cfg.loss)

    d = adapter.dim
    flat = np.arange(d * d)
    if flat.size > n_entries:
        flat = np.sort(np.random.default_rng(seed).choice(flat, size=n_entries, replace=False))
    worst = 0.0
    probe = replace(adapter, W=adapter.W.copy())
    for k in flat:
        i, j = divmod(int(k), d)
        orig = probe.W[i, j]
        probe.W[i, j] = orig + eps
        up = problem.loss_and_grad(probe, cfg.loss, need_grad=False)[0]
        probe.W[i, j] = orig - eps
        down = problem.loss_and_grad(probe, cfg.loss, need_grad=False)[0]
        probe.W[i, j] = orig
        worst = max(worst, float(relative_error(grad[i, j], (up - down) / (2 * eps))))
    return worst
