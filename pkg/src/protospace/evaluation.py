"""Pairwise-accuracy evaluation, correlation, significance and leave-one-out runs."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from .alignment import (
    AlignmentAdapter,
    TrainConfig,
    identity_adapter,
    init_adapter,
    mode_uses_classification,
    mode_uses_ranking,
    train,
)
from .corpus import ClassificationItem, EmbeddingStore, FeaturePrototype, RankPair, RatingsTable
from .errors import (
    AuditError,
    ConfigError,
    DegenerateInputError,
    EmptyJoinError,
    EmptyPairSetError,
    InputError,
    MissingEmbeddingError,
)
from .scoring import TIE_TOL, ScoredEntity, prototype_direction, score_ids

log = logging.getLogger(__name__)

DEFAULT_MAX_PAIRS = 340

Scorer = Union[Mapping[str, float], Callable[[str], float]]


def generate_pairs(table: RatingsTable, dimension: str, min_gap: float = 0.0,
                   max_pairs: Optional[int] = DEFAULT_MAX_PAIRS, seed: int = 0) -> list[RankPair]:
    """All item pairs whose ratings differ by more than ``min_gap``.

    Pairs are oriented with ``item_a < item_b`` and labelled +1 when ``item_a``
    has the higher rating. More than ``max_pairs`` pairs are subsampled
    uniformly with ``seed``, keeping the lexicographic order.
    """
    if min_gap < 0:
        raise InputError("min_gap must be non-negative")
    column = table.column(dimension)
    if not column:
        raise InputError(f"dimension {dimension!r} has no ratings")
    items = sorted(column)
    pairs = []
    for i, a in enumerate(items):
        for b in items[i + 1 :]:
            gap = column[a] - column[b]
            if abs(gap) > min_gap:
                pairs.append(RankPair(a, b, dimension, 1 if gap > 0 else -1))
    if not pairs:
        raise EmptyPairSetError(f"no pairs on {dimension!r} differ by more than {min_gap}")
    if max_pairs is not None and len(pairs) > max_pairs:
        keep = np.sort(np.random.default_rng(seed).choice(len(pairs), size=max_pairs, replace=False))
        pairs = [pairs[k] for k in keep]
    return pairs


def _lookup(scorer: Scorer, item: str) -> float:
    try:
        return float(scorer[item]) if isinstance(scorer, Mapping) else float(scorer(item))
    except KeyError:
        raise MissingEmbeddingError(f"no score for item {item!r}") from None


def pairwise_accuracy(pairs: Sequence[RankPair], scorer: Scorer, tie_credit: bool = False,
                      tie_tol: float = TIE_TOL) -> tuple[float, list[bool]]:
    """Fraction of pairs ordered as labelled.

    Score differences within ``tie_tol`` count as wrong, or as half right
    with ``tie_credit``. The per-pair outcomes (ties are False) feed McNemar.
    """
    if not pairs:
        raise EmptyPairSetError("no pairs to evaluate")
    outcomes = []
    credit = 0.0
    for p in pairs:
        delta = _lookup(scorer, p.item_a) - _lookup(scorer, p.item_b)
        if abs(delta) <= tie_tol:
            outcomes.append(False)
            credit += 0.5 if tie_credit else 0.0
            continue
        ok = (delta > 0) == (p.label > 0)
        outcomes.append(ok)
        credit += ok
    return credit / len(pairs), outcomes


def pearson(xs, ys) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InputError("pearson needs two equal-length 1-D sequences")
    if x.size < 2:
        raise InputError("pearson needs at least 2 observations")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = dx @ dx, dy @ dy
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateInputError("pearson correlation of a constant sequence")
    return float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))


@dataclass(frozen=True)
class McNemarResult:
    n10: int
    n01: int
    p_value: float


def mcnemar_exact(n10: int, n01: int) -> McNemarResult:
    """Exact two-sided McNemar test on the discordant counts."""
    if n10 < 0 or n01 < 0:
        raise InputError("discordant counts must be non-negative")
    n = n10 + n01
    if n == 0:
        return McNemarResult(n10, n01, 1.0)
    tail = Fraction(sum(math.comb(n, i) for i in range(min(n10, n01) + 1)), 2**n)
    return McNemarResult(n10, n01, float(min(Fraction(1), 2 * tail)))


def mcnemar(outcomes_a: Sequence[bool], outcomes_b: Sequence[bool]) -> McNemarResult:
    if len(outcomes_a) != len(outcomes_b):
        raise InputError(f"outcome lists differ in length ({len(outcomes_a)} vs {len(outcomes_b)})")
    if not outcomes_a:
        raise InputError("no outcomes to compare")
    n10 = sum(1 for a, b in zip(outcomes_a, outcomes_b) if a and not b)
    n01 = sum(1 for a, b in zip(outcomes_a, outcomes_b) if b and not a)
    return mcnemar_exact(n10, n01)


@dataclass
class DimensionResult:
    name: str
    pairs: int
    accuracy: float
    pearson: Optional[float]
    outcomes: list[bool] = field(default_factory=list, repr=False)


@dataclass
class EvalReport:
    dataset: str
    mode: str
    seed: int
    adapter_sha256: str
    dimensions: list[DimensionResult]
    note: Optional[str] = None
    audit: list[str] = field(default_factory=list)

    @property
    def average_accuracy(self) -> float:
        return float(np.mean([d.accuracy for d in self.dimensions]))

    def to_json(self) -> dict:
        out = {
            "dataset": self.dataset,
            "mode": self.mode,
            "seed": self.seed,
            "adapter_sha256": self.adapter_sha256,
            "dimensions": [
                {"name": d.name, "pairs": d.pairs, "accuracy": d.accuracy, "pearson": d.pearson}
                for d in self.dimensions
            ],
            "average_accuracy": self.average_accuracy,
        }
        if self.note:
            out["note"] = self.note
        return out

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")


@dataclass
class Dataset:
    """A ratings collection plus its evaluation pairs and metadata.

    ``prototype_ids`` maps each dimension to the store id of its prototype
    description; dimensions missing from it are looked up under their own name.
    """

    name: str
    ratings: RatingsTable
    perceptual: bool = True
    pairs: Optional[list[RankPair]] = None
    prototype_ids: dict[str, str] = field(default_factory=dict)

    def prototype_id(self, dimension: str) -> str:
        return self.prototype_ids.get(dimension, dimension)

    def pair_set(self, min_gap: float = 0.0, max_pairs: Optional[int] = DEFAULT_MAX_PAIRS,
                 seed: int = 0) -> dict[str, list[RankPair]]:
        if self.pairs is not None:
            out: dict[str, list[RankPair]] = {}
            for p in self.pairs:
                out.setdefault(p.dimension, []).append(p)
            return out
        return {dim: generate_pairs(self.ratings, dim, min_gap, max_pairs, seed) for dim in self.ratings.dimensions()}


def evaluate_dimension(dimension: str, pairs: Sequence[RankPair], ratings: RatingsTable, prototype_id: str,
                       store: EmbeddingStore, adapter: Optional[AlignmentAdapter] = None,
                       tie_credit: bool = False) -> tuple[DimensionResult, list[ScoredEntity]]:
    direction = prototype_direction(FeaturePrototype(prototype_id, store.text(prototype_id)
                                                     if prototype_id in store else prototype_id), store, adapter)
    column = ratings.column(dimension)
    items = sorted(set(column) | {p.item_a for p in pairs} | {p.item_b for p in pairs})
    missing = [i for i in items if i not in store]
    if missing:
        raise MissingEmbeddingError(f"no embedding for item {missing[0]!r} ({len(missing)} missing)")
    scores = dict(zip(items, score_ids(items, direction, store, adapter).tolist()))
    acc, outcomes = pairwise_accuracy(pairs, scores, tie_credit=tie_credit)
    rated = sorted(column)
    try:
        r = pearson([scores[i] for i in rated], [column[i] for i in rated])
    except (DegenerateInputError, InputError):
        r = None
    scored = [ScoredEntity(i, scores[i]) for i in rated]
    return DimensionResult(dimension, len(pairs), acc, r, outcomes), scored


def evaluate_dataset(dataset: Dataset, store: EmbeddingStore, adapter: Optional[AlignmentAdapter] = None,
                     mode: str = "pretrained", seed: int = 0, min_gap: float = 0.0,
                     max_pairs: Optional[int] = DEFAULT_MAX_PAIRS, tie_credit: bool = False) -> EvalReport:
    note = None
    if adapter is None:
        adapter = identity_adapter(store.dim)
        note = "no adapter given; identity adapter assumed"
    results = []
    for dim, pairs in dataset.pair_set(min_gap, max_pairs, seed).items():
        res, _ = evaluate_dimension(dim, pairs, dataset.ratings, dataset.prototype_id(dim), store, adapter, tie_credit)
        results.append(res)
    return EvalReport(dataset.name, mode, seed, adapter.sha256(), results, note=note)


def leave_one_out(datasets: Sequence[Dataset], mode: str, store: EmbeddingStore,
                  class_items: Sequence[ClassificationItem] = (), train_cfg: Optional[TrainConfig] = None,
                  scope: str = "prototypes-only", min_gap: float = 0.0,
                  max_pairs: Optional[int] = DEFAULT_MAX_PAIRS, pair_seed: int = 0) -> list[EvalReport]:
    """Train on every other dataset, evaluate on the held-out one.

    ``rank-perc`` variants only train on perceptual datasets. Each report
    carries an audit trail; an evaluated pair reaching the training set
    raises AuditError.
    """
    if len(datasets) < 2:
        raise ConfigError("leave-one-out needs at least two datasets")
    names = [d.name for d in datasets]
    if len(set(names)) != len(names):
        raise ConfigError("dataset names must be unique")
    base_cfg = train_cfg or TrainConfig()
    cfg = TrainConfig(**{**base_cfg.__dict__, "mode": mode})
    if mode_uses_classification(mode) and not class_items:
        raise ConfigError(f"mode {mode!r} needs classification items")

    pair_sets = {d.name: d.pair_set(min_gap, max_pairs, pair_seed) for d in datasets}
    reports = []
    for held in datasets:
        eval_pairs = [p for ps in pair_sets[held.name].values() for p in ps]
        if mode.endswith("rank-perc"):
            sources = [d for d in datasets if d.name != held.name and d.perceptual]
        else:
            sources = [d for d in datasets if d.name != held.name]
        train_pairs: list[RankPair] = []
        proto_ids: dict[str, str] = {}
        if mode_uses_ranking(mode):
            for d in sources:
                for dim, ps in pair_sets[d.name].items():
                    pid = d.prototype_id(dim)
                    if proto_ids.setdefault(dim, pid) != pid:
                        raise ConfigError(f"dimension {dim!r} maps to different prototypes across datasets")
                    train_pairs.extend(ps)
            if not train_pairs:
                raise ConfigError(f"mode {mode!r} has no training datasets when holding out {held.name!r}")
        else:
            sources = []

        overlap = {p.key for p in train_pairs} & {p.key for p in eval_pairs}
        audit = [
            f"heldout={held.name} mode={mode} train_datasets={','.join(d.name for d in sources) or '-'} "
            f"train_pairs={len(train_pairs)} eval_pairs={len(eval_pairs)} overlap={len(overlap)}",
        ]
        if mode.endswith("rank-perc"):
            audit.append(f"heldout={held.name} perceptual_only={all(d.perceptual for d in sources)}")
        if overlap or any(d.name == held.name for d in sources):
            raise AuditError(f"evaluation pairs of {held.name!r} leaked into training: {sorted(overlap)[:3]}")
        audit.append(f"heldout={held.name} exclusion=PASS")
        for line in audit:
            log.info(line)

        if mode == "pretrained":
            adapter = identity_adapter(store.dim, scope)
        else:
            adapter, _ = train(init_adapter(store.dim, scope, cfg.seed), class_items, train_pairs, store, cfg,
                               proto_ids)
        results = []
        for dim, ps in pair_sets[held.name].items():
            res, _ = evaluate_dimension(dim, ps, held.ratings, held.prototype_id(dim), store, adapter)
            results.append(res)
        reports.append(EvalReport(held.name, mode, cfg.seed, adapter.sha256(), results, audit=audit))
    return reports


def export_scatter(predicted: Sequence[ScoredEntity], truth: RatingsTable, dimension: str, path) -> int:
    """Write ``item,predicted_score,ground_truth`` rows sorted by item id; returns the row count."""
    column = truth.column(dimension)
    rows = sorted((p.entity_id, p.score, column[p.entity_id]) for p in predicted if p.entity_id in column)
    if not rows:
        raise EmptyJoinError(f"no predicted items have ratings on {dimension!r}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["item", "predicted_score", "ground_truth"])
        for item, pred, gt in rows:
            writer.writerow([item, repr(float(pred)), repr(float(gt))])
    return len(rows)
