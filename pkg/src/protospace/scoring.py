"""Conceptual-space coordinates: feature directions, scores, rankings."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np

from .alignment import AlignmentAdapter
from .corpus import EmbeddingStore, Entity, FeaturePrototype
from .errors import DimensionError, InputError
from .linalg import as_vector, normalize

TIE_TOL = 1e-12


@dataclass(frozen=True)
class FeatureDirection:
    feature_id: str
    vector: np.ndarray
    source: Literal["prototype", "seeds"] = "prototype"


@dataclass(frozen=True)
class ScoredEntity:
    entity_id: str
    score: float


def _entity_vector(v, adapter: Optional[AlignmentAdapter]) -> np.ndarray:
    v = as_vector(v)
    if adapter is None:
        return v
    return adapter.forward_rows(v[None], "entity")[0]


def score(entity, feature: FeatureDirection, adapter: Optional[AlignmentAdapter] = None) -> float:
    """tau_f(e): dot product of the (adapter-forwarded) entity and the feature vector."""
    e = _entity_vector(entity, adapter)
    if e.size != feature.vector.size:
        raise DimensionError(f"entity dimension {e.size} does not match feature dimension {feature.vector.size}")
    return float(e @ feature.vector)


def seed_direction(highs, lows, feature_id: str = "seeds") -> FeatureDirection:
    """Mean of high-seed embeddings minus mean of low-seed embeddings (not normalized)."""
    highs = np.asarray(highs, dtype=np.float64)
    lows = np.asarray(lows, dtype=np.float64)
    if highs.size == 0 or lows.size == 0 or len(highs) == 0 or len(lows) == 0:
        raise InputError("seed direction needs at least one high and one low seed")
    if highs.ndim != 2 or lows.ndim != 2 or highs.shape[1] != lows.shape[1]:
        raise DimensionError("seed embeddings must share one dimension")
    v = highs.mean(axis=0) - lows.mean(axis=0)
    if not np.any(v):
        warnings.warn(f"seed direction for {feature_id!r} is the zero vector", RuntimeWarning, stacklevel=2)
    return FeatureDirection(feature_id, v, "seeds")


def prototype_direction(prototype: FeaturePrototype, store: EmbeddingStore,
                        adapter: Optional[AlignmentAdapter] = None) -> FeatureDirection:
    """Normalized, adapter-forwarded embedding of the prototype description.

    The store is searched by feature id first, then by description text.
    """
    if prototype.feature_id in store:
        raw = store[prototype.feature_id]
    else:
        raw = store.lookup(prototype.description)
    v = raw if adapter is None else adapter.forward_rows(raw[None], "prototype")[0]
    return FeatureDirection(prototype.feature_id, normalize(v), "prototype")


def score_ids(ids: Sequence[str], feature: FeatureDirection, store: EmbeddingStore,
              adapter: Optional[AlignmentAdapter] = None) -> np.ndarray:
    """Scores for many stored entities at once."""
    x = store.matrix(ids).reshape(len(ids), -1)
    if adapter is not None:
        x = adapter.forward_rows(x, "entity")
    if x.shape[1] != feature.vector.size:
        raise DimensionError("entity and feature dimensions differ")
    return x @ feature.vector


def rank_entities(entities: Sequence[Entity], feature: FeatureDirection, store: EmbeddingStore,
                  adapter: Optional[AlignmentAdapter] = None) -> list[ScoredEntity]:
    """Descending by score; equal scores fall back to ascending entity id."""
    scores = score_ids([e.id for e in entities], feature, store, adapter)
    scored = [ScoredEntity(e.id, float(s)) for e, s in zip(entities, scores)]
    return sorted(scored, key=lambda s: (-s.score, s.entity_id))


def compare(e1: Entity, e2: Entity, feature: FeatureDirection, store: EmbeddingStore,
            adapter: Optional[AlignmentAdapter] = None) -> Literal["first", "second", "tie"]:
    s1, s2 = score_ids([e1.id, e2.id], feature, store, adapter)
    delta = s1 - s2
    if abs(delta) <= TIE_TOL:
        return "tie"
    return "first" if delta > 0 else "second"


def select_option(query, options) -> int:
    """Index of the option with the largest dot product with ``query`` (lowest index on ties)."""
    q = as_vector(query)
    if len(options) == 0:
        raise InputError("no options to choose from")
    opts = np.asarray(options, dtype=np.float64)
    if opts.ndim != 2 or opts.shape[1] != q.size:
        raise DimensionError("options must share the query dimension")
    return int(np.argmax(opts @ q))
