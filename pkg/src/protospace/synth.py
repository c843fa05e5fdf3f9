"""Synthetic worlds where prototypes live in a different subspace than entities.

Entities are unit vectors in a ``latent_dim``-dimensional subspace S_E. Each
feature is a direction u_j in S_E: the normalized centroid of the (observed)
embeddings of the 7 entities scoring highest along a random latent direction.
Ground-truth ratings are cosines of the noise-free entity embeddings with u_j.
Prototype embeddings are ``H @ u_j`` for a hidden orthogonal ``H`` that
carries S_E onto a disjoint subspace S_P, so before alignment every
entity-prototype dot product is zero.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .corpus import ClassificationItem, EmbeddingStore, FeaturePrototype, RatingsTable
from .errors import ConfigError
from .evaluation import Dataset, generate_pairs
from .linalg import random_orthogonal


@dataclass(frozen=True)
class SynthWorldConfig:
    d: int = 64
    n_entities: int = 40
    n_features: int = 6
    noise_sigma: float = 0.05
    latent_dim: int = 4
    hidden_map: str = "orthogonal"
    seed: int = 0
    n_examples: int = 7
    n_nonsense: int = 2
    prefix: str = ""

    def validate(self) -> None:
        if self.d < 2 * self.n_features or self.d < 2 * self.latent_dim:
            raise ConfigError(f"d={self.d} leaves no room for disjoint entity and prototype subspaces")
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be positive")
        if self.n_features < 4:
            raise ConfigError("need at least 4 features (3 sibling negatives per item)")
        if self.n_entities < self.n_examples:
            raise ConfigError(f"need at least {self.n_examples} entities")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        if self.hidden_map not in ("orthogonal", "identity"):
            raise ConfigError(f"hidden_map must be 'orthogonal' or 'identity', got {self.hidden_map!r}")
        if self.n_nonsense < 1:
            raise ConfigError("need at least one nonsensical prototype")

    @classmethod
    def from_json(cls, data: dict) -> "SynthWorldConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2) + "\n"


@dataclass
class SynthWorld:
    config: SynthWorldConfig
    store: EmbeddingStore
    ratings: RatingsTable
    prototypes: list[FeaturePrototype]
    class_items: list[ClassificationItem]
    hidden_map: np.ndarray
    entity_basis: np.ndarray
    prototype_basis: np.ndarray
    feature_directions: np.ndarray
    entity_ids: list[str]

    def __iter__(self):
        # unpacks as (store, ratings, prototypes, class_items)
        return iter((self.store, self.ratings, self.prototypes, self.class_items))

    def items_for(self, feature_ids: Sequence[str]) -> list[ClassificationItem]:
        """Items whose target is in ``feature_ids``, with sibling negatives drawn only from that set.

        Sibling negatives outside the set are swapped for unused features from
        it (in the given order), so held-out prototypes never enter training.
        An item keeps fewer negatives when the set is too small.
        """
        wanted = list(dict.fromkeys(feature_ids))
        keep = set(wanted)
        out = []
        for it in self.class_items:
            if it.target not in keep:
                continue
            *siblings, nonsense = it.negatives
            kept = [s for s in siblings if s in keep]
            spare = [f for f in wanted if f != it.target and f not in kept]
            kept += spare[: len(siblings) - len(kept)]
            out.append(replace(it, negatives=(*kept, nonsense)))
        return out

    def pairs_for(self, feature_ids: Sequence[str], min_gap: float = 0.0, max_pairs: Optional[int] = 340,
                  seed: int = 0):
        return [p for f in feature_ids for p in generate_pairs(self.ratings, f, min_gap, max_pairs, seed)]

    def dataset(self, name: str, perceptual: bool = True, feature_ids: Optional[Sequence[str]] = None) -> Dataset:
        keep = set(feature_ids) if feature_ids is not None else None
        table = RatingsTable(r for r in self.ratings if keep is None or r.dimension in keep)
        return Dataset(name, table, perceptual)


def synth_world(cfg: SynthWorldConfig) -> SynthWorld:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    d, r = cfg.d, cfg.latent_dim

    basis = random_orthogonal(d, int(rng.integers(2**31)))
    b_e, b_p, b_rest = basis[:, :r], basis[:, r : 2 * r], basis[:, 2 * r :]
    if cfg.hidden_map == "orthogonal":
        twist = random_orthogonal(r, int(rng.integers(2**31)))
        hidden = b_p @ twist @ b_e.T + b_e @ twist.T @ b_p.T + b_rest @ b_rest.T
    else:
        hidden = np.eye(d)

    latent = rng.uniform(-1.0, 1.0, size=(cfg.n_entities, r))
    clean = latent @ b_e.T
    clean /= np.linalg.norm(clean, axis=1, keepdims=True)
    noisy = (latent + cfg.noise_sigma * rng.standard_normal(latent.shape)) @ b_e.T
    observed = noisy / np.linalg.norm(noisy, axis=1, keepdims=True)

    raw_dirs = rng.standard_normal((cfg.n_features, r))
    raw_dirs = raw_dirs @ b_e.T
    tops = []
    directions = np.empty((cfg.n_features, d))
    for j in range(cfg.n_features):
        order = np.argsort(-(clean @ raw_dirs[j]), kind="stable")[: cfg.n_examples]
        tops.append(order)
        c = observed[order].mean(axis=0)
        directions[j] = c / np.linalg.norm(c)
    truth = clean @ directions.T
    protos = directions @ hidden.T

    if b_rest.shape[1] > 0:
        junk = rng.standard_normal((cfg.n_nonsense, b_rest.shape[1])) @ b_rest.T
    else:
        junk = rng.standard_normal((cfg.n_nonsense, r)) @ b_p.T
    junk /= np.linalg.norm(junk, axis=1, keepdims=True)

    pre = cfg.prefix
    entity_ids = [f"{pre}e{i:03d}" for i in range(cfg.n_entities)]
    feature_ids = [f"{pre}f{j}" for j in range(cfg.n_features)]
    junk_ids = [f"{pre}nonsense{k}" for k in range(cfg.n_nonsense)]

    store = EmbeddingStore()
    for eid, vec in zip(entity_ids, observed):
        store.add(eid, vec, f"synthetic item {eid}")
    prototypes = []
    for fid, vec in zip(feature_ids, protos):
        desc = f"a very {fid} item"
        store.add(fid, vec, desc)
        prototypes.append(FeaturePrototype(fid, desc))
    for jid, vec in zip(junk_ids, junk):
        store.add(jid, vec, f"a very {jid} thing")

    ratings = RatingsTable()
    for i, eid in enumerate(entity_ids):
        for j, fid in enumerate(feature_ids):
            ratings.add(eid, fid, float(truth[i, j]))

    items = []
    for j, fid in enumerate(feature_ids):
        siblings = [feature_ids[k] for k in sorted(rng.choice([k for k in range(cfg.n_features) if k != j],
                                                              size=3, replace=False))]
        nonsense = junk_ids[int(rng.integers(cfg.n_nonsense))]
        items.append(ClassificationItem(fid, tuple(entity_ids[i] for i in tops[j]), (*siblings, nonsense),
                                        "synthetic item"))

    return SynthWorld(cfg, store, ratings, prototypes, items, hidden, b_e, b_p, directions, entity_ids)
