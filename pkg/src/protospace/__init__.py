"""Conceptual-space dimensions from entity and feature-prototype embeddings."""

from .alignment import (
    AlignmentAdapter,
    TrainConfig,
    TrainTrace,
    forward,
    grad_check,
    init_adapter,
    procrustes,
    train,
)
from .corpus import (
    ClassificationItem,
    EmbeddingStore,
    Entity,
    FeaturePrototype,
    RankPair,
    RatingsTable,
    eol_prompt,
    verbalize_entity,
)
from .evaluation import generate_pairs, leave_one_out, mcnemar, pairwise_accuracy, pearson
from .objectives import LossConfig, centroid, classification_loss, combined_loss, ranking_loss
from .scoring import compare, prototype_direction, rank_entities, score, seed_direction, select_option
from .synth import SynthWorldConfig, synth_world

__version__ = "0.1.0"
