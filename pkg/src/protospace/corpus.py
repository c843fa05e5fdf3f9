"""Verbalization templates, record types and on-disk formats.

File formats (all UTF-8):

* embeddings: JSON lines ``{"id": ..., "text": ..., "vector": [...]}``
* classification dataset: a JSON array of
  ``{"target": ..., "examples": [...], "negatives": [...], "category": ...}``
* ratings: CSV with header ``item,dimension,rating``
* rank pairs: CSV with header ``item_a,item_b,dimension,label``
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np

from .errors import DimensionError, InputError, MissingEmbeddingError, ParseError, SchemaError
from .linalg import as_vector

log = logging.getLogger(__name__)

N_EXAMPLES = 7
N_NEGATIVES = 4


@dataclass(frozen=True)
class Entity:
    id: str
    name: str
    category: Optional[str] = None

    def __post_init__(self):
        if not self.id:
            raise InputError("entity id must be non-empty")


@dataclass(frozen=True)
class FeaturePrototype:
    feature_id: str
    description: str

    def __post_init__(self):
        if not self.description:
            raise InputError(f"prototype {self.feature_id!r} has an empty description")


@dataclass(frozen=True)
class ClassificationItem:
    target: str
    examples: tuple[str, ...]
    negatives: tuple[str, ...]
    category: Optional[str] = None

    def to_json(self) -> dict:
        out = {"target": self.target, "examples": list(self.examples), "negatives": list(self.negatives)}
        if self.category is not None:
            out["category"] = self.category
        return out


@dataclass(frozen=True)
class RankPair:
    item_a: str
    item_b: str
    dimension: str
    label: int

    def __post_init__(self):
        if self.label not in (-1, 1):
            raise SchemaError(f"label must be -1 or +1, got {self.label!r}")
        if self.item_a == self.item_b:
            raise SchemaError(f"pair compares {self.item_a!r} with itself")

    @property
    def key(self) -> tuple[str, str, str]:
        """Orientation-free identity of the pair."""
        a, b = sorted((self.item_a, self.item_b))
        return a, b, self.dimension


@dataclass(frozen=True)
class Rating:
    item: str
    dimension: str
    rating: float


class RatingsTable:
    """Ground-truth ratings, at most one per (item, dimension)."""

    def __init__(self, records: Iterable[Rating] = ()):
        self._values: dict[tuple[str, str], float] = {}
        self.records: list[Rating] = []
        for rec in records:
            self.add(rec.item, rec.dimension, rec.rating)

    def add(self, item: str, dimension: str, rating: float) -> None:
        if (item, dimension) in self._values:
            raise SchemaError(f"duplicate rating for item {item!r} on dimension {dimension!r}")
        rating = float(rating)
        if not math.isfinite(rating):
            raise SchemaError(f"non-finite rating for item {item!r} on dimension {dimension!r}")
        self._values[(item, dimension)] = rating
        self.records.append(Rating(item, dimension, rating))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[Rating]:
        return iter(self.records)

    def dimensions(self) -> list[str]:
        return list(dict.fromkeys(r.dimension for r in self.records))

    def column(self, dimension: str) -> dict[str, float]:
        """Ratings of one dimension keyed by item, in file order."""
        return {r.item: r.rating for r in self.records if r.dimension == dimension}

    def get(self, item: str, dimension: str) -> float:
        return self._values[(item, dimension)]


@dataclass
class EmbeddingStore:
    """Id-addressed embedding vectors sharing one dimension."""

    dim: Optional[int] = None
    _vectors: dict[str, np.ndarray] = field(default_factory=dict)
    _texts: dict[str, str] = field(default_factory=dict)

    def add(self, id: str, vector, text: Optional[str] = None) -> None:
        if not id:
            raise InputError("embedding id must be non-empty")
        if id in self._vectors:
            raise SchemaError(f"duplicate embedding id {id!r}")
        vec = as_vector(vector).copy()
        if self.dim is None:
            self.dim = vec.size
        elif vec.size != self.dim:
            raise DimensionError(f"embedding {id!r} has dimension {vec.size}, store has {self.dim}")
        vec.flags.writeable = False
        self._vectors[id] = vec
        self._texts[id] = id if text is None else text

    def __contains__(self, id: str) -> bool:
        return id in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)

    def __getitem__(self, id: str) -> np.ndarray:
        try:
            return self._vectors[id]
        except KeyError:
            raise MissingEmbeddingError(f"no embedding for {id!r}") from None

    def ids(self) -> list[str]:
        return list(self._vectors)

    def text(self, id: str) -> str:
        return self._texts[id]

    def lookup(self, key: str) -> np.ndarray:
        """Find a vector by id, falling back to an exact match on the stored text."""
        if key in self._vectors:
            return self._vectors[key]
        for id, text in self._texts.items():
            if text == key:
                return self._vectors[id]
        raise MissingEmbeddingError(f"no embedding for {key!r}")

    def matrix(self, ids: Iterable[str]) -> np.ndarray:
        return np.array([self[i] for i in ids], dtype=np.float64)


def verbalize_entity(name: str, category: Optional[str] = None) -> str:
    if not name:
        raise InputError("entity name must be non-empty")
    if category:
        return f"{category} {name}"
    return name


def eol_prompt(phrase: str) -> str:
    """Wrap a phrase in the one-word-description prompt (U+0027 quotes)."""
    if not phrase:
        raise InputError("phrase must be non-empty")
    return f"The description of the term '{phrase}' in one word is"


def save_embeddings(store: EmbeddingStore, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for id in store.ids():
            rec = {"id": id, "text": store.text(id), "vector": store[id].tolist()}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def iter_embedding_records(path) -> Iterator[tuple[int, str, str, list]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                id, vector = rec["id"], rec["vector"]
                text = rec.get("text", id)
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"malformed embedding record ({exc})", line=lineno) from None
            if not isinstance(id, str) or not isinstance(vector, list):
                raise ParseError("embedding record needs a string id and a list vector", line=lineno)
            yield lineno, id, text, vector


def load_embeddings(path) -> EmbeddingStore:
    store = EmbeddingStore()
    for lineno, id, text, vector in iter_embedding_records(path):
        try:
            store.add(id, vector, text)
        except DimensionError as exc:
            raise DimensionError(f"line {lineno}: {exc}") from None
        except (InputError, SchemaError) as exc:
            raise ParseError(str(exc), line=lineno) from None
    return store


def _validate_item(raw, index: int, relaxed: bool) -> ClassificationItem:
    where = f"record {index}"
    if not isinstance(raw, dict):
        raise SchemaError(f"{where}: expected an object")
    try:
        target = raw["target"]
        examples = raw["examples"]
        negatives = raw["negatives"]
    except KeyError as exc:
        raise SchemaError(f"{where}: missing field {exc}") from None
    category = raw.get("category")
    if not isinstance(target, str) or not target:
        raise SchemaError(f"{where}: target must be a non-empty string")
    where = f"record {index} ({target!r})"
    for name, values in (("examples", examples), ("negatives", negatives)):
        if not isinstance(values, list) or not all(isinstance(v, str) and v for v in values):
            raise SchemaError(f"{where}: {name} must be a list of non-empty strings")

    if len(examples) != N_EXAMPLES or len(negatives) != N_NEGATIVES:
        msg = (
            f"{where}: expected {N_EXAMPLES} examples and {N_NEGATIVES} negatives, "
            f"got {len(examples)} and {len(negatives)}"
        )
        if not relaxed or len(examples) < 2 or len(negatives) < 1:
            raise SchemaError(msg)
        log.warning(msg)
    strings = [target, *examples, *negatives]
    if len(set(strings)) != len(strings):
        dupes = sorted({s for s in strings if strings.count(s) > 1})
        raise SchemaError(f"{where}: duplicate strings {dupes}")
    return ClassificationItem(target, tuple(examples), tuple(negatives), category)


def load_classification_dataset(path, relaxed: bool = False) -> list[ClassificationItem]:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON ({exc.msg})", line=exc.lineno) from None
    if not isinstance(data, list):
        raise SchemaError("classification dataset must be a JSON array")
    return [_validate_item(raw, i, relaxed) for i, raw in enumerate(data)]


def save_classification_dataset(items: Iterable[ClassificationItem], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump([it.to_json() for it in items], fh, indent=2, ensure_ascii=False)
        fh.write("\n")


def _read_csv(path, header: list[str]) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or any(h not in reader.fieldnames for h in header):
            raise ParseError(f"expected header {','.join(header)}, got {reader.fieldnames}", line=1)
        for row in reader:
            yield reader.line_num, row


def load_ratings(path) -> RatingsTable:
    table = RatingsTable()
    for lineno, row in _read_csv(path, ["item", "dimension", "rating"]):
        try:
            value = float(row["rating"])
        except (TypeError, ValueError):
            raise ParseError(f"non-numeric rating {row['rating']!r} for item {row['item']!r}", line=lineno) from None
        try:
            table.add(row["item"], row["dimension"], value)
        except SchemaError as exc:
            raise SchemaError(f"line {lineno}: {exc}") from None
    return table


def save_ratings(table: RatingsTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["item", "dimension", "rating"])
        for r in table:
            writer.writerow([r.item, r.dimension, repr(r.rating)])


def load_pairs(path) -> list[RankPair]:
    pairs = []
    seen = set()
    for lineno, row in _read_csv(path, ["item_a", "item_b", "dimension", "label"]):
        try:
            label = int(row["label"])
        except (TypeError, ValueError):
            raise ParseError(f"non-integer label {row['label']!r}", line=lineno) from None
        try:
            pair = RankPair(row["item_a"], row["item_b"], row["dimension"], label)
        except SchemaError as exc:
            raise SchemaError(f"line {lineno}: {exc}") from None
        if pair.key in seen:
            raise SchemaError(f"line {lineno}: duplicate pair {pair.key}")
        seen.add(pair.key)
        pairs.append(pair)
    return pairs


def save_pairs(pairs: Iterable[RankPair], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["item_a", "item_b", "dimension", "label"])
        for p in pairs:
            writer.writerow([p.item_a, p.item_b, p.dimension, p.label])


def load_prototypes(path) -> list[FeaturePrototype]:
    """Prototype list as a JSON array of ``{"feature_id", "description"}``."""
    with open(Path(path), encoding="utf-8") as fh:
        data = json.load(fh)
    try:
        return [FeaturePrototype(d["feature_id"], d["description"]) for d in data]
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed prototype record ({exc})") from None


def save_prototypes(prototypes: Iterable[FeaturePrototype], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump([{"feature_id": p.feature_id, "description": p.description} for p in prototypes], fh, indent=2)
        fh.write("\n")
