import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protospace.alignment import AlignmentAdapter, identity_adapter
from protospace.corpus import EmbeddingStore, Entity, FeaturePrototype
from protospace.errors import DimensionError, InputError, MissingEmbeddingError
from protospace.scoring import (
    FeatureDirection,
    compare,
    prototype_direction,
    rank_entities,
    score,
    seed_direction,
    select_option,
)

ROT90 = np.array([[0.0, -1.0], [1.0, 0.0]])


def fd(v):
    return FeatureDirection("f", np.asarray(v, dtype=float))


def store_with(values):
    store = EmbeddingStore()
    for k, v in values.items():
        store.add(k, v)
    return store


def test_score_examples():
    u = np.array([0.6, 0.8])
    assert score(u, fd(u)) == pytest.approx(1.0, abs=1e-15)
    assert score([1.0, 0.0], fd([0.0, 1.0])) == 0.0
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((2, 6))
    assert score(a, fd(b)) == pytest.approx(sum(x * y for x, y in zip(a, b)), rel=1e-13)
    with pytest.raises(DimensionError):
        score([1.0, 0.0, 0.0], fd([1.0, 0.0]))


def test_score_is_cosine_for_unit_vectors():
    rng = np.random.default_rng(1)
    for _ in range(200):
        a, b = rng.standard_normal((2, 9))
        a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
        cos = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
        assert abs(score(a, fd(b), identity_adapter(9)) - cos) <= 1e-12


def test_score_shared_adapter_moves_entities():
    shared = AlignmentAdapter(ROT90, "shared")
    assert score([1.0, 0.0], fd([0.0, 1.0]), shared) == pytest.approx(1.0)
    assert score([1.0, 0.0], fd([0.0, 1.0]), AlignmentAdapter(ROT90)) == 0.0


def test_seed_direction():
    h, l = np.array([1.0, 2.0, 3.0]), np.array([0.5, -1.0, 0.0])
    np.testing.assert_array_equal(seed_direction([h], [l]).vector, h - l)
    with pytest.warns(RuntimeWarning):
        zero = seed_direction([h, l], [l, h])
    assert not np.any(zero.vector)
    rng = np.random.default_rng(2)
    highs, lows = rng.standard_normal((3, 5)), rng.standard_normal((2, 5))
    expect = [(highs[0][i] + highs[1][i] + highs[2][i]) / 3 - (lows[0][i] + lows[1][i]) / 2 for i in range(5)]
    np.testing.assert_allclose(seed_direction(highs, lows).vector, expect, atol=1e-15)
    assert seed_direction(highs, lows).source == "seeds"
    with pytest.raises(InputError):
        seed_direction([], [l])
    with pytest.raises(DimensionError):
        seed_direction([h], [[1.0, 2.0]])


def test_prototype_direction():
    store = EmbeddingStore()
    store.add("sweet", [3.0, 4.0], "a very sweet food")
    store.add("other", [1.0, 0.0], "a very sour food")
    d = prototype_direction(FeaturePrototype("sweet", "a very sweet food"), store, identity_adapter(2))
    np.testing.assert_allclose(d.vector, [0.6, 0.8], atol=1e-15)
    by_text = prototype_direction(FeaturePrototype("sour", "a very sour food"), store, AlignmentAdapter(ROT90))
    np.testing.assert_allclose(by_text.vector, [0.0, 1.0], atol=1e-15)
    assert by_text.feature_id == "sour" and by_text.source == "prototype"
    rng = np.random.default_rng(3)
    for _ in range(50):
        out = prototype_direction(FeaturePrototype("sweet", "x"), store, AlignmentAdapter(rng.standard_normal((2, 2))))
        assert abs(np.linalg.norm(out.vector) - 1) <= 1e-9
    with pytest.raises(LookupError):
        prototype_direction(FeaturePrototype("bitter", "a very bitter food"), store)


def test_rank_entities_examples():
    store = store_with({"a": [0.9, 0.0], "b": [0.1, 0.0], "c": [0.1, 0.0]})
    f = fd([1.0, 0.0])
    assert [s.entity_id for s in rank_entities([Entity("a", "a")], f, store)] == ["a"]
    ranked = rank_entities([Entity("b", "b"), Entity("a", "a")], f, store)
    assert [(s.entity_id, s.score) for s in ranked] == [("a", 0.9), ("b", 0.1)]
    tied = rank_entities([Entity("c", "c"), Entity("b", "b")], f, store)
    assert [s.entity_id for s in tied] == ["b", "c"]
    with pytest.raises(MissingEmbeddingError, match="zz"):
        rank_entities([Entity("zz", "zz")], f, store)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_rank_order_scale_invariant(seed, scale):
    rng = np.random.default_rng(seed)
    vecs = rng.standard_normal((12, 4))
    store = store_with({f"e{i:02d}": v for i, v in enumerate(vecs)})
    ents = [Entity(i, i) for i in store.ids()]
    f = rng.standard_normal(4)
    base = [s.entity_id for s in rank_entities(ents, fd(f), store)]
    assert [s.entity_id for s in rank_entities(ents, fd(scale * f), store)] == base


def test_compare_examples_and_consistency():
    store = store_with({"a": [0.9, 0.3], "b": [0.1, 0.3], "a2": [0.9, 0.3]})
    f = fd([1.0, 0.0])
    A, B, A2 = Entity("a", "a"), Entity("b", "b"), Entity("a2", "a2")
    assert compare(A, A2, f, store) == "tie"
    assert compare(A, B, f, store) == "first"
    assert compare(B, A, f, store) == "second"
    rng = np.random.default_rng(4)
    flip = {"first": "second", "second": "first", "tie": "tie"}
    vecs = rng.standard_normal((10, 3))
    vecs[5] = vecs[4]
    s = store_with({f"e{i}": v for i, v in enumerate(vecs)})
    g = fd(rng.standard_normal(3))
    for i in range(10):
        for j in range(10):
            x, y = Entity(f"e{i}", "x"), Entity(f"e{j}", "y")
            assert compare(y, x, g, s) == flip[compare(x, y, g, s)]


def test_select_option():
    q = np.array([0.0, 1.0, 0.0])
    assert select_option(q, [[1, 0, 0], [0, 1, 0], [0, 0, 1]]) == 1
    assert select_option(q, [[5.0, 5.0, 5.0]]) == 0
    assert select_option(q, [[0, 1, 0], [0, 1, 0]]) == 0
    with pytest.raises(InputError):
        select_option(q, [])
    with pytest.raises(DimensionError):
        select_option(q, [[1.0, 0.0]])
    rng = np.random.default_rng(5)
    for _ in range(500):
        opts = rng.standard_normal((5, 6))
        opts /= np.linalg.norm(opts, axis=1, keepdims=True)
        query = rng.standard_normal(6)
        best, best_i = -np.inf, None
        for i, o in enumerate(opts):
            s = sum(a * b for a, b in zip(o, query))
            if s > best:
                best, best_i = s, i
        assert select_option(query, opts) == best_i
