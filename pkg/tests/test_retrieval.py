import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metamem.core import MemorySet, MemoryUnit
from metamem.infer import retrieve_units
from metamem.provider import HashEmbedder
from metamem.retrieval import VectorIndex, index_add, top_k


def brute_force(ids, vectors, query, k):
    """Pure-Python cosine sort; ties keep insertion order."""
    qn = math.sqrt(sum(x * x for x in query))
    scored = []
    for pos, (i, v) in enumerate(zip(ids, vectors)):
        vn = math.sqrt(sum(x * x for x in v))
        s = -math.inf if vn == 0 or qn == 0 else math.fsum(a * b for a, b in zip(v, query)) / (vn * qn)
        scored.append((-s, pos, i, s))
    scored.sort(key=lambda t: (t[0], t[1]))
    return [(i, s) for _, _, i, s in scored[:k]]


def _index(vectors):
    ids = tuple(f"u{i}" for i in range(len(vectors)))
    return VectorIndex(len(vectors[0]), ids, tuple(tuple(v) for v in vectors))


def _check(idx, query, k):
    got = top_k(idx, query, k)
    want = brute_force(idx.ids, idx.vectors, query, k)
    assert [i for i, _ in got] == [i for i, _ in want]
    for (_, a), (_, b) in zip(got, want):
        assert a == b or abs(a - b) <= 1e-9


vec = st.lists(st.floats(-4, 4, allow_nan=False).map(lambda x: round(x, 2)), min_size=3, max_size=3)


@settings(max_examples=150)
@given(st.lists(vec, min_size=1, max_size=25), vec, st.integers(1, 30))
def test_top_k_matches_oracle(vectors, query, k):
    _check(_index(vectors), query, k)


@given(st.lists(vec, min_size=2, max_size=15), vec, st.integers(1, 15))
def test_top_k_prefix_property(vectors, query, k):
    idx = _index(vectors)
    assert top_k(idx, query, k) == top_k(idx, query, k + 1)[:k]


@given(st.lists(vec, min_size=1, max_size=10), vec, st.floats(0.1, 50))
def test_query_scale_invariance(vectors, query, c):
    idx = _index(vectors)
    a = [s for _, s in top_k(idx, query, len(vectors))]
    b = [s for _, s in top_k(idx, [c * x for x in query], len(vectors))]
    assert all(x == y or abs(x - y) <= 1e-9 for x, y in zip(a, b))


def test_duplicate_vectors_tie_by_insertion_order():
    idx = _index([[1, 0], [0, 1], [1, 0], [1, 0]])
    assert [i for i, _ in top_k(idx, [1, 0], 3)] == ["u0", "u2", "u3"]


def test_zero_vectors_rank_last():
    idx = _index([[0, 0], [1, 1]])
    got = top_k(idx, [1, 0], 2)
    assert got[0][0] == "u1" and got[1][1] == -math.inf


def test_index_add_upserts():
    idx = VectorIndex(2)
    idx = index_add(idx, MemoryUnit("a", "", "t", embedding=(1.0, 0.0)))
    idx = index_add(idx, MemoryUnit("b", "", "t", embedding=(0.0, 1.0)))
    idx2 = index_add(idx, MemoryUnit("a", "", "t", embedding=(0.0, 2.0)))
    assert idx2.ids == ("a", "b") and idx2.vectors[0] == (0.0, 2.0)
    assert idx.vectors[0] == (1.0, 0.0)


def test_dimension_errors():
    idx = VectorIndex(2)
    with pytest.raises(ValueError):
        index_add(idx, MemoryUnit("a", "", "t", embedding=(1.0, 0.0, 0.0)))
    with pytest.raises(ValueError):
        index_add(idx, MemoryUnit("a", "", "t"))
    with pytest.raises(ValueError):
        top_k(_index([[1, 0]]), [1, 0, 0], 1)
    with pytest.raises(ValueError):
        top_k(_index([[1, 0]]), [1, 0], 0)


def test_persistence_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    idx = _index(rng.normal(size=(10, 4)).tolist())
    idx.save(tmp_path / "i.json")
    back = VectorIndex.load(tmp_path / "i.json")
    assert back == idx
    assert top_k(back, [1, 2, 3, 4], 5) == top_k(idx, [1, 2, 3, 4], 5)


class CountingEmbedder(HashEmbedder):
    calls = 0

    def embed(self, texts):
        type(self).calls += 1
        return super().embed(texts)


def test_small_memory_skips_embedding_and_keeps_order():
    mem = MemorySet(tuple(MemoryUnit(f"m{i}", "", f"text {i}") for i in range(5)))
    CountingEmbedder.calls = 0
    got = retrieve_units(mem, "q", CountingEmbedder(16), k=5)
    assert [u.id for u in got] == [f"m{i}" for i in range(5)] and CountingEmbedder.calls == 0


def test_large_memory_retrieves_best_match():
    emb = HashEmbedder(128)
    texts = [f"alpha{i} beta{i} gamma{i}" for i in range(30)]
    mem = MemorySet(tuple(MemoryUnit(f"m{i}", "", t) for i, t in enumerate(texts)))
    got = retrieve_units(mem, "alpha17 beta17", emb, k=3)
    assert got[0].id == "m17" and len(got) == 3
