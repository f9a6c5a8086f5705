import random

import pytest
from hypothesis import given, settings, strategies as st

from metamem.core import Role, Session, Turn
from metamem.membuild import (
    assign_topics,
    build_memory_set,
    format_timestamp,
    load_sessions,
    session_text,
    summarize_topic,
    write_sessions,
)
from metamem.provider import HashEmbedder, ProviderError, ScriptedEmbedder, ScriptedProvider, StubProvider


def _session(sid, text, ts=None):
    return Session(sid, (Turn(Role.USER, text, ts), Turn(Role.ASSISTANT, f"ok {sid}", ts)))


def _clustered(n=10, seed=7):
    """Sessions drawn from three orthogonal topic directions plus small seeded noise."""
    rng = random.Random(seed)
    topics = [[1.0, 0, 0, 0, 0, 0], [0, 1.0, 0, 0, 0, 0], [0, 0, 1.0, 0, 0, 0]]
    sessions, table, truth = [], {}, {}
    for i in range(n):
        t = rng.randrange(3) if i >= 3 else i
        vec = [x + rng.uniform(-0.1, 0.1) for x in topics[t]]
        s = _session(f"s{i}", f"session {i}")
        sessions.append(s)
        table[session_text(s)] = vec
        truth[s.id] = t
    return sessions, ScriptedEmbedder(table), truth


def _partition(groups):
    return sorted(sorted(s.id for s in g) for g in groups)


def test_three_cluster_partition_recovered():
    sessions, emb, truth = _clustered()
    groups = assign_topics(sessions, emb, threshold=0.7)
    want = sorted(sorted(sid for sid, t in truth.items() if t == k) for k in range(3))
    assert _partition(groups) == want


def test_identical_sessions_share_a_group():
    s = _session("a", "same words")
    emb = ScriptedEmbedder({session_text(s): [1.0, 0.0]})
    assert len(assign_topics([s, s], emb, 0.8)) == 1


@settings(max_examples=40)
@given(st.integers(1, 12), st.integers(0, 10_000), st.floats(0.05, 0.95))
def test_groups_partition_the_input(n, seed, threshold):
    sessions, emb, _ = _clustered(n, seed)
    groups = assign_topics(sessions, emb, threshold)
    flat = [s.id for g in groups for s in g]
    assert sorted(flat) == sorted(s.id for s in sessions) and all(groups)


def test_threshold_must_be_open_unit_interval():
    with pytest.raises(ValueError):
        assign_topics([_session("a", "x")], HashEmbedder(8), 1.0)


def test_summarize_scripted_example():
    actor = ScriptedProvider(["Travel\nUser drove 1800 miles total"])
    unit = summarize_topic([_session("a", "road trip")], actor)
    assert unit.topic == "Travel" and "1800 miles" in unit.text


def test_summarize_carries_rendered_timestamps():
    actor = ScriptedProvider(["Travel\nUser drove"])
    unit = summarize_topic([_session("a", "trip", "2023-05-23T16:14:00")], actor)
    assert "2023/05/23 (Tue) 16:14" in unit.text
    prompt = actor.calls[0].user
    assert "[2023/05/23 (Tue) 16:14] user: trip" in prompt


def test_summarize_empty_reply_is_an_error():
    with pytest.raises(ProviderError):
        summarize_topic([_session("a", "x")], ScriptedProvider(["  \n "]))


@pytest.mark.parametrize("raw,want", [
    ("2023-05-23 16:14", "2023/05/23 (Tue) 16:14"),
    ("2023/05/23 (Tue) 16:14", "2023/05/23 (Tue) 16:14"),
    ("sometime in May", "sometime in May"),
])
def test_format_timestamp(raw, want):
    assert format_timestamp(raw) == want


def test_build_memory_set_sizes_and_embeddings():
    sessions, emb, _ = _clustered()
    table = dict(emb.table)
    actor = StubProvider()
    # unit texts are embedded too; give the scripted table a fallback via HashEmbedder
    mem = build_memory_set(sessions, actor, _Fallback(table, 6), threshold=0.7)
    assert len(mem) == 3
    assert all(u.embedding is not None and len(u.embedding) == 6 and u.text.strip() for u in mem.units)
    assert [u.id for u in mem.units] == ["m0", "m1", "m2"]
    again = build_memory_set(sessions, StubProvider(), _Fallback(table, 6), threshold=0.7)
    assert again == mem


def test_build_memory_set_empty():
    assert len(build_memory_set([], StubProvider(), HashEmbedder(8))) == 0


def test_sessions_roundtrip(tmp_path):
    sessions, _, _ = _clustered(4)
    write_sessions(sessions, tmp_path / "s.jsonl")
    assert load_sessions(tmp_path / "s.jsonl") == sessions


class _Fallback:
    def __init__(self, table, dim):
        self.table, self.dim, self.hash = table, dim, HashEmbedder(dim)

    def embed(self, texts):
        return [self.table[t] if t in self.table else self.hash.embed([t])[0] for t in texts]
