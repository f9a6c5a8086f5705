import json

import pytest
from hypothesis import given, strategies as st

from metamem.core import (
    ActionKind,
    ActionSet,
    BatchRecord,
    Checkpoint,
    MetaMemoryState,
    MetaUnit,
    SchemaError,
    UpdateAction,
    canonical_json,
    config_hash,
    derive_seed,
    load_checkpoint,
    render_meta_memory,
    save_checkpoint,
    substream,
)


def _state(texts, step=1):
    units = tuple(MetaUnit(i + 1, t, 1, 1) for i, t in enumerate(texts))
    return MetaMemoryState(units, step=step, next_id=len(texts) + 1)


def test_render_empty_is_empty_string():
    assert render_meta_memory(MetaMemoryState()) == ""


def test_render_is_one_based():
    assert render_meta_memory(_state(["a", "b"])) == "[1] a\n[2] b"


@given(st.lists(st.text(alphabet="abc xyz", min_size=1, max_size=8).filter(str.strip), max_size=6))
def test_render_matches_line_oracle(texts):
    lines = render_meta_memory(_state(texts)).split("\n") if texts else []
    assert lines == [f"[{j + 1}] {t}" for j, t in enumerate(texts)]


def test_state_rejects_duplicate_ids():
    with pytest.raises(ValueError):
        MetaMemoryState((MetaUnit(1, "a", 1, 1), MetaUnit(1, "b", 1, 1)), step=1, next_id=2)


def test_state_rejects_stale_next_id():
    with pytest.raises(ValueError):
        MetaMemoryState((MetaUnit(3, "a", 1, 1),), step=1, next_id=3)


@pytest.mark.parametrize(
    "kind,index,content",
    [("ADD", 0, "x"), ("ADD", None, None), ("DEL", None, None), ("DEL", 0, "x"), ("MOD", 0, None), ("MOD", 0, "  ")],
)
def test_action_invariants(kind, index, content):
    with pytest.raises(ValueError):
        UpdateAction(kind, index, content)


def test_action_counts():
    acts = ActionSet(0, (UpdateAction("ADD", None, "a"), UpdateAction("DEL", 1), UpdateAction("ADD", None, "b")))
    assert acts.counts() == {"ADD": 2, "DEL": 1, "MOD": 0}


def _ckpt():
    rec = BatchRecord(1, "e0b0", 1, 1, {"ADD": 1, "DEL": 0, "MOD": 0},
                      (UpdateAction(ActionKind.ADD, None, "ünïcode ok", "q1"),), 2, 0, 0.25)
    return Checkpoint(MetaMemoryState((MetaUnit(1, "ünïcode ok", 1, 1),), 1, 2), "abc", (rec,))


def test_checkpoint_roundtrip_is_byte_stable(tmp_path):
    ckpt = _ckpt()
    p = tmp_path / "c.json"
    save_checkpoint(ckpt, p)
    first = p.read_bytes()
    again = load_checkpoint(p)
    assert again == ckpt
    save_checkpoint(again, p)
    assert p.read_bytes() == first
    assert first.endswith(b"\n") and "ünïcode".encode() in first


def test_checkpoint_log_length_must_match_step():
    with pytest.raises(ValueError, match="batch_log"):
        Checkpoint(MetaMemoryState(step=2), "x", ())


def test_checkpoint_rejects_other_schema_version(tmp_path):
    d = json.loads(_ckpt().dumps())
    d["schema_version"] = 99
    p = tmp_path / "c.json"
    p.write_text(json.dumps(d))
    with pytest.raises(SchemaError):
        load_checkpoint(p)


def test_canonical_json_sorted_and_terminated():
    assert canonical_json({"b": 1, "a": [1]}) == '{\n  "a": [\n    1\n  ],\n  "b": 1\n}\n'


def test_config_hash_ignores_key_order():
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_substreams_are_independent_and_reproducible():
    a = [substream(42, "x").random() for _ in range(2)]
    assert a[0] == a[1]
    assert substream(42, "x").random() != substream(42, "y").random()
    assert derive_seed(42, "s") == derive_seed(42, "s") != derive_seed(43, "s")
