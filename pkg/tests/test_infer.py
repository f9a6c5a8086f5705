import pytest

from helpers import make_instance
from metamem.core import MemorySet, MemoryUnit, MetaMemoryState, MetaUnit, Role, Session, Turn
from metamem.infer import InferenceOptions, MemoryMode, answer, experiences_section
from metamem.provider import HashEmbedder, ScriptedProvider


def _state(*texts):
    return MetaMemoryState(tuple(MetaUnit(i + 1, t, 1, 1) for i, t in enumerate(texts)), 1, len(texts) + 1)


def test_inference_params_and_replay():
    actor = ScriptedProvider(["Lisbon"])
    inst = make_instance(1)
    assert answer(inst.question, inst.memory, MetaMemoryState(), actor) == "Lisbon"
    req = actor.calls[0]
    assert (req.temperature, req.top_p, req.max_tokens, req.n_samples) == (0.0, 0.8, 2000, 1)


def test_empty_state_prompt_equals_baseline_form():
    inst = make_instance(2)
    a, b = ScriptedProvider(["x"]), ScriptedProvider(["x"])
    answer(inst.question, inst.memory, MetaMemoryState(), a)
    answer(inst.question, inst.memory, _state("check dates"), b)
    base, meta = a.calls[0].user, b.calls[0].user
    assert experiences_section(MetaMemoryState()) == ""
    assert meta.replace(experiences_section(_state("check dates")), "") == base
    assert "[1] check dates" in meta


def test_each_retrieved_unit_appears_once():
    units = tuple(MemoryUnit(f"m{i}", "", f"distinct fact number {i}") for i in range(30))
    actor = ScriptedProvider(["x"])
    answer("fact number 7", MemorySet(units), MetaMemoryState(), actor, HashEmbedder(64),
           InferenceOptions(retrieve_topk=5))
    lines = actor.calls[0].user.splitlines()
    shown = [u for u in units if f"- {u.text}" in lines]
    assert len(shown) == 5 and all(lines.count(f"- {u.text}") == 1 for u in shown)
    assert shown[0].id == "m7" or "- distinct fact number 7" in lines


def test_timestamped_units_render_date():
    mem = MemorySet((MemoryUnit("m0", "", "bought a bike", timestamp="2023-05-23 16:14"),))
    actor = ScriptedProvider(["x"])
    answer("bike?", mem, MetaMemoryState(), actor)
    assert "- [2023/05/23 (Tue) 16:14] bought a bike" in actor.calls[0].user


def test_question_date_in_prompt():
    actor = ScriptedProvider(["x"])
    answer("when?", MemorySet(), MetaMemoryState(), actor, question_date="2023/05/30 (Tue) 23:40")
    assert "2023/05/30 (Tue) 23:40" in actor.calls[0].user


@pytest.mark.parametrize("mode", [MemoryMode.FULLTEXT, MemoryMode.RAG])
def test_baseline_modes_use_raw_sessions(mode):
    sessions = (Session("s1", (Turn(Role.USER, "my dog is Rex", "2023-01-02 10:00"),
                                Turn(Role.ASSISTANT, "nice name"))),)
    actor = ScriptedProvider(["x"])
    answer("dog name?", MemorySet(), _state("e"), actor, HashEmbedder(32), InferenceOptions(mode=mode),
           sessions=sessions)
    prompt = actor.calls[0].user
    assert "user: my dog is Rex" in prompt and "[1] e" in prompt
