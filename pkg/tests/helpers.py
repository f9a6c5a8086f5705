"""Fixture builders shared by the test modules."""
from __future__ import annotations

import json
import random
from pathlib import Path

from metamem.core import Category, EvalInstance, MemorySet, MemoryUnit
from metamem.evaluation import write_dataset

TABLE3_COUNTS = {
    "single-session-user": 70,
    "single-session-assistant": 56,
    "multi-session": 133,
    "temporal-reasoning": 133,
    "knowledge-update": 78,
    "single-session-preference": 30,
}

CATEGORIES = [c for c in Category if c is not Category.OTHER]


def make_instance(i: int, n_units: int = 6, category: Category | None = None, **kw) -> EvalInstance:
    answer = f"answer{i}"
    units = tuple(
        MemoryUnit(f"m{j}", "topic", f"note {j} on item{i}" + (f" is {answer}" if j == i % n_units else ""))
        for j in range(n_units)
    )
    return EvalInstance(
        id=kw.pop("id", f"q{i:03d}"),
        question=kw.pop("question", f"What is item{i}?"),
        answer=answer,
        memory=MemorySet(units),
        category=category or CATEGORIES[i % len(CATEGORIES)],
        **kw,
    )


def make_dataset(n: int, n_units: int = 6) -> list[EvalInstance]:
    return [make_instance(i, n_units) for i in range(n)]


def write_native(path: Path, n: int) -> Path:
    write_dataset(make_dataset(n), path)
    return path


def synthetic_longmemeval(path: Path, seed: int = 0) -> Path:
    """500 records with the published per-type counts, shuffled, with tiny haystacks."""
    rng = random.Random(seed)
    types = [t for t, c in TABLE3_COUNTS.items() for _ in range(c)]
    rng.shuffle(types)
    records = []
    for i, qtype in enumerate(types):
        qid = f"lme{i:03d}" + ("_abs" if i % 50 == 7 else "")
        records.append({
            "question_id": qid,
            "question_type": qtype,
            "question": f"Question {i}?",
            "answer": f"Answer {i}",
            "question_date": "2023/05/30 (Tue) 23:40",
            "haystack_session_ids": [f"s{i}a", f"s{i}b"],
            "haystack_dates": ["2023/05/20 (Sat) 10:00", "2023/05/23 (Tue) 16:14"],
            "haystack_sessions": [
                [{"role": "user", "content": f"I bought item {i}."}, {"role": "assistant", "content": "Nice."}],
                [{"role": "user", "content": f"Item {i} broke."}, {"role": "assistant", "content": "Sorry."}],
            ],
        })
    path.write_text(json.dumps(records), encoding="utf-8")
    return path


def synthetic_sharegpt(path: Path, n_convs: int = 3000, seed: int = 0) -> tuple[Path, set[str]]:
    """Conversations of 2..16 turns; returns the ids with more than 8 turns."""
    rng = random.Random(seed)
    long_ids = set()
    with open(path, "w", encoding="utf-8") as fh:
        for c in range(n_convs):
            n_turns = rng.randint(2, 16)
            conv = [{"from": "human" if t % 2 == 0 else "gpt", "value": f"c{c} t{t}"} for t in range(n_turns)]
            if n_turns > 8:
                long_ids.add(f"sharegpt:conv{c}")
            fh.write(json.dumps({"id": f"conv{c}", "conversations": conv}) + "\n")
    return path, long_ids
