"""Meta-memory-conditioned answer generation.

The Gen prompt built here is shared with training-time sampling, so the only
difference between the two is the sampling parameters.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

from .core import MemorySet, MemoryUnit, MetaMemoryState, Session, render_meta_memory
from .membuild import format_timestamp, render_sessions
from .provider import DEFAULT_CATALOG, ChatProvider, Embedder, TemplateCatalog, TemplateName
from .retrieval import VectorIndex, query_text, top_k

DEFAULT_TOPK = 20


class MemoryMode(str, enum.Enum):
    MEMORY = "memory"      # topic-aggregated memory units (default)
    FULLTEXT = "fulltext"  # every raw session, in order
    RAG = "rag"            # per-turn chunks retrieved top-k


@dataclass(frozen=True)
class InferenceOptions:
    temperature: float = 0.0
    top_p: float = 0.8
    max_tokens: int = 2000
    retrieve_topk: int | None = DEFAULT_TOPK
    mode: MemoryMode = MemoryMode.MEMORY


def experiences_section(state: MetaMemoryState) -> str:
    rendered = render_meta_memory(state)
    if not rendered:
        return ""
    return f"Memory usage experiences (apply them when reading the memories):\n{rendered}\n\n"


def gen_bindings(question: str, memory_text: str, state: MetaMemoryState, question_date: str | None = None) -> dict[str, str]:
    return {
        "experiences_section": experiences_section(state),
        "memory": memory_text or "(no memories)",
        "question_context": f"Current date: {question_date}\n" if question_date else "",
        "question": question,
    }


def render_memory_units(units: Sequence[MemoryUnit]) -> str:
    lines = []
    for u in units:
        if u.timestamp and format_timestamp(u.timestamp) not in u.text:
            lines.append(f"- [{format_timestamp(u.timestamp)}] {u.text}")
        else:
            lines.append(f"- {u.text}")
    return "\n".join(lines)


def retrieve_units(
    memory: MemorySet,
    question: str,
    embedder: Embedder | None,
    k: int | None = DEFAULT_TOPK,
    question_date: str | None = None,
) -> list[MemoryUnit]:
    """Top-k units for the question; the whole set, in stored order, when it already fits."""
    units = list(memory.units)
    if not k or len(units) <= k:
        return units
    if embedder is None:
        raise ValueError(f"memory set has {len(units)} units > top-k {k} but no embedder is configured")
    missing = [u for u in units if u.embedding is None]
    if missing:
        vectors = iter(embedder.embed([u.text for u in missing]))
        units = [u if u.embedding is not None else u.with_embedding(next(vectors)) for u in units]
    index = VectorIndex.from_units(embedder.dim, units)
    [qvec] = embedder.embed([query_text(question, question_date)])
    by_id = {u.id: u for u in units}
    return [by_id[i] for i, _ in top_k(index, qvec, k)]


def turn_chunks(sessions: Sequence[Session]) -> list[MemoryUnit]:
    chunks = []
    for s in sessions:
        for j, t in enumerate(s.turns):
            stamp = f"[{format_timestamp(t.timestamp)}] " if t.timestamp else ""
            chunks.append(MemoryUnit(id=f"{s.id}#{j}", topic=s.id, text=f"{stamp}{t.role.value}: {t.text}"))
    return chunks


def memory_context(
    question: str,
    memory: MemorySet,
    embedder: Embedder | None,
    opts: InferenceOptions = InferenceOptions(),
    question_date: str | None = None,
    sessions: Sequence[Session] = (),
) -> str:
    mode = MemoryMode(opts.mode)
    if mode is MemoryMode.FULLTEXT:
        return render_sessions(sessions)
    if mode is MemoryMode.RAG:
        chunks = MemorySet(tuple(turn_chunks(sessions)))
        return "\n".join(u.text for u in retrieve_units(chunks, question, embedder, opts.retrieve_topk, question_date))
    return render_memory_units(retrieve_units(memory, question, embedder, opts.retrieve_topk, question_date))


def answer(
    q: str,
    mem: MemorySet,
    state: MetaMemoryState,
    actor: ChatProvider,
    embedder: Embedder | None = None,
    opts: InferenceOptions = InferenceOptions(),
    question_date: str | None = None,
    sessions: Sequence[Session] = (),
    catalog: TemplateCatalog = DEFAULT_CATALOG,
) -> str:
    """Single greedy answer to ``q``; an empty ``state`` gives the plain memory-augmented prompt."""
    context = memory_context(q, mem, embedder, opts, question_date, sessions)
    req = catalog.request(
        TemplateName.GEN,
        gen_bindings(q, context, state, question_date),
        temperature=opts.temperature,
        top_p=opts.top_p,
        max_tokens=opts.max_tokens,
    )
    return actor.complete(req)[0]
