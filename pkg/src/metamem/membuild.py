"""Build a topic-aggregated MemorySet from raw sessions.

Sessions are grouped greedily by embedding similarity to running group
centroids, each group is summarized by the actor model, and the summaries are
embedded for retrieval.
"""
from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from datetime import datetime
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import EvalInstance, MemorySet, MemoryUnit, SchemaError, Session
from .provider import DEFAULT_CATALOG, ChatProvider, Embedder, ProviderError, TemplateCatalog, TemplateName
from .retrieval import cosine_scores

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.75
DEFAULT_CHAR_BUDGET = 4000

_RENDERED_TS = re.compile(r"^\d{4}/\d{2}/\d{2} \([A-Z][a-z]{2}\) \d{2}:\d{2}$")


def format_timestamp(ts: str) -> str:
    """Render as ``YYYY/MM/DD (Day) HH:MM``; unparseable strings pass through unchanged."""
    ts = ts.strip()
    if _RENDERED_TS.match(ts):
        return ts
    try:
        dt = datetime.fromisoformat(ts.replace("Z", "+00:00"))
    except ValueError:
        return ts
    return dt.strftime("%Y/%m/%d (%a) %H:%M")


def session_text(session: Session, char_budget: int = DEFAULT_CHAR_BUDGET) -> str:
    text = "\n".join(f"{t.role.value}: {t.text}" for t in session.turns)
    return text[:char_budget]


def render_sessions(group: Sequence[Session]) -> str:
    blocks = []
    for s in group:
        lines = []
        for t in s.turns:
            stamp = f"[{format_timestamp(t.timestamp)}] " if t.timestamp else ""
            lines.append(f"{stamp}{t.role.value}: {t.text}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def assign_topics(
    sessions: Sequence[Session],
    embedder: Embedder,
    threshold: float = DEFAULT_THRESHOLD,
    char_budget: int = DEFAULT_CHAR_BUDGET,
) -> list[list[Session]]:
    """Single greedy pass in input order: join the first group whose centroid is within
    ``threshold`` cosine similarity, else start a new group."""
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    if not sessions:
        return []
    vectors = np.asarray(embedder.embed([session_text(s, char_budget) for s in sessions]), dtype=np.float64)
    groups: list[list[Session]] = []
    sums: list[np.ndarray] = []
    for session, vec in zip(sessions, vectors):
        target = None
        if groups:
            centroids = np.stack([s / len(g) for s, g in zip(sums, groups)])
            scores = cosine_scores(centroids, vec)
            hits = np.nonzero(scores >= threshold)[0]
            if hits.size:
                target = int(hits[0])
        if target is None:
            groups.append([session])
            sums.append(vec.copy())
        else:
            groups[target].append(session)
            sums[target] = sums[target] + vec
    return groups


def _timestamps(group: Sequence[Session]) -> list[str]:
    seen: list[str] = []
    for s in group:
        for t in s.turns:
            if t.timestamp:
                ts = format_timestamp(t.timestamp)
                if ts not in seen:
                    seen.append(ts)
    return seen


def summarize_topic(
    group: Sequence[Session],
    actor: ChatProvider,
    unit_id: str = "m0",
    catalog: TemplateCatalog = DEFAULT_CATALOG,
    max_tokens: int = 2000,
) -> MemoryUnit:
    if not group:
        raise ValueError("cannot summarize an empty group")
    req = catalog.request(
        TemplateName.TOPIC_SUMMARIZE,
        {"sessions": render_sessions(group)},
        temperature=0.0,
        top_p=0.8,
        max_tokens=max_tokens,
    )
    reply = actor.complete(req)[0]
    lines = [ln.strip() for ln in reply.strip().splitlines() if ln.strip()]
    if not lines:
        raise ProviderError(f"empty topic summary for group starting with session {group[0].id!r}")
    topic = lines[0]
    summary = " ".join(lines[1:]) if len(lines) > 1 else lines[0]
    stamps = _timestamps(group)
    text = f"[{'; '.join(stamps)}] {summary}" if stamps else summary
    return MemoryUnit(id=unit_id, topic=topic, text=text, timestamp=stamps[0] if stamps else None)


def build_memory_set(
    sessions: Sequence[Session],
    actor: ChatProvider,
    embedder: Embedder,
    threshold: float = DEFAULT_THRESHOLD,
    char_budget: int = DEFAULT_CHAR_BUDGET,
    catalog: TemplateCatalog = DEFAULT_CATALOG,
    workers: int = 1,
) -> MemorySet:
    if not sessions:
        return MemorySet()
    groups = assign_topics(sessions, embedder, threshold, char_budget)

    def summarize(item: tuple[int, list[Session]]) -> MemoryUnit:
        i, group = item
        return summarize_topic(group, actor, unit_id=f"m{i}", catalog=catalog)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            units = list(pool.map(summarize, enumerate(groups)))
    else:
        units = [summarize(item) for item in enumerate(groups)]
    vectors = embedder.embed([u.text for u in units])
    for v in vectors:
        if len(v) != embedder.dim:
            raise ValueError(f"embedding dimension {len(v)} != configured {embedder.dim}")
    return MemorySet(tuple(u.with_embedding(v) for u, v in zip(units, vectors)))


def ensure_memory(
    data: Sequence[EvalInstance],
    actor: ChatProvider,
    embedder: Embedder,
    threshold: float = DEFAULT_THRESHOLD,
    char_budget: int = DEFAULT_CHAR_BUDGET,
    catalog: TemplateCatalog = DEFAULT_CATALOG,
) -> list[EvalInstance]:
    """Build memory for instances that carry raw sessions but no memory units."""
    out = []
    for inst in data:
        if not inst.memory.units and inst.sessions:
            mem = build_memory_set(inst.sessions, actor, embedder, threshold, char_budget, catalog)
            inst = replace(inst, memory=mem)
        out.append(inst)
    return out


def load_sessions(path: str | Path) -> list[Session]:
    """JSON Lines, one session per line: ``{"id", "turns": [{"role", "text", "timestamp"?}]}``."""
    sessions = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                sessions.append(Session.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    return sessions


def write_sessions(sessions: Iterable[Session], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sessions:
            fh.write(json.dumps(s.to_dict(), ensure_ascii=False) + "\n")
