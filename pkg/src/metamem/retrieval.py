"""Exact cosine top-k over memory-unit embeddings."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import MemoryUnit, canonical_json


@dataclass(frozen=True)
class VectorIndex:
    dim: int
    ids: tuple[str, ...] = ()
    vectors: tuple[tuple[float, ...], ...] = field(default=(), repr=False)

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError("index dimension must be positive")
        if len(self.ids) != len(self.vectors):
            raise ValueError("ids and vectors differ in length")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate ids in index")
        for i, v in zip(self.ids, self.vectors):
            _check_vector(v, self.dim, i)

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def from_units(cls, dim: int, units: Iterable[MemoryUnit]) -> VectorIndex:
        idx = cls(dim)
        for u in units:
            idx = index_add(idx, u)
        return idx

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "entries": [{"id": i, "vector": list(v)} for i, v in zip(self.ids, self.vectors)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> VectorIndex:
        entries = d["entries"]
        return cls(
            dim=int(d["dim"]),
            ids=tuple(e["id"] for e in entries),
            vectors=tuple(tuple(float(x) for x in e["vector"]) for e in entries),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(canonical_json(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> VectorIndex:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _check_vector(v: Sequence[float], dim: int, what: str) -> None:
    if len(v) != dim:
        raise ValueError(f"{what}: vector has dimension {len(v)}, index expects {dim}")
    if not all(math.isfinite(x) for x in v):
        raise ValueError(f"{what}: vector has non-finite components")


def index_add(idx: VectorIndex, unit: MemoryUnit) -> VectorIndex:
    """Return a new index with ``unit`` appended, or its vector replaced if the id exists."""
    if unit.embedding is None:
        raise ValueError(f"memory unit {unit.id!r} has no embedding")
    vec = tuple(float(x) for x in unit.embedding)
    _check_vector(vec, idx.dim, unit.id)
    if unit.id in idx.ids:
        pos = idx.ids.index(unit.id)
        vectors = idx.vectors[:pos] + (vec,) + idx.vectors[pos + 1:]
        return VectorIndex(idx.dim, idx.ids, vectors)
    return VectorIndex(idx.dim, idx.ids + (unit.id,), idx.vectors + (vec,))


def cosine_scores(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Row-wise cosine similarity; rows (or a query) with zero norm score -inf."""
    row_norms = np.sqrt((matrix * matrix).sum(axis=1))
    q_norm = math.sqrt(float((query * query).sum()))
    # elementwise product + row sum rather than BLAS: identical rows must give identical scores
    dots = (matrix * query).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = dots / (row_norms * q_norm)
    scores[(row_norms == 0) | (q_norm == 0)] = -np.inf
    return scores


def top_k(idx: VectorIndex, query: Sequence[float], k: int) -> list[tuple[str, float]]:
    """Best ``min(k, len(idx))`` entries by cosine, ties broken by insertion order."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    _check_vector(query, idx.dim, "query")
    if not idx.ids:
        return []
    matrix = np.asarray(idx.vectors, dtype=np.float64)
    scores = cosine_scores(matrix, np.asarray(query, dtype=np.float64))
    order = np.lexsort((np.arange(len(scores)), -scores))[:k]
    return [(idx.ids[i], float(scores[i])) for i in order]


def query_text(question: str, question_date: str | None = None) -> str:
    return f"{question_date} {question}" if question_date else question
