"""Deterministic providers for tests and offline runs."""
from __future__ import annotations

import hashlib
import json
import math
import re
import threading
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .base import CompletionRequest, TranscriptExhausted, TranscriptMismatch


class ScriptedProvider:
    """Replays a transcript of responses, one entry per sample, in call order.

    An entry is either a bare string or a mapping with ``response`` and
    optional ``template`` / ``fingerprint`` keys; when present those are checked
    against the request and a mismatch raises. ``defaults`` maps template
    names to a response served once the entries run out; without a default an
    exhausted transcript raises.
    """

    def __init__(
        self,
        entries: Sequence[str | Mapping[str, Any]] = (),
        defaults: Mapping[str, str] | None = None,
        name: str = "scripted",
    ) -> None:
        self.entries = list(entries)
        self.defaults = dict(defaults or {})
        self.name = name
        self.position = 0
        self.calls: list[CompletionRequest] = []
        self._lock = threading.Lock()

    @classmethod
    def from_spec(cls, spec: Any, name: str = "scripted") -> ScriptedProvider:
        if isinstance(spec, list):
            return cls(spec, name=name)
        if isinstance(spec, dict):
            return cls(spec.get("entries", []), spec.get("defaults"), name=name)
        raise TypeError(f"transcript for {name!r} must be a list or an object, got {type(spec).__name__}")

    @property
    def remaining(self) -> int:
        return len(self.entries) - self.position

    def _next(self, req: CompletionRequest) -> str:
        if self.position >= len(self.entries):
            if req.template in self.defaults:
                return self.defaults[req.template]
            raise TranscriptExhausted(
                f"{self.name}: transcript exhausted after {len(self.entries)} entries "
                f"(request template {req.template or '?'!r})"
            )
        entry = self.entries[self.position]
        where = f"{self.name} entry {self.position}"
        self.position += 1
        if isinstance(entry, str):
            return entry
        want = entry.get("template")
        if want is not None and want != req.template:
            raise TranscriptMismatch(f"{where}: expected template {want!r}, request used {req.template!r}")
        want_fp = entry.get("fingerprint")
        if want_fp is not None and want_fp != req.fingerprint:
            raise TranscriptMismatch(f"{where}: fingerprint {req.fingerprint} != pinned {want_fp}")
        return entry["response"]

    def complete(self, req: CompletionRequest) -> list[str]:
        with self._lock:
            self.calls.append(req)
            return [self._next(req) for _ in range(req.n_samples)]


class FunctionProvider:
    """Answers each sample by calling ``fn(request, sample_index)``."""

    def __init__(self, fn: Callable[[CompletionRequest, int], str]) -> None:
        self.fn = fn
        self.calls: list[CompletionRequest] = []
        self._lock = threading.Lock()

    def complete(self, req: CompletionRequest) -> list[str]:
        with self._lock:
            self.calls.append(req)
            return [self.fn(req, i) for i in range(req.n_samples)]


class ScriptedEmbedder:
    """Exact table lookup; unknown texts raise."""

    def __init__(self, table: Mapping[str, Sequence[float]], dim: int | None = None) -> None:
        self.table = {k: [float(x) for x in v] for k, v in table.items()}
        dims = {len(v) for v in self.table.values()}
        if dim is None:
            if len(dims) != 1:
                raise ValueError("cannot infer embedding dimension from table")
            dim = dims.pop()
        elif dims - {dim}:
            raise ValueError(f"table vectors do not all have dimension {dim}")
        self.dim = dim

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        if not texts:
            raise ValueError("embed() needs at least one text")
        out = []
        for t in texts:
            if t not in self.table:
                raise TranscriptMismatch(f"no scripted embedding for text {t[:60]!r}")
            out.append(list(self.table[t]))
        return out


_TOKEN = re.compile(r"\w+")


class HashEmbedder:
    """Signed feature hashing of lower-cased word tokens, L2-normalised.

    Stable across processes (no reliance on ``hash()``), so offline runs are
    reproducible. Texts without word tokens map to the zero vector.
    """

    def __init__(self, dim: int = 256) -> None:
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim

    def _vector(self, text: str) -> list[float]:
        v = [0.0] * self.dim
        for tok in _TOKEN.findall(text.lower()):
            h = int.from_bytes(hashlib.blake2b(tok.encode(), digest_size=8).digest(), "big")
            v[h % self.dim] += 1.0 if (h >> 63) & 1 else -1.0
        norm = math.sqrt(sum(x * x for x in v))
        return [x / norm for x in v] if norm else v

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        if not texts:
            raise ValueError("embed() needs at least one text")
        return [self._vector(t) for t in texts]


def load_transcript(path: str | Path) -> dict[str, Any]:
    """Transcript file: a JSON object keyed by provider slot (actor, judge, classifier)."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError(f"{path}: transcript must be a JSON object keyed by provider slot")
    return data
