from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence, runtime_checkable


class ProviderError(RuntimeError):
    """A model or embedding call failed."""


class ProviderUnavailable(ProviderError):
    """Network failure, timeout or 5xx that persisted through all retries."""


class AuthenticationError(ProviderError):
    pass


class MalformedResponseError(ProviderError):
    """The endpoint answered, but without the expected payload."""


class TranscriptError(RuntimeError):
    """Scripted replay diverged from its transcript. Never swallowed by the pipeline."""


class TranscriptExhausted(TranscriptError):
    pass


class TranscriptMismatch(TranscriptError):
    pass


def fingerprint(template: str, bindings: Mapping[str, str]) -> str:
    blob = json.dumps({"template": template, "bindings": dict(bindings)}, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class CompletionRequest:
    user: str
    system: str | None = None
    temperature: float = 0.0
    top_p: float = 1.0
    max_tokens: int = 1024
    n_samples: int = 1
    seed: int | None = None
    # which template produced the prompt; used by scripted/stub providers only
    template: str = ""
    fingerprint: str = ""
    bindings: Mapping[str, str] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        if not self.user.strip():
            raise ValueError("completion request needs a non-empty user message")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if not 0 < self.top_p <= 1:
            raise ValueError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be positive, got {self.max_tokens}")
        if self.n_samples < 1:
            raise ValueError(f"n_samples must be >= 1, got {self.n_samples}")

    def messages(self) -> list[dict[str, str]]:
        msgs = []
        if self.system:
            msgs.append({"role": "system", "content": self.system})
        msgs.append({"role": "user", "content": self.user})
        return msgs


@runtime_checkable
class ChatProvider(Protocol):
    def complete(self, req: CompletionRequest) -> list[str]: ...


@runtime_checkable
class Embedder(Protocol):
    dim: int

    def embed(self, texts: Sequence[str]) -> list[list[float]]: ...
