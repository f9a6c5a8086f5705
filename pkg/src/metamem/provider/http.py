"""HTTP clients for OpenAI-compatible chat-completion and embedding endpoints."""
from __future__ import annotations

import logging
import math
import os
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import httpx
import jsonschema

from .base import (
    AuthenticationError,
    CompletionRequest,
    MalformedResponseError,
    ProviderError,
    ProviderUnavailable,
)

logger = logging.getLogger(__name__)

API_KEY_ENV = "METAMEM_API_KEY"

CHAT_BODY_SCHEMA = {
    "type": "object",
    "required": ["model", "messages", "temperature", "top_p", "max_tokens", "n"],
    "properties": {
        "model": {"type": "string", "minLength": 1},
        "messages": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["role", "content"],
                "properties": {
                    "role": {"enum": ["system", "user", "assistant"]},
                    "content": {"type": "string"},
                },
            },
        },
        "temperature": {"type": "number", "minimum": 0},
        "top_p": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "max_tokens": {"type": "integer", "minimum": 1},
        "n": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
    },
}

EMBED_BODY_SCHEMA = {
    "type": "object",
    "required": ["model", "input"],
    "properties": {
        "model": {"type": "string", "minLength": 1},
        "input": {"type": "array", "minItems": 1, "items": {"type": "string"}},
    },
}


# built once: jsonschema.validate() re-checks the schema itself on every call
_CHAT_VALIDATOR = jsonschema.Draft202012Validator(CHAT_BODY_SCHEMA)
_EMBED_VALIDATOR = jsonschema.Draft202012Validator(EMBED_BODY_SCHEMA)


def api_key_from_env() -> str | None:
    return os.environ.get(API_KEY_ENV) or os.environ.get("OPENAI_API_KEY")


@dataclass(frozen=True)
class EndpointConfig:
    endpoint: str
    model: str
    api_key: str | None = None
    timeout: float = 120.0
    path: str = "/chat/completions"
    retries: int = 3
    backoff: float = 1.0
    max_inflight: int = 8
    supports_n: bool = True


class _HTTPBase:
    def __init__(
        self,
        config: EndpointConfig,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.config = config
        self._client = client or httpx.Client(timeout=config.timeout)
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(config.max_inflight)

    @property
    def url(self) -> str:
        return self.config.endpoint.rstrip("/") + "/" + self.config.path.lstrip("/")

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = self.config.api_key or api_key_from_env()
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, body: dict[str, Any]) -> Any:
        """POST with retry on timeouts, transport errors and 5xx (backoff 1s, 2s, 4s by default)."""
        last: Exception | None = None
        for attempt in range(self.config.retries + 1):
            if attempt:
                delay = self.config.backoff * 2 ** (attempt - 1)
                logger.warning("retrying %s in %.1fs after: %s", self.url, delay, last)
                self._sleep(delay)
            try:
                with self._slots:
                    resp = self._client.post(self.url, json=body, headers=self._headers())
            except (httpx.TimeoutException, httpx.TransportError) as exc:
                last = exc
                continue
            if resp.status_code >= 500:
                last = ProviderError(f"HTTP {resp.status_code}: {resp.text[:300]}")
                continue
            if resp.status_code in (401, 403):
                raise AuthenticationError(f"HTTP {resp.status_code} from {self.url}: {resp.text[:300]}")
            if resp.status_code >= 400:
                raise ProviderError(f"HTTP {resp.status_code} from {self.url}: {resp.text[:300]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise MalformedResponseError(f"non-JSON response from {self.url}") from exc
        raise ProviderUnavailable(
            f"{self.url} failed after {self.config.retries + 1} attempts: {last}"
        )

    def close(self) -> None:
        self._client.close()


class HTTPChatProvider(_HTTPBase):
    """Chat-completion client; ``complete`` always returns exactly ``n_samples`` strings."""

    def body(self, req: CompletionRequest, n: int, seed: int | None) -> dict[str, Any]:
        body: dict[str, Any] = {
            "model": self.config.model,
            "messages": req.messages(),
            "temperature": req.temperature,
            "top_p": req.top_p,
            "max_tokens": req.max_tokens,
            "n": n,
        }
        if seed is not None:
            body["seed"] = seed
        _CHAT_VALIDATOR.validate(body)
        return body

    def _choices(self, data: Any) -> list[str]:
        try:
            choices = data["choices"]
        except (KeyError, TypeError):
            raise MalformedResponseError("response has no 'choices'") from None
        out = []
        for i, choice in enumerate(choices):
            try:
                content = choice["message"]["content"]
            except (KeyError, TypeError):
                content = None
            if not isinstance(content, str) or not content:
                raise MalformedResponseError(f"choice {i} has no message content")
            out.append(content)
        if not out:
            raise MalformedResponseError("response has an empty 'choices' list")
        return out

    def complete(self, req: CompletionRequest) -> list[str]:
        n = req.n_samples
        out: list[str] = []
        if self.config.supports_n or n == 1:
            out = self._choices(self._post(self.body(req, n, req.seed)))[:n]
        # endpoint ignored n (or cannot do it): top up with sequential single-sample calls
        base = req.seed if req.seed is not None else 0
        while len(out) < n:
            seed = base + len(out)
            out.append(self._choices(self._post(self.body(req, 1, seed)))[0])
        return out


class HTTPEmbedder(_HTTPBase):
    def __init__(
        self,
        config: EndpointConfig,
        dim: int,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        super().__init__(config, client, sleep)
        self.dim = dim

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        if not texts:
            raise ValueError("embed() needs at least one text")
        body = {"model": self.config.model, "input": list(texts)}
        _EMBED_VALIDATOR.validate(body)
        data = self._post(body)
        try:
            items = sorted(data["data"], key=lambda d: d.get("index", 0))
            vectors = [[float(x) for x in item["embedding"]] for item in items]
        except (KeyError, TypeError, ValueError):
            raise MalformedResponseError("embedding response missing data[i].embedding") from None
        if len(vectors) != len(texts):
            raise MalformedResponseError(f"asked for {len(texts)} embeddings, got {len(vectors)}")
        for v in vectors:
            if len(v) != self.dim:
                raise ProviderError(f"embedding dimension {len(v)} does not match configured {self.dim}")
            if not all(math.isfinite(x) for x in v):
                raise MalformedResponseError("embedding has non-finite components")
        return vectors
