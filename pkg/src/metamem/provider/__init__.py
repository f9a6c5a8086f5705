from .base import (
    AuthenticationError,
    ChatProvider,
    CompletionRequest,
    Embedder,
    MalformedResponseError,
    ProviderError,
    ProviderUnavailable,
    TranscriptError,
    TranscriptExhausted,
    TranscriptMismatch,
    fingerprint,
)
from .http import EndpointConfig, HTTPChatProvider, HTTPEmbedder
from .scripted import FunctionProvider, HashEmbedder, ScriptedEmbedder, ScriptedProvider, load_transcript
from .stub import StubProvider
from .templates import (
    DEFAULT_CATALOG,
    PromptTemplate,
    TemplateCatalog,
    TemplateError,
    TemplateName,
    fill,
)

__all__ = [
    "AuthenticationError",
    "ChatProvider",
    "CompletionRequest",
    "DEFAULT_CATALOG",
    "Embedder",
    "EndpointConfig",
    "FunctionProvider",
    "HTTPChatProvider",
    "HTTPEmbedder",
    "HashEmbedder",
    "MalformedResponseError",
    "PromptTemplate",
    "ProviderError",
    "ProviderUnavailable",
    "ScriptedEmbedder",
    "ScriptedProvider",
    "StubProvider",
    "TemplateCatalog",
    "TemplateError",
    "TemplateName",
    "TranscriptError",
    "TranscriptExhausted",
    "TranscriptMismatch",
    "fill",
    "fingerprint",
    "load_transcript",
]
