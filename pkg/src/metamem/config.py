"""Run configuration: defaults, flat ``key = value`` files, and command-line flags.

Precedence is flag > file > default. Every key has a flag named after it with
dots and underscores turned into hyphens (``actor.endpoint`` -> ``--actor-endpoint``).
"""
from __future__ import annotations

import argparse
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping

from .evolve import TrainConfig
from .infer import InferenceOptions, MemoryMode
from .provider import (
    EndpointConfig,
    HashEmbedder,
    HTTPChatProvider,
    HTTPEmbedder,
    ScriptedEmbedder,
    ScriptedProvider,
    StubProvider,
    load_transcript,
)


def _opt_int(value: str) -> int | None:
    if str(value).strip().lower() in ("", "none", "0"):
        return None
    return int(value)


def _bool(value: str) -> bool:
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


@dataclass(frozen=True)
class Option:
    type: Callable[[str], Any]
    default: Any
    help: str
    flag: str | None = None  # override for the derived flag name


OPTIONS: dict[str, Option] = {
    "seed": Option(int, 42, "seed for every random stream"),
    "k": Option(int, 5, "sampled responses per training instance"),
    "batch_size": Option(int, 50, "training batch size"),
    "epochs": Option(int, 5, "training epochs"),
    "sample_temperature": Option(float, 0.7, "sampling temperature during evolution"),
    "sample_top_p": Option(float, 0.95, "top-p during evolution"),
    "sample_max_tokens": Option(int, 4000, "max tokens during evolution"),
    "infer_temperature": Option(float, 0.0, "temperature at inference"),
    "infer_top_p": Option(float, 0.8, "top-p at inference"),
    "infer_max_tokens": Option(int, 2000, "max tokens at inference"),
    "retrieve_topk": Option(_opt_int, 20, "memory units retrieved per question (0 = all)"),
    "memory_mode": Option(str, "memory", "memory | fulltext | rag"),
    "threshold": Option(float, 0.75, "topic grouping cosine threshold"),
    "char_budget": Option(int, 4000, "characters of a session used for grouping"),
    "n_folds": Option(int, 5, "cross-validation folds"),
    "validation_fraction": Option(float, 0.125, "share of each fold's non-test data held out"),
    "filter_chunk_size": Option(_opt_int, None, "max proposed actions per filter call (0 = whole batch)"),
    "workers": Option(int, 1, "instances processed concurrently in a batch"),
    "timeout": Option(float, 120.0, "HTTP request timeout in seconds"),
    "inflight": Option(int, 8, "max concurrent HTTP requests per provider"),
    "retries": Option(int, 3, "HTTP retries on timeouts and 5xx"),
    "supports_n": Option(_bool, True, "endpoint honours the n parameter"),
    "transcript": Option(str, None, "scripted transcript JSON (keys: actor, judge, classifier, embed)"),
    "templates_dir": Option(str, None, "directory overriding packaged prompt templates"),
    "actor.kind": Option(str, "http", "http | stub | scripted"),
    "actor.endpoint": Option(str, "http://localhost:8000/v1", "actor base URL"),
    "actor.model": Option(str, "default", "actor model name"),
    "judge.kind": Option(str, "http", "http | stub | scripted"),
    "judge.endpoint": Option(str, "http://localhost:8000/v1", "judge base URL"),
    "judge.model": Option(str, "default", "judge model name"),
    "classifier.kind": Option(str, "http", "http | stub | scripted"),
    "classifier.endpoint": Option(str, "http://localhost:8000/v1", "classifier base URL"),
    "classifier.model": Option(str, "default", "classifier model name"),
    "embed.kind": Option(str, "hash", "hash | http | scripted"),
    "embed.endpoint": Option(str, "http://localhost:8000/v1", "embedding base URL"),
    "embed.model": Option(str, "all-MiniLM-L6-v2", "embedding model name"),
    "embed.dim": Option(int, 384, "embedding dimension"),
}

# keys that locate files rather than change results; excluded from the config hash
PATH_KEYS = {"transcript", "templates_dir"}


def flag_name(key: str) -> str:
    return "--" + key.replace(".", "-").replace("_", "-")


def dest_name(key: str) -> str:
    return "cfg_" + key.replace(".", "__")


def add_config_flags(parser: argparse.ArgumentParser, keys: list[str] | None = None) -> None:
    group = parser.add_argument_group("configuration")
    group.add_argument("--config", help="flat key = value configuration file")
    for key in keys or OPTIONS:
        opt = OPTIONS[key]
        names = [flag_name(key)]
        if key == "k":
            names = ["--k"]
        group.add_argument(*names, dest=dest_name(key), default=None, help=f"{opt.help} [{opt.default}]")


def parse_config_file(path: str | Path) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in OPTIONS:
            raise ValueError(f"{path}:{lineno}: unknown configuration key {key!r}")
        out[key] = value
    return out


def resolve(args: argparse.Namespace | Mapping[str, Any] | None = None, file: str | Path | None = None) -> dict[str, Any]:
    """Merge defaults, the config file and flags into typed settings."""
    values: dict[str, Any] = {k: o.default for k, o in OPTIONS.items()}
    ns = vars(args) if isinstance(args, argparse.Namespace) else dict(args or {})
    file = file or ns.get("config")
    if file:
        for k, v in parse_config_file(file).items():
            values[k] = OPTIONS[k].type(v)
    for k, opt in OPTIONS.items():
        v = ns.get(dest_name(k))
        if v is not None:
            values[k] = opt.type(v)
    return values


def train_config(s: Mapping[str, Any]) -> TrainConfig:
    return TrainConfig(
        k_samples=s["k"],
        batch_size=s["batch_size"],
        epochs=s["epochs"],
        sample_temperature=s["sample_temperature"],
        sample_top_p=s["sample_top_p"],
        sample_max_tokens=s["sample_max_tokens"],
        seed=s["seed"],
        retrieve_topk=s["retrieve_topk"],
        filter_chunk_size=s["filter_chunk_size"],
        workers=s["workers"],
    )


def inference_options(s: Mapping[str, Any]) -> InferenceOptions:
    return InferenceOptions(
        temperature=s["infer_temperature"],
        top_p=s["infer_top_p"],
        max_tokens=s["infer_max_tokens"],
        retrieve_topk=s["retrieve_topk"],
        mode=MemoryMode(s["memory_mode"]),
    )


def hashable_settings(s: Mapping[str, Any]) -> dict[str, Any]:
    return {k: v for k, v in s.items() if k not in PATH_KEYS}


class ProviderFactory:
    """Builds providers per slot (actor, judge, classifier, embed) on first use."""

    def __init__(self, settings: Mapping[str, Any], transport=None) -> None:
        self.s = settings
        self.transport = transport
        self._transcript: dict[str, Any] | None = None
        self._cache: dict[str, Any] = {}

    def transcript(self) -> dict[str, Any]:
        if self._transcript is None:
            if not self.s["transcript"]:
                raise ValueError("a scripted provider needs --transcript")
            self._transcript = load_transcript(self.s["transcript"])
        return self._transcript

    def _endpoint(self, slot: str, path: str) -> EndpointConfig:
        return EndpointConfig(
            endpoint=self.s[f"{slot}.endpoint"],
            model=self.s[f"{slot}.model"],
            timeout=self.s["timeout"],
            path=path,
            retries=self.s["retries"],
            max_inflight=self.s["inflight"],
            supports_n=self.s["supports_n"],
        )

    def _client(self):
        if self.transport is None:
            return None
        import httpx

        return httpx.Client(transport=self.transport, timeout=self.s["timeout"])

    def chat(self, slot: str):
        if slot not in self._cache:
            kind = self.s[f"{slot}.kind"]
            if kind == "http":
                p = HTTPChatProvider(self._endpoint(slot, "/chat/completions"), client=self._client())
            elif kind == "stub":
                p = StubProvider()
            elif kind == "scripted":
                t = self.transcript()
                if slot not in t:
                    raise ValueError(f"transcript has no {slot!r} section")
                p = ScriptedProvider.from_spec(t[slot], name=slot)
            else:
                raise ValueError(f"unknown provider kind {kind!r} for {slot}")
            self._cache[slot] = p
        return self._cache[slot]

    def embedder(self):
        if "embed" not in self._cache:
            kind = self.s["embed.kind"]
            dim = self.s["embed.dim"]
            if kind == "hash":
                e = HashEmbedder(dim)
            elif kind == "http":
                e = HTTPEmbedder(self._endpoint("embed", "/embeddings"), dim, client=self._client())
            elif kind == "scripted":
                e = ScriptedEmbedder(self.transcript().get("embed", {}), dim)
            else:
                raise ValueError(f"unknown embedder kind {kind!r}")
            self._cache["embed"] = e
        return self._cache["embed"]
