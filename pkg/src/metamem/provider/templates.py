"""Prompt template catalog and literal placeholder filling.

Placeholders are ``{identifier}``. Braces around anything that is not a bare
identifier (JSON examples, for instance) are left alone.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

from .base import CompletionRequest, fingerprint

PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


class TemplateError(ValueError):
    pass


class TemplateName(str, enum.Enum):
    GEN = "Gen"
    REFLECT = "Reflect"
    ACTION = "Action"
    FILTER = "Filter"
    JUDGE = "Judge"
    CLASSIFY = "Classify"
    TOPIC_SUMMARIZE = "TopicSummarize"


JUDGE_VARIANTS = ("general", "temporal", "knowledge_update", "preference", "abstention")

_FILES = {
    TemplateName.GEN: "gen",
    TemplateName.REFLECT: "reflect",
    TemplateName.ACTION: "action",
    TemplateName.FILTER: "filter",
    TemplateName.CLASSIFY: "classify",
    TemplateName.TOPIC_SUMMARIZE: "topic_summarize",
}


@dataclass(frozen=True)
class PromptTemplate:
    name: TemplateName
    template: str
    variant: str = ""

    @property
    def key(self) -> str:
        return f"{self.name.value}:{self.variant}" if self.variant else self.name.value

    @property
    def placeholders(self) -> frozenset[str]:
        return frozenset(PLACEHOLDER.findall(self.template))


def fill(tmpl: PromptTemplate, bindings: Mapping[str, str], strict: bool = True) -> str:
    """Substitute every placeholder in one pass; substituted text is never re-expanded."""
    needed = tmpl.placeholders
    missing = sorted(needed - bindings.keys())
    if missing:
        raise TemplateError(f"template {tmpl.key} missing binding(s) for: {', '.join(missing)}")
    if strict:
        unknown = sorted(bindings.keys() - needed)
        if unknown:
            raise TemplateError(f"template {tmpl.key} has no placeholder(s): {', '.join(unknown)}")
    return PLACEHOLDER.sub(lambda m: str(bindings[m.group(1)]), tmpl.template)


def _filename(name: TemplateName, variant: str) -> str:
    if name is TemplateName.JUDGE:
        if variant not in JUDGE_VARIANTS:
            raise TemplateError(f"unknown judge variant {variant!r}")
        return f"judge_{variant}.txt"
    return _FILES[name] + ".txt"


class TemplateCatalog:
    """Loads templates from an override directory when given, else the packaged defaults."""

    def __init__(self, directory: str | Path | None = None) -> None:
        self.directory = Path(directory) if directory else None
        self._cache: dict[tuple[TemplateName, str], PromptTemplate] = {}

    def get(self, name: TemplateName | str, variant: str = "") -> PromptTemplate:
        name = TemplateName(name)
        key = (name, variant)
        if key not in self._cache:
            fname = _filename(name, variant)
            if self.directory is not None and (self.directory / fname).exists():
                text = (self.directory / fname).read_text(encoding="utf-8")
            else:
                text = resources.files("metamem").joinpath("templates", fname).read_text(encoding="utf-8")
            self._cache[key] = PromptTemplate(name, text, variant)
        return self._cache[key]

    def request(
        self,
        name: TemplateName | str,
        bindings: Mapping[str, str],
        variant: str = "",
        **params,
    ) -> CompletionRequest:
        """Fill a template and wrap it into a request tagged with its fingerprint."""
        tmpl = self.get(name, variant)
        return CompletionRequest(
            user=fill(tmpl, bindings),
            template=tmpl.name.value,
            fingerprint=fingerprint(tmpl.key, bindings),
            bindings=dict(bindings),
            **params,
        )


DEFAULT_CATALOG = TemplateCatalog()
