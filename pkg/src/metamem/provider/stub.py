"""Rule-based offline provider.

Produces plausible, fully deterministic replies for every template so the whole
pipeline (including ``crossval``) can run without a model server. Answers are
not meant to be good; they exercise every stage.
"""
from __future__ import annotations

import json
import re
import threading

from .base import CompletionRequest

_WORDS = re.compile(r"[a-z0-9]+")


def _norm(text: str) -> str:
    return " ".join(_WORDS.findall(text.lower()))


def _first_memory_line(memory: str) -> str:
    for line in memory.splitlines():
        if line.strip():
            return line.strip()
    return "I don't know."


class StubProvider:
    def __init__(self) -> None:
        self.calls: list[CompletionRequest] = []
        self._lock = threading.Lock()

    def complete(self, req: CompletionRequest) -> list[str]:
        with self._lock:
            self.calls.append(req)
        handler = getattr(self, f"_{req.template.lower()}", None)
        if handler is None:
            return ["OK"] * req.n_samples
        return [handler(req.bindings, i) for i in range(req.n_samples)]

    def _gen(self, b, i: int) -> str:
        memory = b.get("memory", "")
        lines = [ln.strip() for ln in memory.splitlines() if ln.strip()]
        if not lines:
            return "I don't know."
        return lines[i % len(lines)]

    def _judge(self, b, i: int) -> str:
        answer = _norm(b.get("answer", ""))
        return "yes" if answer and answer in _norm(b.get("response", "")) else "no"

    def _reflect(self, b, i: int) -> str:
        label = b.get("verdict_label", "")
        if label == "correct":
            return "The response located the memory holding the answer and stated it directly."
        return "The response did not locate the memory holding the answer; it should scan all memories for the asked entity."

    def _action(self, b, i: int) -> str:
        if "did not locate" not in b.get("reflections", ""):
            return "[]"
        question = b.get("question", "")
        words = _WORDS.findall(question.lower())
        cue = words[0] if words else "the"
        return json.dumps(
            [{"action": "ADD", "index": None,
              "content": f"For '{cue}' questions, scan every memory for the asked entity before answering."}]
        )

    def _filter(self, b, i: int) -> str:
        kept = []
        seen = set()
        for line in b.get("proposed_actions", "").splitlines():
            line = line.strip()
            if not line.startswith("{"):
                continue
            obj = json.loads(line)
            key = (obj["action"], obj.get("index"), obj.get("content"))
            if key in seen:
                continue
            seen.add(key)
            kept.append({"action": obj["action"], "index": obj.get("index"), "content": obj.get("content")})
        return json.dumps(kept)

    def _classify(self, b, i: int) -> str:
        return "Specific" if re.search(r"'[^']+'", b.get("unit", "")) else "General"

    def _topicsummarize(self, b, i: int) -> str:
        text = b.get("sessions", "")
        first = _first_memory_line(text)
        label = " ".join(_WORDS.findall(first.lower())[:3]) or "misc"
        body = " ".join(ln.strip() for ln in text.splitlines() if ln.strip())
        return f"{label}\n{body[:600]}"
