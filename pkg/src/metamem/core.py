"""Domain types shared across the pipeline, plus meta-memory rendering and checkpoints."""
from __future__ import annotations

import enum
import hashlib
import json
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    """A serialized object does not match the expected shape or violates an invariant."""


def substream(seed: int, name: str) -> random.Random:
    """Independent, reproducible RNG stream derived from the run seed."""
    return random.Random(f"{name}:{seed}")


def derive_seed(seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{name}:{seed}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=2) + "\n"


def config_hash(config: Mapping[str, Any]) -> str:
    blob = json.dumps(config, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _parse_enum(cls: type[enum.Enum], value: Any, what: str) -> Any:
    try:
        return cls(value)
    except ValueError:
        allowed = ", ".join(m.value for m in cls)
        raise SchemaError(f"unknown {what} {value!r} (expected one of: {allowed})") from None


# ---------------------------------------------------------------------------
# meta-memory


@dataclass(frozen=True)
class MetaUnit:
    id: int
    text: str
    created_step: int = 0
    last_modified_step: int = 0

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("meta-memory unit text must be non-empty")
        if self.created_step < 0 or self.last_modified_step < self.created_step:
            raise ValueError(
                f"unit {self.id}: need 0 <= created_step <= last_modified_step, "
                f"got {self.created_step}, {self.last_modified_step}"
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "text": self.text,
            "created_step": self.created_step,
            "last_modified_step": self.last_modified_step,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> MetaUnit:
        return cls(
            id=int(d["id"]),
            text=d["text"],
            created_step=int(d["created_step"]),
            last_modified_step=int(d["last_modified_step"]),
        )


@dataclass(frozen=True)
class MetaMemoryState:
    """Ordered experience units at optimization step ``step``.

    ``next_id`` is the id the next added unit receives; ids are never reused.
    """

    units: tuple[MetaUnit, ...] = ()
    step: int = 0
    next_id: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "units", tuple(self.units))
        ids = [u.id for u in self.units]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate meta-memory unit ids: {ids}")
        if self.step < 0:
            raise ValueError("step must be >= 0")
        if ids and self.next_id <= max(ids):
            raise ValueError(f"next_id {self.next_id} would reuse an existing id")

    def __len__(self) -> int:
        return len(self.units)

    @property
    def texts(self) -> list[str]:
        return [u.text for u in self.units]

    def to_dict(self) -> dict[str, Any]:
        return {
            "step": self.step,
            "next_id": self.next_id,
            "units": [u.to_dict() for u in self.units],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> MetaMemoryState:
        return cls(
            units=tuple(MetaUnit.from_dict(u) for u in d["units"]),
            step=int(d["step"]),
            next_id=int(d["next_id"]),
        )


def render_meta_memory(state: MetaMemoryState) -> str:
    """One ``[j] text`` line per unit, 1-based; empty string for an empty state."""
    return "\n".join(f"[{j}] {u.text}" for j, u in enumerate(state.units, start=1))


# ---------------------------------------------------------------------------
# factual memory


@dataclass(frozen=True)
class MemoryUnit:
    id: str
    topic: str
    text: str
    timestamp: str | None = None
    embedding: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError(f"memory unit {self.id!r} has empty text")
        if self.embedding is not None:
            emb = tuple(float(x) for x in self.embedding)
            if not all(math.isfinite(x) for x in emb):
                raise ValueError(f"memory unit {self.id!r} has a non-finite embedding")
            object.__setattr__(self, "embedding", emb)

    def with_embedding(self, vector: Sequence[float]) -> MemoryUnit:
        return replace(self, embedding=tuple(float(x) for x in vector))

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"id": self.id, "topic": self.topic, "text": self.text}
        if self.timestamp is not None:
            d["timestamp"] = self.timestamp
        if self.embedding is not None:
            d["embedding"] = list(self.embedding)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> MemoryUnit:
        emb = d.get("embedding")
        return cls(
            id=str(d["id"]),
            topic=d.get("topic", ""),
            text=d["text"],
            timestamp=d.get("timestamp"),
            embedding=tuple(emb) if emb is not None else None,
        )


@dataclass(frozen=True)
class MemorySet:
    units: tuple[MemoryUnit, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "units", tuple(self.units))
        ids = [u.id for u in self.units]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate memory unit ids: {ids}")

    def __len__(self) -> int:
        return len(self.units)

    def __iter__(self):
        return iter(self.units)

    def check_dim(self, dim: int) -> None:
        for u in self.units:
            if u.embedding is not None and len(u.embedding) != dim:
                raise ValueError(
                    f"memory unit {u.id!r} embedding has dimension {len(u.embedding)}, expected {dim}"
                )

    def to_list(self) -> list[dict[str, Any]]:
        return [u.to_dict() for u in self.units]

    @classmethod
    def from_list(cls, items: Iterable[Mapping[str, Any]]) -> MemorySet:
        return cls(tuple(MemoryUnit.from_dict(d) for d in items))


# ---------------------------------------------------------------------------
# raw interaction history


class Role(str, enum.Enum):
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class Turn:
    role: Role
    text: str
    timestamp: str | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.role, Role):
            object.__setattr__(self, "role", _parse_enum(Role, self.role, "role"))


@dataclass(frozen=True)
class Session:
    id: str
    turns: tuple[Turn, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "turns", tuple(self.turns))
        if not self.turns:
            raise ValueError(f"session {self.id!r} has no turns")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "turns": [
                {"role": t.role.value, "text": t.text, **({"timestamp": t.timestamp} if t.timestamp else {})}
                for t in self.turns
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Session:
        try:
            turns = tuple(Turn(Role(t["role"]), t["text"], t.get("timestamp")) for t in d["turns"])
        except ValueError as exc:
            raise SchemaError(f"session {d.get('id')!r}: {exc}") from None
        return cls(id=str(d["id"]), turns=turns)


# ---------------------------------------------------------------------------
# evaluation data


class Category(str, enum.Enum):
    SINGLE_USER = "single_user"
    SINGLE_ASSISTANT = "single_assistant"
    MULTI_SESSION = "multi_session"
    TEMPORAL_REASONING = "temporal_reasoning"
    KNOWLEDGE_UPDATE = "knowledge_update"
    SINGLE_PREFERENCE = "single_preference"
    OTHER = "other"


@dataclass(frozen=True)
class EvalInstance:
    id: str
    question: str
    answer: str
    memory: MemorySet = field(default_factory=MemorySet)
    category: Category = Category.OTHER
    question_date: str | None = None
    abstention: bool = False
    sessions: tuple[Session, ...] = ()

    def __post_init__(self) -> None:
        if not self.question.strip():
            raise ValueError(f"instance {self.id!r}: empty question")
        if not self.answer.strip():
            raise ValueError(f"instance {self.id!r}: empty answer")
        if not isinstance(self.category, Category):
            object.__setattr__(self, "category", _parse_enum(Category, self.category, "category"))
        object.__setattr__(self, "sessions", tuple(self.sessions))

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "id": self.id,
            "question": self.question,
            "answer": self.answer,
            "category": self.category.value,
            "memory": self.memory.to_list(),
        }
        if self.question_date is not None:
            d["question_date"] = self.question_date
        if self.abstention:
            d["abstention"] = True
        if self.sessions:
            d["sessions"] = [s.to_dict() for s in self.sessions]
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> EvalInstance:
        return cls(
            id=str(d["id"]),
            question=d["question"],
            answer=str(d["answer"]),
            memory=MemorySet.from_list(d.get("memory", [])),
            category=_parse_enum(Category, d.get("category", "other"), "category"),
            question_date=d.get("question_date"),
            abstention=bool(d.get("abstention", False)),
            sessions=tuple(Session.from_dict(s) for s in d.get("sessions", [])),
        )


Dataset = Sequence[EvalInstance]


@dataclass(frozen=True)
class TrainingBatch:
    step: int
    instances: tuple[EvalInstance, ...]
    batch_id: str = ""


# ---------------------------------------------------------------------------
# evolution records


@dataclass(frozen=True)
class Trajectory:
    response: str
    sample_index: int
    verdict: int | None = None
    reflection: str | None = None

    def __post_init__(self) -> None:
        if self.verdict not in (None, 0, 1):
            raise ValueError(f"verdict must be 0 or 1, got {self.verdict!r}")
        if self.sample_index < 0:
            raise ValueError("sample_index must be >= 0")


class ActionKind(str, enum.Enum):
    ADD = "ADD"
    DEL = "DEL"
    MOD = "MOD"


@dataclass(frozen=True)
class UpdateAction:
    """One edit to the meta-memory. ``index`` is 0-based into the batch-start state."""

    kind: ActionKind
    index: int | None = None
    content: str | None = None
    provenance: str = ""

    def __post_init__(self) -> None:
        if not isinstance(self.kind, ActionKind):
            object.__setattr__(self, "kind", _parse_enum(ActionKind, self.kind, "action"))
        needs_index = self.kind is not ActionKind.ADD
        needs_content = self.kind is not ActionKind.DEL
        if needs_index != (self.index is not None):
            raise ValueError(f"{self.kind.value} action {'requires' if needs_index else 'forbids'} an index")
        if needs_content != (self.content is not None):
            raise ValueError(f"{self.kind.value} action {'requires' if needs_content else 'forbids'} content")
        if self.content is not None and not self.content.strip():
            raise ValueError(f"{self.kind.value} action has empty content")
        if self.index is not None and self.index < 0:
            raise ValueError(f"negative action index {self.index}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "action": self.kind.value,
            "index": self.index,
            "content": self.content,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> UpdateAction:
        return cls(
            kind=_parse_enum(ActionKind, d["action"], "action"),
            index=d.get("index"),
            content=d.get("content"),
            provenance=d.get("provenance", ""),
        )


@dataclass(frozen=True)
class ActionSet:
    step: int
    actions: tuple[UpdateAction, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "actions", tuple(self.actions))

    def __len__(self) -> int:
        return len(self.actions)

    def __iter__(self):
        return iter(self.actions)

    def counts(self) -> dict[str, int]:
        c = {k.value: 0 for k in ActionKind}
        for a in self.actions:
            c[a.kind.value] += 1
        return c


@dataclass(frozen=True)
class BatchRecord:
    step: int
    batch_id: str
    proposed: int
    kept: int
    counts: Mapping[str, int]
    kept_actions: tuple[UpdateAction, ...] = ()
    instances: int = 0
    failed: int = 0
    verdict_rate: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "step": self.step,
            "batch_id": self.batch_id,
            "proposed": self.proposed,
            "kept": self.kept,
            "counts": dict(self.counts),
            "kept_actions": [a.to_dict() for a in self.kept_actions],
            "instances": self.instances,
            "failed": self.failed,
            "verdict_rate": self.verdict_rate,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> BatchRecord:
        counts = d["counts"]
        for key in counts:
            _parse_enum(ActionKind, key, "action")
        return cls(
            step=int(d["step"]),
            batch_id=d["batch_id"],
            proposed=int(d["proposed"]),
            kept=int(d["kept"]),
            counts={k: int(v) for k, v in counts.items()},
            kept_actions=tuple(UpdateAction.from_dict(a) for a in d.get("kept_actions", [])),
            instances=int(d.get("instances", 0)),
            failed=int(d.get("failed", 0)),
            verdict_rate=d.get("verdict_rate"),
        )


@dataclass(frozen=True)
class Checkpoint:
    state: MetaMemoryState
    config_hash: str = ""
    batch_log: tuple[BatchRecord, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "batch_log", tuple(self.batch_log))
        if len(self.batch_log) != self.state.step:
            raise ValueError(
                f"batch_log has {len(self.batch_log)} entries but state is at step {self.state.step}"
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "config_hash": self.config_hash,
            "state": self.state.to_dict(),
            "batch_log": [r.to_dict() for r in self.batch_log],
        }

    def dumps(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Checkpoint:
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise SchemaError(f"unsupported checkpoint schema_version {version!r} (expected {SCHEMA_VERSION})")
        try:
            return cls(
                state=MetaMemoryState.from_dict(d["state"]),
                config_hash=d.get("config_hash", ""),
                batch_log=tuple(BatchRecord.from_dict(r) for r in d["batch_log"]),
            )
        except SchemaError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"invalid checkpoint: {exc}") from exc


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(ckpt.dumps(), encoding="utf-8")
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    return Checkpoint.from_dict(data)
