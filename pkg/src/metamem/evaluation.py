"""Dataset ingestion, fold protocol, judge-based scoring and meta-unit classification."""
from __future__ import annotations

import csv
import io
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .core import (
    Category,
    EvalInstance,
    MetaMemoryState,
    Role,
    SchemaError,
    Session,
    Trajectory,
    Turn,
    canonical_json,
    substream,
)
from .evolve import judge_response
from .provider import DEFAULT_CATALOG, AuthenticationError, ChatProvider, ProviderError, TemplateCatalog, TemplateName

logger = logging.getLogger(__name__)

LONGMEMEVAL_TYPES = {
    "single-session-user": Category.SINGLE_USER,
    "single-session-assistant": Category.SINGLE_ASSISTANT,
    "multi-session": Category.MULTI_SESSION,
    "temporal-reasoning": Category.TEMPORAL_REASONING,
    "knowledge-update": Category.KNOWLEDGE_UPDATE,
    "single-session-preference": Category.SINGLE_PREFERENCE,
}

# column order of the published results table
TABLE_COLUMNS = (
    (Category.SINGLE_USER, "Single User"),
    (Category.SINGLE_ASSISTANT, "Single Assistant"),
    (Category.MULTI_SESSION, "Multi Session"),
    (Category.TEMPORAL_REASONING, "Temporal Reasoning"),
    (Category.KNOWLEDGE_UPDATE, "Knowledge Update"),
    (Category.SINGLE_PREFERENCE, "Single Preference"),
)


# ---------------------------------------------------------------------------
# ingestion


def _lme_record(rec: Mapping[str, Any]) -> EvalInstance:
    qid = str(rec.get("question_id", "?"))
    try:
        qtype = rec["question_type"]
        if qtype not in LONGMEMEVAL_TYPES:
            raise SchemaError(f"unknown question_type {qtype!r}")
        dates = rec.get("haystack_dates") or []
        sids = rec.get("haystack_session_ids") or []
        sessions = []
        for j, raw in enumerate(rec.get("haystack_sessions") or []):
            ts = dates[j] if j < len(dates) else None
            turns = tuple(Turn(Role(t["role"]), t["content"], ts) for t in raw if t.get("content"))
            if turns:
                sessions.append(Session(id=str(sids[j]) if j < len(sids) else f"{qid}-s{j}", turns=turns))
        return EvalInstance(
            id=qid,
            question=rec["question"],
            answer=str(rec["answer"]),
            category=LONGMEMEVAL_TYPES[qtype],
            question_date=rec.get("question_date"),
            abstention=qid.endswith("_abs"),
            sessions=tuple(sessions),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"LongMemEval record {qid!r}: {exc}") from exc


def load_longmemeval(path: str | Path) -> list[EvalInstance]:
    """Read the benchmark's JSON array (question_id, question_type, question, answer,
    question_date, haystack_sessions/dates/session_ids)."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        records = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(records, list):
        raise SchemaError(f"{path}: expected a JSON array of records")
    return [_lme_record(r) for r in records]


_SHAREGPT_ROLES = {"human": Role.USER, "user": Role.USER, "gpt": Role.ASSISTANT, "assistant": Role.ASSISTANT,
                   "chatgpt": Role.ASSISTANT, "bard": Role.ASSISTANT, "bing": Role.ASSISTANT}

PREDICT_USER_QUESTION = "Based on the conversation so far, what is the user's next question?"


def _sharegpt_turns(rec: Mapping[str, Any]) -> list[Turn]:
    turns = []
    if "conversations" in rec:
        for m in rec["conversations"]:
            role = _SHAREGPT_ROLES.get(str(m.get("from", "")).lower())
            if role is not None and str(m.get("value", "")).strip():
                turns.append(Turn(role, m["value"]))
    else:
        for m in rec.get("messages", []):
            role = _SHAREGPT_ROLES.get(str(m.get("role", "")).lower())
            if role is not None and str(m.get("content", "")).strip():
                turns.append(Turn(role, m["content"]))
    return turns


def _sharegpt_instance(conv_id: str, turns: list[Turn], predict_user: bool) -> EvalInstance | None:
    roles = [t.role for t in turns]
    if predict_user:
        last_user = max((i for i, r in enumerate(roles) if r is Role.USER), default=None)
        if not last_user:
            return None
        history, question, answer = turns[:last_user], PREDICT_USER_QUESTION, turns[last_user].text
    else:
        j = max((i for i in range(1, len(turns)) if roles[i] is Role.ASSISTANT and roles[i - 1] is Role.USER),
                default=None)
        if j is None or j < 2:
            return None
        history, question, answer = turns[:j - 1], turns[j - 1].text, turns[j].text
    return EvalInstance(
        id=f"sharegpt:{conv_id}",
        question=question,
        answer=answer,
        category=Category.OTHER,
        sessions=(Session(id=str(conv_id), turns=tuple(history)),),
    )


def load_sharegpt(
    path: str | Path,
    min_turns: int = 8,
    n: int = 1000,
    seed: int = 42,
    predict_user: bool = False,
) -> list[EvalInstance]:
    """Keep conversations with more than ``min_turns`` turns and draw ``n`` of them.

    By default the held-out pair is the final user turn and the assistant reply to
    it; ``predict_user`` instead asks for the final user turn itself.
    """
    candidates = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc.msg}") from exc
            turns = _sharegpt_turns(rec)
            if len(turns) <= min_turns:
                continue
            inst = _sharegpt_instance(str(rec.get("id", lineno)), turns, predict_user)
            if inst is not None:
                candidates.append(inst)
    if len(candidates) < n:
        raise ValueError(f"only {len(candidates)} conversations have more than {min_turns} turns; {n} requested")
    return substream(seed, "sharegpt-sample").sample(candidates, n)


def load_dataset(path: str | Path) -> list[EvalInstance]:
    """Native JSON Lines format: one serialized EvalInstance per line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(EvalInstance.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    return out


def write_dataset(data: Iterable[EvalInstance], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in data:
            fh.write(json.dumps(inst.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# folds


@dataclass(frozen=True)
class Fold:
    test: tuple[str, ...]
    train: tuple[str, ...]
    validation: tuple[str, ...]


@dataclass(frozen=True)
class FoldPlan:
    n_folds: int
    seed: int
    splits: tuple[Fold, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_folds": self.n_folds,
            "seed": self.seed,
            "splits": [{"test": list(f.test), "train": list(f.train), "validation": list(f.validation)}
                       for f in self.splits],
        }


def make_folds(
    ids: Sequence[str] | Sequence[EvalInstance],
    n_folds: int = 5,
    seed: int = 42,
    validation_fraction: float = 0.125,
) -> FoldPlan:
    """Seeded shuffle into ``n_folds`` test blocks (the last absorbs any remainder);
    the rest of each fold is split into train and a trailing validation slice.

    With 500 ids and the defaults every fold is 100 test / 350 train / 50 validation.
    """
    if n_folds < 2:
        raise ValueError(f"need at least 2 folds, got {n_folds}")
    ids = [x.id if isinstance(x, EvalInstance) else x for x in ids]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate ids")
    if len(ids) < n_folds:
        raise ValueError(f"{len(ids)} items cannot fill {n_folds} folds")
    perm = list(ids)
    substream(seed, "fold-split").shuffle(perm)
    block = len(perm) // n_folds
    splits = []
    for i in range(n_folds):
        end = (i + 1) * block if i < n_folds - 1 else len(perm)
        test = perm[i * block:end]
        in_test = set(test)
        rest = [x for x in perm if x not in in_test]
        n_val = round(len(rest) * validation_fraction)
        cut = len(rest) - n_val
        splits.append(Fold(tuple(test), tuple(rest[:cut]), tuple(rest[cut:])))
    return FoldPlan(n_folds, seed, tuple(splits))


# ---------------------------------------------------------------------------
# scoring


def micro_average(per_category: Mapping[Any, tuple[float, int]]) -> float | None:
    """Instance-weighted mean of per-category accuracies given as (accuracy, count)."""
    total = sum(n for _, n in per_category.values())
    if not total:
        return None
    return sum(acc * n for acc, n in per_category.values()) / total


@dataclass(frozen=True)
class RunReport:
    records: tuple[tuple[str, str, int], ...]  # (instance id, category, verdict), sorted by id
    label: str = ""

    @classmethod
    def from_records(cls, records: Iterable[tuple[str, Category | str, int]], label: str = "") -> RunReport:
        rows = sorted((i, Category(c).value, int(v)) for i, c, v in records)
        return cls(tuple(rows), label)

    def counts(self) -> dict[str, tuple[int, int]]:
        correct: Counter = Counter()
        total: Counter = Counter()
        for _, cat, v in self.records:
            total[cat] += 1
            correct[cat] += v
        return {c: (correct[c], total[c]) for c in total}

    @property
    def accuracy(self) -> dict[str, float]:
        return {c: 100.0 * k / n for c, (k, n) in self.counts().items()}

    @property
    def overall(self) -> float | None:
        acc = self.accuracy
        return micro_average({c: (acc[c], n) for c, (_, n) in self.counts().items()})

    def to_dict(self) -> dict[str, Any]:
        counts = self.counts()
        return {
            "label": self.label,
            "accuracy": {c: round(a, 4) for c, a in sorted(self.accuracy.items())},
            "counts": {c: {"correct": k, "total": n} for c, (k, n) in sorted(counts.items())},
            "overall": None if self.overall is None else round(self.overall, 4),
            "records": [{"id": i, "category": c, "verdict": v} for i, c, v in self.records],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> RunReport:
        return cls.from_records(((r["id"], r["category"], r["verdict"]) for r in d["records"]), d.get("label", ""))

    def columns(self) -> list[tuple[str, float | None]]:
        acc = self.accuracy
        cols = [(title, acc.get(cat.value)) for cat, title in TABLE_COLUMNS]
        if Category.OTHER.value in acc:
            cols.append(("Other", acc[Category.OTHER.value]))
        cols.append(("Avg.", self.overall))
        return cols


def format_table(rows: Sequence[tuple[str, Sequence[tuple[str, float | None]]]]) -> str:
    """Aligned text table; one row per (label, columns) pair, columns in published order."""
    headers = ["Method"] + [title for title, _ in rows[0][1]]
    body = [[label] + ["-" if v is None else f"{v:.2f}" for _, v in cols] for label, cols in rows]
    widths = [max(len(r[i]) for r in [headers] + body) for i in range(len(headers))]
    lines = ["  ".join(h.ljust(w) if i == 0 else h.rjust(w) for i, (h, w) in enumerate(zip(headers, widths)))]
    lines.append("  ".join("-" * w for w in widths))
    for r in body:
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
    return "\n".join(lines) + "\n"


def format_csv(rows: Sequence[tuple[str, Sequence[tuple[str, float | None]]]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["Method"] + [title for title, _ in rows[0][1]])
    for label, cols in rows:
        writer.writerow([label] + ["" if v is None else f"{v:.4f}" for _, v in cols])
    return buf.getvalue()


def score_run(
    data: Sequence[EvalInstance],
    answers: Mapping[str, str] | Sequence[str],
    judge: ChatProvider,
    catalog: TemplateCatalog = DEFAULT_CATALOG,
    memory_texts: Mapping[str, str] | None = None,
    label: str = "",
) -> RunReport:
    if not isinstance(answers, Mapping):
        if len(answers) != len(data):
            raise ValueError(f"{len(answers)} answers for {len(data)} instances")
        answers = {inst.id: a for inst, a in zip(data, answers)}
    missing = [inst.id for inst in data if inst.id not in answers]
    if missing:
        raise ValueError(f"no answer for instance(s): {', '.join(missing[:5])}")
    records = []
    for inst in data:
        traj = judge_response(inst, Trajectory(answers[inst.id], 0), judge,
                              (memory_texts or {}).get(inst.id, ""), catalog)
        records.append((inst.id, inst.category, traj.verdict))
    return RunReport.from_records(records, label)


def crossval_summary(reports: Sequence[RunReport]) -> dict[str, Any]:
    """Mean over folds of each per-category accuracy and of the overall figure."""
    cats = sorted({c for r in reports for c in r.accuracy})
    mean = {}
    for c in cats:
        vals = [r.accuracy[c] for r in reports if c in r.accuracy]
        mean[c] = round(sum(vals) / len(vals), 4)
    overall = [r.overall for r in reports if r.overall is not None]
    return {
        "folds": [r.to_dict() for r in reports],
        "mean_accuracy": mean,
        "mean_overall": round(sum(overall) / len(overall), 4) if overall else None,
    }


def summary_columns(summary: Mapping[str, Any]) -> list[tuple[str, float | None]]:
    acc = summary["mean_accuracy"]
    cols = [(title, acc.get(cat.value)) for cat, title in TABLE_COLUMNS]
    if Category.OTHER.value in acc:
        cols.append(("Other", acc[Category.OTHER.value]))
    cols.append(("Avg.", summary["mean_overall"]))
    return cols


# ---------------------------------------------------------------------------
# meta-unit classification


@dataclass(frozen=True)
class Classification:
    labels: tuple[str, ...]
    general_proportion: float | None

    def to_dict(self) -> dict[str, Any]:
        return {"labels": list(self.labels), "general_proportion": self.general_proportion}


_LABEL = re.compile(r"\b(general|specific)\b", re.IGNORECASE)


def parse_label(reply: str) -> str | None:
    found = _LABEL.findall(reply)
    return found[-1].capitalize() if found else None


def classify_units(
    state: MetaMemoryState,
    classifier: ChatProvider,
    catalog: TemplateCatalog = DEFAULT_CATALOG,
) -> Classification:
    """Label each unit General or Specific; unparseable or failed replies count as Specific."""
    labels = []
    for unit in state.units:
        req = catalog.request(TemplateName.CLASSIFY, {"unit": unit.text}, temperature=0.0, top_p=1.0, max_tokens=16)
        try:
            label = parse_label(classifier.complete(req)[0])
        except AuthenticationError:
            raise
        except ProviderError as exc:
            logger.warning("classifier failed on unit %d: %s", unit.id, exc)
            label = None
        if label is None:
            logger.warning("unparseable classification for unit %d, counting as Specific", unit.id)
            label = "Specific"
        labels.append(label)
    proportion = labels.count("General") / len(labels) if labels else None
    return Classification(tuple(labels), proportion)


def report_json(obj: Any) -> str:
    return canonical_json(obj)
