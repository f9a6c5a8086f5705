"""Meta-memory evolution: sample, judge, reflect, propose, filter, execute.

Every prompt issued while processing a batch sees the batch-start state; edits
are applied once, at the batch boundary, by :func:`exec_actions`.
"""
from __future__ import annotations

import json
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .core import (
    ActionKind,
    ActionSet,
    BatchRecord,
    Category,
    Checkpoint,
    EvalInstance,
    MetaMemoryState,
    MetaUnit,
    TrainingBatch,
    Trajectory,
    UpdateAction,
    canonical_json,
    config_hash,
    derive_seed,
    render_meta_memory,
    save_checkpoint,
    substream,
)
from .infer import gen_bindings, render_memory_units, retrieve_units
from .provider import (
    DEFAULT_CATALOG,
    AuthenticationError,
    ChatProvider,
    Embedder,
    ProviderError,
    TemplateCatalog,
    TemplateName,
)

logger = logging.getLogger(__name__)


class SanitizerError(RuntimeError):
    """exec_actions got an action set that violates its precondition."""


class TrainingAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    k_samples: int = 5
    batch_size: int = 50
    epochs: int = 5
    sample_temperature: float = 0.7
    sample_top_p: float = 0.95
    sample_max_tokens: int = 4000
    seed: int = 42
    retrieve_topk: int | None = 20
    judge_max_tokens: int = 512
    filter_chunk_size: int | None = None
    workers: int = 1

    def __post_init__(self) -> None:
        for name in ("k_samples", "batch_size", "epochs", "sample_max_tokens", "judge_max_tokens", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.sample_temperature < 0:
            raise ValueError("sample_temperature must be >= 0")
        if not 0 < self.sample_top_p <= 1:
            raise ValueError("sample_top_p must be in (0, 1]")
        if self.filter_chunk_size is not None and self.filter_chunk_size < 1:
            raise ValueError("filter_chunk_size must be positive")

    def steps_for(self, n: int) -> int:
        return self.epochs * math.ceil(n / self.batch_size)

    def sampling(self) -> dict[str, Any]:
        return {
            "temperature": self.sample_temperature,
            "top_p": self.sample_top_p,
            "max_tokens": self.sample_max_tokens,
        }


@dataclass
class Pipeline:
    """Providers and prompt catalog used by a training run."""

    actor: ChatProvider
    judge: ChatProvider
    embedder: Embedder | None = None
    catalog: TemplateCatalog = field(default=DEFAULT_CATALOG)


# ---------------------------------------------------------------------------
# per-instance stages


def instance_memory_text(inst: EvalInstance, embedder: Embedder | None, k: int | None) -> str:
    units = retrieve_units(inst.memory, inst.question, embedder, k, inst.question_date)
    return render_memory_units(units)


def sample_responses(
    inst: EvalInstance,
    state: MetaMemoryState,
    cfg: TrainConfig,
    pipe: Pipeline,
    memory_text: str | None = None,
) -> list[Trajectory]:
    if memory_text is None:
        memory_text = instance_memory_text(inst, pipe.embedder, cfg.retrieve_topk)
    req = pipe.catalog.request(
        TemplateName.GEN,
        gen_bindings(inst.question, memory_text, state, inst.question_date),
        n_samples=cfg.k_samples,
        seed=derive_seed(cfg.seed, f"sample:{state.step}:{inst.id}"),
        **cfg.sampling(),
    )
    responses = pipe.actor.complete(req)
    if len(responses) != cfg.k_samples:
        raise ProviderError(f"asked for {cfg.k_samples} samples, got {len(responses)}")
    return [Trajectory(response=r, sample_index=i) for i, r in enumerate(responses)]


_YES_NO = re.compile(r"\b(yes|no)\b", re.IGNORECASE)


def parse_verdict(reply: str) -> int | None:
    """Last standalone yes/no token wins; None when there is none."""
    tokens = _YES_NO.findall(reply)
    if not tokens:
        return None
    return 1 if tokens[-1].lower() == "yes" else 0


def judge_variant(inst: EvalInstance) -> str:
    if inst.abstention:
        return "abstention"
    return {
        Category.TEMPORAL_REASONING: "temporal",
        Category.KNOWLEDGE_UPDATE: "knowledge_update",
        Category.SINGLE_PREFERENCE: "preference",
    }.get(inst.category, "general")


def judge_response(
    inst: EvalInstance,
    traj: Trajectory,
    judge: ChatProvider,
    memory_text: str = "",
    catalog: TemplateCatalog = DEFAULT_CATALOG,
    max_tokens: int = 512,
) -> Trajectory:
    """Set the verdict; judge failures and unparseable replies count as incorrect."""
    req = catalog.request(
        TemplateName.JUDGE,
        {"question": inst.question, "answer": inst.answer, "memory": memory_text or "(no memories)",
         "response": traj.response},
        variant=judge_variant(inst),
        temperature=0.0,
        top_p=1.0,
        max_tokens=max_tokens,
    )
    try:
        reply = judge.complete(req)[0]
    except AuthenticationError:
        raise
    except ProviderError as exc:
        logger.warning("judge failed on %s sample %d, counting as incorrect: %s", inst.id, traj.sample_index, exc)
        return replace(traj, verdict=0)
    verdict = parse_verdict(reply)
    if verdict is None:
        logger.warning("unparseable judge reply for %s sample %d: %.80r", inst.id, traj.sample_index, reply)
        verdict = 0
    return replace(traj, verdict=verdict)


_GUIDANCE = {
    1: "Explain why the response succeeded: which evidence it relied on and which reasoning made it work.",
    0: "Explain why the response failed: missing, misread, outdated or conflicting evidence, or faulty reasoning.",
}


def reflect(
    inst: EvalInstance,
    traj: Trajectory,
    actor: ChatProvider,
    memory_text: str = "",
    cfg: TrainConfig = TrainConfig(),
    catalog: TemplateCatalog = DEFAULT_CATALOG,
) -> Trajectory:
    """Attach a reflection; a provider failure leaves an empty reflection (excluded downstream)."""
    if traj.verdict is None:
        raise ValueError("reflect() needs a judged trajectory")
    req = catalog.request(
        TemplateName.REFLECT,
        {
            "question": inst.question,
            "answer": inst.answer,
            "memory": memory_text or "(no memories)",
            "response": traj.response,
            "verdict_label": "correct" if traj.verdict else "incorrect",
            "verdict_guidance": _GUIDANCE[traj.verdict],
        },
        **cfg.sampling(),
    )
    try:
        text = actor.complete(req)[0]
    except AuthenticationError:
        raise
    except ProviderError as exc:
        logger.warning("reflection failed on %s sample %d: %s", inst.id, traj.sample_index, exc)
        text = ""
    return replace(traj, reflection=text)


# ---------------------------------------------------------------------------
# action parsing


def extract_json_array(text: str) -> str | None:
    """First balanced top-level ``[...]`` span, skipping brackets inside JSON strings."""
    start = text.find("[")
    while start != -1:
        depth = 0
        in_str = False
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_str:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_str = False
            elif ch == '"':
                in_str = True
            elif ch == "[":
                depth += 1
            elif ch == "]":
                depth -= 1
                if depth == 0:
                    return text[start:i + 1]
        return None
    return None


def render_action(a: UpdateAction) -> dict[str, Any]:
    return {
        "action": a.kind.value,
        "index": a.index + 1 if a.index is not None else None,
        "content": a.content,
    }


def parse_actions(reply: str, state_size: int, provenance: str = "") -> list[UpdateAction] | None:
    """Parse a reply into validated actions with 0-based indices.

    Returns None when no JSON array can be found or decoded; invalid elements and
    out-of-range indices are dropped with a warning.
    """
    span = extract_json_array(reply)
    if span is None:
        return None
    try:
        items = json.loads(span)
    except json.JSONDecodeError:
        return None
    actions = []
    for item in items:
        if not isinstance(item, dict):
            logger.warning("dropping non-object action %.80r", item)
            continue
        raw_index = item.get("index")
        try:
            if raw_index is not None:
                if isinstance(raw_index, bool) or not isinstance(raw_index, (int, str)):
                    raise ValueError(f"bad index {raw_index!r}")
                raw_index = int(raw_index)
                if not 1 <= raw_index <= state_size:
                    logger.warning("dropping %s with index %d outside [1, %d]", item.get("action"), raw_index, state_size)
                    continue
            kind = str(item.get("action", "")).upper()
            actions.append(
                UpdateAction(
                    kind=kind,
                    index=raw_index - 1 if raw_index is not None else None,
                    content=item.get("content"),
                    provenance=provenance,
                )
            )
        except (ValueError, TypeError) as exc:
            logger.warning("dropping invalid action %.120r: %s", item, exc)
    return actions


def propose_action(
    inst: EvalInstance,
    reflections: Sequence[str],
    state: MetaMemoryState,
    actor: ChatProvider,
    cfg: TrainConfig = TrainConfig(),
    catalog: TemplateCatalog = DEFAULT_CATALOG,
) -> list[UpdateAction]:
    if not reflections:
        raise ValueError("propose_action() needs at least one reflection")
    req = catalog.request(
        TemplateName.ACTION,
        {
            "question": inst.question,
            "answer": inst.answer,
            "reflections": "\n\n".join(f"Analysis {i}:\n{r}" for i, r in enumerate(reflections, start=1)),
            "experiences": render_meta_memory(state) or "(none yet)",
            "unit_count": str(len(state)),
        },
        **cfg.sampling(),
    )
    reply = actor.complete(req)[0]
    actions = parse_actions(reply, len(state), provenance=inst.id)
    if actions is None:
        logger.warning("no JSON action array in proposal for %s", inst.id)
        return []
    return actions


# ---------------------------------------------------------------------------
# filtering and execution


def sanitize(actions: Sequence[UpdateAction], state_size: int) -> list[UpdateAction]:
    """Make an action list executable against a state of ``state_size`` units.

    Drops out-of-range indices, duplicate DELs, every MOD on an index that is
    also deleted, and all but the first MOD per index. ADDs are all kept.
    Survivors keep their relative order.
    """
    deleted = {a.index for a in actions if a.kind is ActionKind.DEL and a.index < state_size}
    seen_del: set[int] = set()
    seen_mod: set[int] = set()
    out = []
    for a in actions:
        if a.kind is ActionKind.ADD:
            out.append(a)
            continue
        if a.index >= state_size:
            continue
        if a.kind is ActionKind.DEL:
            if a.index in seen_del:
                continue
            seen_del.add(a.index)
        else:
            if a.index in deleted or a.index in seen_mod:
                continue
            seen_mod.add(a.index)
        out.append(a)
    return out


def _match_provenance(kept: Sequence[UpdateAction], proposed: Sequence[UpdateAction]) -> list[UpdateAction]:
    pool = list(proposed)
    out = []
    for a in kept:
        for j, p in enumerate(pool):
            if (p.kind, p.index, p.content) == (a.kind, a.index, a.content):
                out.append(replace(a, provenance=p.provenance))
                del pool[j]
                break
        else:
            out.append(replace(a, provenance="filter"))
    return out


def _filter_chunk(
    chunk: Sequence[UpdateAction],
    state: MetaMemoryState,
    actor: ChatProvider,
    cfg: TrainConfig,
    catalog: TemplateCatalog,
) -> list[UpdateAction]:
    lines = [json.dumps({**render_action(a), "source": a.provenance}, ensure_ascii=False) for a in chunk]
    req = catalog.request(
        TemplateName.FILTER,
        {
            "experiences": render_meta_memory(state) or "(none yet)",
            "unit_count": str(len(state)),
            "proposed_actions": "\n".join(lines),
        },
        **cfg.sampling(),
    )
    try:
        reply = actor.complete(req)[0]
    except AuthenticationError:
        raise
    except ProviderError as exc:
        logger.warning("filter call failed, falling back to mechanical sanitization: %s", exc)
        return list(chunk)
    parsed = parse_actions(reply, len(state), provenance="filter")
    if parsed is None:
        logger.warning("filter reply had no JSON action array; using proposed actions as-is")
        return list(chunk)
    return _match_provenance(parsed, chunk)


def filter_actions(
    proposed: ActionSet,
    state: MetaMemoryState,
    actor: ChatProvider,
    cfg: TrainConfig = TrainConfig(),
    catalog: TemplateCatalog = DEFAULT_CATALOG,
) -> ActionSet:
    """LLM conflict resolution followed by mechanical sanitization.

    An empty proposal skips the model call.
    """
    actions = list(proposed)
    if not actions:
        return ActionSet(proposed.step)
    size = cfg.filter_chunk_size or len(actions)
    kept: list[UpdateAction] = []
    for i in range(0, len(actions), size):
        kept.extend(_filter_chunk(actions[i:i + size], state, actor, cfg, catalog))
    return ActionSet(proposed.step, tuple(sanitize(kept, len(state))))


def exec_actions(actions: ActionSet | Sequence[UpdateAction], state: MetaMemoryState) -> MetaMemoryState:
    """Apply MODs (ascending index), then DELs (descending), then ADDs in order.

    Indices address the pre-state. Requires a sanitized set: valid indices and at
    most one of DEL/MOD per index.
    """
    actions = list(actions)
    n = len(state)
    touched: dict[int, ActionKind] = {}
    for a in actions:
        if a.kind is ActionKind.ADD:
            continue
        if not 0 <= a.index < n:
            raise SanitizerError(f"{a.kind.value} index {a.index} out of range for {n} units")
        if a.index in touched:
            raise SanitizerError(f"index {a.index} targeted by both {touched[a.index].value} and {a.kind.value}")
        touched[a.index] = a.kind

    t1 = state.step + 1
    units = list(state.units)
    for a in sorted((a for a in actions if a.kind is ActionKind.MOD), key=lambda a: a.index):
        units[a.index] = replace(units[a.index], text=a.content, last_modified_step=t1)
    for a in sorted((a for a in actions if a.kind is ActionKind.DEL), key=lambda a: a.index, reverse=True):
        del units[a.index]
    next_id = state.next_id
    for a in actions:
        if a.kind is ActionKind.ADD:
            units.append(MetaUnit(id=next_id, text=a.content, created_step=t1, last_modified_step=t1))
            next_id += 1
    return MetaMemoryState(units=tuple(units), step=t1, next_id=next_id)


# ---------------------------------------------------------------------------
# batches and training


@dataclass
class InstanceResult:
    instance_id: str
    trajectories: list[Trajectory] = field(default_factory=list)
    actions: list[UpdateAction] = field(default_factory=list)
    error: str | None = None


def process_instance(inst: EvalInstance, state: MetaMemoryState, cfg: TrainConfig, pipe: Pipeline) -> InstanceResult:
    result = InstanceResult(inst.id)
    try:
        memory_text = instance_memory_text(inst, pipe.embedder, cfg.retrieve_topk)
        trajs = sample_responses(inst, state, cfg, pipe, memory_text)
        trajs = [judge_response(inst, t, pipe.judge, memory_text, pipe.catalog, cfg.judge_max_tokens) for t in trajs]
        trajs = [reflect(inst, t, pipe.actor, memory_text, cfg, pipe.catalog) for t in trajs]
        result.trajectories = trajs
        reflections = [t.reflection for t in trajs if t.reflection]
        if not reflections:
            result.error = "no reflections"
            return result
        result.actions = propose_action(inst, reflections, state, pipe.actor, cfg, pipe.catalog)
    except AuthenticationError:
        raise
    except (ProviderError, ValueError) as exc:
        logger.warning("skipping instance %s: %s", inst.id, exc)
        result.error = str(exc)
    return result


def run_batch(
    batch: TrainingBatch,
    state: MetaMemoryState,
    cfg: TrainConfig,
    pipe: Pipeline,
) -> tuple[MetaMemoryState, BatchRecord]:
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(lambda i: process_instance(i, state, cfg, pipe), batch.instances))
    else:
        results = [process_instance(i, state, cfg, pipe) for i in batch.instances]

    proposed = ActionSet(state.step, tuple(a for r in results for a in r.actions))
    kept = filter_actions(proposed, state, pipe.actor, cfg, pipe.catalog)
    new_state = exec_actions(kept, state)

    verdicts = [t.verdict for r in results for t in r.trajectories if t.verdict is not None]
    record = BatchRecord(
        step=new_state.step,
        batch_id=batch.batch_id,
        proposed=len(proposed),
        kept=len(kept),
        counts=kept.counts(),
        kept_actions=kept.actions,
        instances=len(results),
        failed=sum(r.error is not None for r in results),
        verdict_rate=round(sum(verdicts) / len(verdicts), 6) if verdicts else None,
    )
    return new_state, record


def make_batches(data: Sequence[EvalInstance], cfg: TrainConfig) -> list[TrainingBatch]:
    """All batches for all epochs; instance order is reshuffled once per epoch."""
    rng = substream(cfg.seed, "epoch-shuffle")
    batches = []
    step = 0
    for epoch in range(cfg.epochs):
        order = list(range(len(data)))
        rng.shuffle(order)
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            chunk = tuple(data[i] for i in order[start:start + cfg.batch_size])
            batches.append(TrainingBatch(step=step, instances=chunk, batch_id=f"e{epoch}b{b}"))
            step += 1
    return batches


def metrics_line(state: MetaMemoryState, record: BatchRecord, extra: Mapping[str, Any] | None = None) -> str:
    row = {
        "step": state.step,
        "batch_id": record.batch_id,
        "units": len(state),
        "proposed": record.proposed,
        "kept": record.kept,
        "add": record.counts.get("ADD", 0),
        "del": record.counts.get("DEL", 0),
        "mod": record.counts.get("MOD", 0),
        "instances": record.instances,
        "failed": record.failed,
        "verdict_rate": record.verdict_rate,
    }
    if extra:
        row.update(extra)
    return json.dumps(row, sort_keys=True)


def checkpoint_name(step: int) -> str:
    return f"step_{step:04d}.json"


def run_training(
    data: Sequence[EvalInstance],
    cfg: TrainConfig,
    pipe: Pipeline,
    checkpoint_dir: str | Path | None = None,
    log_path: str | Path | None = None,
    run_config: Mapping[str, Any] | None = None,
    on_step: Callable[[Checkpoint], Mapping[str, Any] | None] | None = None,
) -> tuple[MetaMemoryState, list[Checkpoint]]:
    """Train from the empty state. ``on_step`` may return extra fields for the metrics line."""
    if not data:
        raise ValueError("training data is empty")
    digest = config_hash({"train": asdict(cfg), **(run_config or {})})
    state = MetaMemoryState()
    log: list[BatchRecord] = []
    series: list[Checkpoint] = []
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else None
    log_fh = None
    if log_path:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_fh = open(log_path, "w", encoding="utf-8")
    try:
        for batch in make_batches(data, cfg):
            new_state, record = run_batch(batch, state, cfg, pipe)
            if record.instances and record.failed == record.instances:
                raise TrainingAborted(
                    f"every instance in batch {batch.batch_id} failed; last good checkpoint is step {state.step}"
                )
            state = new_state
            log.append(record)
            ckpt = Checkpoint(state=state, config_hash=digest, batch_log=tuple(log))
            series.append(ckpt)
            if ckpt_dir is not None:
                save_checkpoint(ckpt, ckpt_dir / checkpoint_name(state.step))
            extra = on_step(ckpt) if on_step else None
            if log_fh:
                log_fh.write(metrics_line(state, record, extra) + "\n")
                log_fh.flush()
            logger.info("step %d (%s): %d units, kept %d/%d actions", state.step, batch.batch_id,
                        len(state), record.kept, record.proposed)
    finally:
        if log_fh:
            log_fh.close()
    if ckpt_dir is not None and series:
        save_checkpoint(series[-1], ckpt_dir / "ckpt_final.json")
    return state, series


def replay(ckpt: Checkpoint) -> MetaMemoryState:
    """Fold the recorded kept actions over the empty state."""
    state = MetaMemoryState()
    for record in ckpt.batch_log:
        state = exec_actions(record.kept_actions, state)
    return state


def verify_replay(ckpt: Checkpoint) -> bool:
    return canonical_json(replay(ckpt).to_dict()) == canonical_json(ckpt.state.to_dict())
