"""Command-line entry points.

Every command writes under ``--out`` using a fixed layout::

    OUT/checkpoints/   meta-memory checkpoints (one per training step)
    OUT/reports/       JSON, text-table and CSV reports, plus figures/
    OUT/logs/          per-step training metrics (JSON Lines)
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from . import config as cfgmod
from .core import Checkpoint, EvalInstance, MemorySet, MetaMemoryState, SchemaError, canonical_json, load_checkpoint
from .evaluation import (
    classify_units,
    crossval_summary,
    format_csv,
    format_table,
    load_dataset,
    load_longmemeval,
    load_sharegpt,
    make_folds,
    score_run,
    summary_columns,
    write_dataset,
)
from .evolve import Pipeline, TrainingAborted, run_training, verify_replay
from .infer import answer
from .membuild import build_memory_set, ensure_memory, load_sessions
from .provider import ProviderError, TemplateCatalog, TranscriptError

logger = logging.getLogger("metamem")


class CommandError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# helpers


def _layout(out: str | Path) -> dict[str, Path]:
    root = Path(out)
    dirs = {"root": root, "checkpoints": root / "checkpoints", "reports": root / "reports", "logs": root / "logs"}
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    return dirs


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _load_data(args: argparse.Namespace) -> list[EvalInstance]:
    fmt = args.format
    path = Path(args.data)
    if fmt == "auto":
        fmt = "longmemeval" if path.suffix == ".json" else "native"
    if fmt == "longmemeval":
        return load_longmemeval(path)
    if fmt == "sharegpt":
        seed = args.seed_sharegpt if args.seed_sharegpt is not None else cfgmod.resolve(args)["seed"]
        return load_sharegpt(path, args.min_turns, args.sharegpt_n, seed, args.predict_user)
    return load_dataset(path)


def _add_data_flags(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--data", required=required, help="dataset file")
    p.add_argument("--format", choices=["auto", "native", "longmemeval", "sharegpt"], default="auto")
    p.add_argument("--min-turns", type=int, default=8, help="ShareGPT: keep conversations with more turns")
    p.add_argument("--sharegpt-n", type=int, default=1000, help="ShareGPT: conversations to sample")
    p.add_argument("--seed-sharegpt", type=int, default=None, help="ShareGPT sampling seed [--seed]")
    p.add_argument("--predict-user", action="store_true",
                   help="ShareGPT: target the final user turn instead of the final assistant reply")


class Context:
    """Resolved settings plus lazily built providers."""

    def __init__(self, args: argparse.Namespace, transport=None) -> None:
        self.args = args
        self.settings = cfgmod.resolve(args)
        self.providers = cfgmod.ProviderFactory(self.settings, transport)
        self.catalog = TemplateCatalog(self.settings["templates_dir"])

    def pipeline(self) -> Pipeline:
        return Pipeline(
            actor=self.providers.chat("actor"),
            judge=self.providers.chat("judge"),
            embedder=self.providers.embedder(),
            catalog=self.catalog,
        )

    def prepare(self, data: Sequence[EvalInstance]) -> list[EvalInstance]:
        if not any(not i.memory.units and i.sessions for i in data):
            return list(data)
        if cfgmod.MemoryMode(self.settings["memory_mode"]) is not cfgmod.MemoryMode.MEMORY:
            return list(data)
        return ensure_memory(data, self.providers.chat("actor"), self.providers.embedder(),
                             self.settings["threshold"], self.settings["char_budget"], self.catalog)

    def answer_all(self, data: Sequence[EvalInstance], state: MetaMemoryState) -> dict[str, str]:
        opts = cfgmod.inference_options(self.settings)
        actor = self.providers.chat("actor")
        embedder = self.providers.embedder()
        return {
            inst.id: answer(inst.question, inst.memory, state, actor, embedder, opts,
                            inst.question_date, inst.sessions, self.catalog)
            for inst in data
        }


def _write_answers(path: Path, answers: Mapping[str, str]) -> None:
    _write(path, "".join(json.dumps({"id": k, "answer": v}, ensure_ascii=False) + "\n" for k, v in answers.items()))


def _read_answers(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            rec = json.loads(line)
            out[str(rec["id"])] = rec["answer"]
    return out


def _figures_enabled(args: argparse.Namespace) -> bool:
    return not getattr(args, "no_figures", False)


def _train(ctx: Context, data: Sequence[EvalInstance], ckpt_dir: Path, log_path: Path,
           validation: Sequence[EvalInstance] = ()) -> tuple[MetaMemoryState, list[Checkpoint]]:
    cfg = cfgmod.train_config(ctx.settings)
    pipe = ctx.pipeline()
    on_step: Callable[[Checkpoint], Mapping[str, Any]] | None = None
    if validation:
        def on_step(ckpt: Checkpoint) -> Mapping[str, Any]:
            report = score_run(validation, ctx.answer_all(validation, ckpt.state), pipe.judge, ctx.catalog)
            return {"validation_accuracy": None if report.overall is None else round(report.overall, 4)}
    return run_training(data, cfg, pipe, ckpt_dir, log_path,
                        run_config=cfgmod.hashable_settings(ctx.settings), on_step=on_step)


def _training_figure(log_path: Path, fig_path: Path) -> None:
    from .plotting import plot_training_curve

    rows = [json.loads(l) for l in log_path.read_text(encoding="utf-8").splitlines() if l.strip()]
    if rows:
        plot_training_curve(rows, fig_path)


# ---------------------------------------------------------------------------
# commands


def cmd_build_mem(args: argparse.Namespace, ctx: Context) -> int:
    s = ctx.settings
    actor, embedder = ctx.providers.chat("actor"), ctx.providers.embedder()
    if args.sessions:
        mem = build_memory_set(load_sessions(args.sessions), actor, embedder, s["threshold"], s["char_budget"],
                               ctx.catalog)
        out = Path(args.output or Path(args.out) / "memory.json")
        _write(out, canonical_json(mem.to_list()))
        print(f"wrote {len(mem)} memory units to {out}")
        return 0
    if args.data:
        data = ensure_memory(_load_data(args), actor, embedder, s["threshold"], s["char_budget"], ctx.catalog)
        out = Path(args.output or Path(args.out) / "dataset.jsonl")
        out.parent.mkdir(parents=True, exist_ok=True)
        write_dataset(data, out)
        print(f"wrote {len(data)} instances with memory to {out}")
        return 0
    raise CommandError("build-mem needs --sessions or --data")


def cmd_evolve(args: argparse.Namespace, ctx: Context) -> int:
    dirs = _layout(args.out)
    data = ctx.prepare(_load_data(args))
    log_path = dirs["logs"] / "run.jsonl"
    state, series = _train(ctx, data, dirs["checkpoints"], log_path)
    if _figures_enabled(args):
        _training_figure(log_path, dirs["reports"] / "figures" / "training_curve.png")
    print(f"{len(series)} steps, final meta-memory has {len(state)} units; checkpoints in {dirs['checkpoints']}")
    return 0


def _state_from(path: str | None) -> MetaMemoryState:
    return load_checkpoint(path).state if path else MetaMemoryState()


def cmd_infer(args: argparse.Namespace, ctx: Context) -> int:
    state = _state_from(args.checkpoint)
    if args.question:
        mem = MemorySet()
        if args.memory:
            mem = MemorySet.from_list(json.loads(Path(args.memory).read_text(encoding="utf-8")))
        y = answer(args.question, mem, state, ctx.providers.chat("actor"), ctx.providers.embedder(),
                   cfgmod.inference_options(ctx.settings), args.question_date, catalog=ctx.catalog)
        print(y)
        return 0
    if not args.data:
        raise CommandError("infer needs --question or --data")
    dirs = _layout(args.out)
    data = ctx.prepare(_load_data(args))
    answers = ctx.answer_all(data, state)
    out = Path(args.output or dirs["reports"] / "answers.jsonl")
    _write_answers(out, answers)
    print(f"wrote {len(answers)} answers to {out}")
    return 0


def _write_report(dirs: Mapping[str, Path], name: str, rows, payload: Any, figures: bool) -> str:
    table = format_table(rows)
    _write(dirs["reports"] / f"{name}.json", canonical_json(payload))
    _write(dirs["reports"] / f"{name}.txt", table)
    _write(dirs["reports"] / f"{name}.csv", format_csv(rows))
    if figures:
        from .plotting import plot_category_accuracy

        plot_category_accuracy(rows, dirs["reports"] / "figures" / f"{name}.png")
    return table


def cmd_eval(args: argparse.Namespace, ctx: Context) -> int:
    dirs = _layout(args.out)
    data = _load_data(args)
    report = score_run(data, _read_answers(args.answers), ctx.providers.chat("judge"), ctx.catalog, label=args.label)
    table = _write_report(dirs, "report", [(args.label, report.columns())], report.to_dict(), _figures_enabled(args))
    print(table, end="")
    return 0


def cmd_crossval(args: argparse.Namespace, ctx: Context) -> int:
    s = ctx.settings
    dirs = _layout(args.out)
    data = ctx.prepare(_load_data(args))
    by_id = {inst.id: inst for inst in data}
    plan = make_folds([i.id for i in data], s["n_folds"], s["seed"], s["validation_fraction"])
    _write(dirs["reports"] / "folds.json", canonical_json(plan.to_dict()))
    judge = ctx.providers.chat("judge")
    rows, meta_reports, base_reports = [], [], []
    for i, fold in enumerate(plan.splits, start=1):
        train = [by_id[x] for x in fold.train]
        test = [by_id[x] for x in fold.test]
        validation = [by_id[x] for x in fold.validation] if args.validate else []
        log_path = dirs["logs"] / f"fold_{i}.jsonl"
        state, _ = _train(ctx, train, dirs["checkpoints"] / f"fold_{i}", log_path, validation)
        if _figures_enabled(args):
            _training_figure(log_path, dirs["reports"] / "figures" / f"training_fold_{i}.png")
        fold_out: dict[str, Any] = {}
        if not args.no_baseline:
            base_answers = ctx.answer_all(test, MetaMemoryState())
            _write_answers(dirs["reports"] / f"answers_fold_{i}_baseline.jsonl", base_answers)
            base = score_run(test, base_answers, judge, ctx.catalog, label=f"Fold {i} Baseline")
            base_reports.append(base)
            rows.append((base.label, base.columns()))
            fold_out["baseline"] = base.to_dict()
        answers = ctx.answer_all(test, state)
        _write_answers(dirs["reports"] / f"answers_fold_{i}.jsonl", answers)
        meta = score_run(test, answers, judge, ctx.catalog, label=f"Fold {i} MetaMem")
        meta_reports.append(meta)
        rows.append((meta.label, meta.columns()))
        fold_out["metamem"] = meta.to_dict()
        _write(dirs["reports"] / f"fold_{i}.json", canonical_json(fold_out))
    summary = {"metamem": crossval_summary(meta_reports)}
    if base_reports:
        summary["baseline"] = crossval_summary(base_reports)
        rows.append(("Mean Baseline", summary_columns(summary["baseline"])))
    rows.append(("Mean MetaMem", summary_columns(summary["metamem"])))
    table = _write_report(dirs, "crossval", rows, summary, _figures_enabled(args))
    print(table, end="")
    return 0


def _checkpoint_paths(items: Sequence[str]) -> list[Path]:
    paths: list[Path] = []
    for item in items:
        p = Path(item)
        paths.extend(sorted(p.glob("step_*.json")) if p.is_dir() else [p])
    if not paths:
        raise CommandError("no checkpoints found")
    return paths


def cmd_classify(args: argparse.Namespace, ctx: Context) -> int:
    dirs = _layout(args.out)
    classifier = ctx.providers.chat("classifier")
    rows = []
    for path in _checkpoint_paths(args.checkpoints):
        ckpt = load_checkpoint(path)
        result = classify_units(ckpt.state, classifier, ctx.catalog)
        rows.append({
            "checkpoint": path.name,
            "step": ckpt.state.step,
            "units": len(ckpt.state),
            "general": result.labels.count("General"),
            "specific": result.labels.count("Specific"),
            "general_proportion": result.general_proportion,
            "labels": list(result.labels),
        })
    _write(dirs["reports"] / "classify.json", canonical_json(rows))
    lines = ["checkpoint,step,units,general,specific,general_proportion"]
    for r in rows:
        prop = "" if r["general_proportion"] is None else f"{r['general_proportion']:.4f}"
        lines.append(f"{r['checkpoint']},{r['step']},{r['units']},{r['general']},{r['specific']},{prop}")
    _write(dirs["reports"] / "classify.csv", "\n".join(lines) + "\n")
    if _figures_enabled(args):
        from .plotting import plot_general_proportion

        plot_general_proportion([r["step"] for r in rows], [r["general_proportion"] for r in rows],
                                dirs["reports"] / "figures" / "general_proportion.png")
    for r in rows:
        prop = "absent" if r["general_proportion"] is None else f"{100 * r['general_proportion']:.1f}% general"
        print(f"step {r['step']:>4}: {r['units']:>3} units, {prop}")
    return 0


def cmd_replay(args: argparse.Namespace, ctx: Context | None = None) -> int:
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except (SchemaError, OSError) as exc:
        print(f"replay: cannot load {args.checkpoint}: {exc}", file=sys.stderr)
        return 1
    if verify_replay(ckpt):
        print(f"replay OK: {ckpt.state.step} steps reproduce {len(ckpt.state)} units")
        return 0
    print(f"replay MISMATCH: folding the batch log does not reproduce {args.checkpoint}", file=sys.stderr)
    return 1


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metamem", description="Self-evolving meta-memory for memory-augmented QA")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help: str, fn, config: bool = True) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=fn, needs_context=config)
        if config:
            p.add_argument("--out", default="out", help="output directory [out]")
            p.add_argument("--no-figures", action="store_true", help="skip matplotlib figures")
            cfgmod.add_config_flags(p)
        return p

    p = command("build-mem", "build memory sets from raw sessions", cmd_build_mem)
    p.add_argument("--sessions", help="sessions JSON Lines file")
    p.add_argument("--output", help="output file")
    _add_data_flags(p, required=False)

    p = command("evolve", "train a meta-memory", cmd_evolve)
    _add_data_flags(p)

    p = command("infer", "answer questions with a meta-memory", cmd_infer)
    p.add_argument("--checkpoint", help="meta-memory checkpoint (empty meta-memory if omitted)")
    p.add_argument("--question")
    p.add_argument("--question-date")
    p.add_argument("--memory", help="memory set JSON (with --question)")
    p.add_argument("--output", help="answers file (with --data)")
    _add_data_flags(p, required=False)

    p = command("eval", "score answers with the judge", cmd_eval)
    _add_data_flags(p)
    p.add_argument("--answers", required=True, help="answers JSON Lines ({id, answer})")
    p.add_argument("--label", default="MetaMem")

    p = command("crossval", "full k-fold train/test protocol", cmd_crossval)
    _add_data_flags(p)
    p.add_argument("--validate", action="store_true", help="score the validation split after every step")
    p.add_argument("--no-baseline", action="store_true", help="skip the empty-meta-memory baseline")

    p = command("classify", "General/Specific analysis over checkpoints", cmd_classify)
    p.add_argument("--checkpoints", nargs="+", required=True, help="checkpoint files or directories")

    p = command("replay", "verify a checkpoint's replay invariant", cmd_replay, config=False)
    p.add_argument("--checkpoint", required=True)
    return parser


def run_command(argv: Sequence[str] | None = None, transport=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        ctx = Context(args, transport) if args.needs_context else None
        return args.func(args, ctx)
    except (CommandError, SchemaError, ValueError, OSError, ProviderError, TrainingAborted, TranscriptError) as exc:
        print(f"metamem {args.command}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
