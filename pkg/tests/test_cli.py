import json

import pytest

from helpers import write_native
from metamem import config as cfgmod
from metamem.cli import build_parser, run_command
from metamem.core import load_checkpoint

STUB = ["--actor-kind", "stub", "--judge-kind", "stub", "--classifier-kind", "stub", "--embed-dim", "32"]


@pytest.fixture
def data(tmp_path):
    return write_native(tmp_path / "d.jsonl", 100)


def test_unknown_subcommand_and_flag_exit_2(capsys):
    assert run_command(["nope"]) == 2
    assert run_command(["evolve", "--data", "x", "--bogus"]) == 2
    assert "usage" in capsys.readouterr().err


def test_evolve_default_schedule_gives_ten_checkpoints(tmp_path, data):
    out = tmp_path / "out"
    rc = run_command(["evolve", "--data", str(data), "--epochs", "5", "--batch-size", "50", "--k", "5",
                      "--seed", "42", "--out", str(out), *STUB])
    assert rc == 0
    assert len(list((out / "checkpoints").glob("step_*.json"))) == 10
    assert (out / "logs" / "run.jsonl").read_text().count("\n") == 10
    assert (out / "reports" / "figures" / "training_curve.png").stat().st_size > 0
    assert run_command(["replay", "--checkpoint", str(out / "checkpoints" / "ckpt_final.json")]) == 0


def test_replay_detects_tampering(tmp_path, data, capsys):
    out = tmp_path / "out"
    run_command(["evolve", "--data", str(data), "--epochs", "1", "--k", "1", "--out", str(out), "--no-figures", *STUB])
    p = out / "checkpoints" / "ckpt_final.json"
    d = json.loads(p.read_text())
    d["state"]["units"][0]["text"] = "tampered"
    p.write_text(json.dumps(d))
    assert run_command(["replay", "--checkpoint", str(p)]) == 1
    assert "MISMATCH" in capsys.readouterr().err
    assert run_command(["replay", "--checkpoint", str(tmp_path / "missing.json")]) == 1


def test_infer_eval_classify_pipeline(tmp_path, data, capsys):
    out = tmp_path / "out"
    run_command(["evolve", "--data", str(data), "--epochs", "1", "--k", "1", "--out", str(out), "--no-figures", *STUB])
    ckpt = out / "checkpoints" / "ckpt_final.json"
    assert run_command(["infer", "--checkpoint", str(ckpt), "--data", str(data), "--out", str(out), *STUB]) == 0
    answers = out / "reports" / "answers.jsonl"
    assert len(answers.read_text().splitlines()) == 100
    capsys.readouterr()
    assert run_command(["eval", "--data", str(data), "--answers", str(answers), "--out", str(out), *STUB]) == 0
    header = capsys.readouterr().out.splitlines()[0]
    assert header.index("Single User") < header.index("Single Assistant") < header.index("Multi Session") \
        < header.index("Temporal Reasoning") < header.index("Knowledge Update") < header.index("Single Preference") \
        < header.index("Avg.")
    for name in ("report.json", "report.txt", "report.csv", "figures/report.png"):
        assert (out / "reports" / name).exists()
    assert run_command(["classify", "--checkpoints", str(out / "checkpoints"), "--out", str(out), *STUB]) == 0
    rows = (out / "reports" / "classify.csv").read_text().splitlines()
    assert rows[0].startswith("checkpoint,step") and len(rows) == 3
    assert (out / "reports" / "figures" / "general_proportion.png").exists()


def test_infer_single_question(tmp_path, capsys):
    mem = tmp_path / "m.json"
    mem.write_text(json.dumps([{"id": "m0", "topic": "t", "text": "The cat is Tom."}]))
    assert run_command(["infer", "--question", "cat?", "--memory", str(mem), *STUB]) == 0
    assert capsys.readouterr().out.strip() == "- The cat is Tom."


def test_build_mem_from_sessions(tmp_path):
    sessions = tmp_path / "s.jsonl"
    sessions.write_text("\n".join(json.dumps({"id": f"s{i}", "turns": [{"role": "user", "text": f"topic {i % 2}"}]})
                                  for i in range(4)))
    out = tmp_path / "mem.json"
    assert run_command(["build-mem", "--sessions", str(sessions), "--output", str(out), *STUB]) == 0
    units = json.loads(out.read_text())
    assert units and all(u["text"] and len(u["embedding"]) == 32 for u in units)


def test_missing_data_file_is_exit_1(tmp_path, capsys):
    assert run_command(["evolve", "--data", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path), *STUB]) == 1
    assert "metamem evolve" in capsys.readouterr().err


def test_every_option_has_a_flag():
    p = build_parser()
    args = p.parse_args(["evolve", "--data", "x"])
    for key in cfgmod.OPTIONS:
        assert hasattr(args, cfgmod.dest_name(key))


def test_config_precedence(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# comment\nk = 3\nbatch_size = 10  # trailing\nactor.model = file-model\n")
    args = build_parser().parse_args(["evolve", "--data", "x", "--config", str(f), "--k", "7"])
    s = cfgmod.resolve(args)
    assert (s["k"], s["batch_size"], s["epochs"], s["actor.model"]) == (7, 10, 5, "file-model")


def test_config_rejects_unknown_key(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("kk = 3\n")
    with pytest.raises(ValueError, match="kk"):
        cfgmod.parse_config_file(f)


def test_defaults():
    s = cfgmod.resolve({})
    assert (s["k"], s["batch_size"], s["epochs"], s["seed"]) == (5, 50, 5, 42)
    tc = cfgmod.train_config(s)
    io = cfgmod.inference_options(s)
    assert (tc.sample_temperature, tc.sample_top_p, tc.sample_max_tokens) == (0.7, 0.95, 4000)
    assert (io.temperature, io.top_p, io.max_tokens) == (0.0, 0.8, 2000)


def test_config_hash_excludes_paths():
    a = cfgmod.hashable_settings({**cfgmod.resolve({}), "transcript": "/a"})
    b = cfgmod.hashable_settings({**cfgmod.resolve({}), "transcript": "/b"})
    assert a == b


def test_evolve_on_sharegpt_builds_memory_first(tmp_path):
    from helpers import synthetic_sharegpt

    corpus, _ = synthetic_sharegpt(tmp_path / "sg.jsonl", 60)
    out = tmp_path / "out"
    assert run_command(["evolve", "--data", str(corpus), "--format", "sharegpt", "--sharegpt-n", "6",
                        "--epochs", "1", "--k", "1", "--out", str(out), "--no-figures", *STUB]) == 0
    ckpt = load_checkpoint(out / "checkpoints" / "ckpt_final.json")
    assert ckpt.state.step == 1 and ckpt.batch_log[0].instances == 6
