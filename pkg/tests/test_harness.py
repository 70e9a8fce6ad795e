import json

import pytest

from dialkit import cli
from dialkit.errors import ConfigurationError, IngestionError
from dialkit.harness import data as D
from dialkit.harness import runner, synth
from dialkit.harness.config import RunConfig, dump_config, load_config, parse_config
from dialkit.harness.report import emit_report
from dialkit.speaker import Message, select_context

TINY = dict(layers=1, heads=2, model_dim=16, ffn_dim=32, max_positions=64, max_len=64, dropout=0.0,
            learning_rate=1e-3, batch_size=8, epochs=2, patience=2)


def tiny_run(tmp_path, kind="ranking", subtask="s1", size=6, seed=0, **kw):
    paths = synth.make_synthetic(kind, size, seed, tmp_path / "data")
    cfg = RunConfig.for_subtask(subtask, train=paths["train"], valid=paths["valid"], test=paths["test"],
                                out=str(tmp_path / "run"), seed=seed, **{**TINY, **kw})
    return cfg


# -- configuration ---------------------------------------------------------------------

def test_config_round_trip(tmp_path):
    cfg = RunConfig.for_subtask("s3", seed=4, class_weights=(1.0, 3.0, 0.5), stop_at=0.9)
    path = tmp_path / "c.txt"
    dump_config(cfg, path)
    assert load_config(path) == cfg
    assert parse_config(dump_config(RunConfig())) == RunConfig()


def test_config_errors_name_the_line():
    with pytest.raises(ConfigurationError, match="line 2"):
        parse_config("seed = 1\nbogus = 3\n")
    with pytest.raises(ConfigurationError, match="line 1"):
        parse_config("seed 1\n")
    with pytest.raises(ConfigurationError, match="seed"):
        parse_config("seed = one\n")
    with pytest.raises(ConfigurationError):
        RunConfig(subtask="s9")


def test_subtask_defaults_and_overrides():
    cfg = parse_config("subtask = s3  # advising\nepochs = 4\n", seed=7)
    assert cfg.schedule == "exponential" and cfg.epochs == 4 and cfg.seed == 7


def test_missing_paths_are_reported(tmp_path):
    with pytest.raises(ConfigurationError, match="train"):
        RunConfig().check_paths()
    with pytest.raises(ConfigurationError, match="does not exist"):
        RunConfig(train=str(tmp_path / "x"), valid="v", test="t").check_paths()


# -- ingestion ---------------------------------------------------------------------------

def test_ingestion_errors_carry_line_numbers(tmp_path):
    path = tmp_path / "r.jsonl"
    good = {"id": "a", "turns": [{"speaker": "A", "utterances": ["hi"]}], "candidates": ["x"], "gold": [0]}
    path.write_text(json.dumps(good) + "\n\n" + "{not json\n")
    with pytest.raises(IngestionError) as exc:
        D.read_ranking(path)
    assert exc.value.line == 3
    path.write_text(json.dumps(good) + "\n" + json.dumps({**good, "gold": [4]}) + "\n")
    with pytest.raises(IngestionError, match=":2:"):
        D.read_ranking(path)
    path.write_text(json.dumps({k: v for k, v in good.items() if k != "turns"}) + "\n")
    with pytest.raises(IngestionError, match="turns"):
        D.read_ranking(path)


def test_channel_records_round_trip(tmp_path):
    msgs = [Message("m0", 0.0, "al", None, "hi", conv=0), Message("m1", 3.0, "bo", "al", "hey", conv=0)]
    path = tmp_path / "c.jsonl"
    D.write_jsonl(path, [D.message_record(m) for m in msgs])
    (channel,) = D.read_channels(path)
    assert [m.text for m in channel.messages] == ["hi", "hey"]
    assert channel.messages[1].spoken_to == "al"


# -- synthetic corpora -------------------------------------------------------------------

def test_synth_is_seeded(tmp_path):
    a = synth.make_synthetic("parity-switch", 8, 3, tmp_path / "a")
    b = synth.make_synthetic("parity-switch", 8, 3, tmp_path / "b")
    for split in synth.SPLITS:
        assert open(a[split], "rb").read() == open(b[split], "rb").read()
    assert open(a["train"]).read() != open(a["test"]).read()


def test_parity_records_are_labelled_by_parity():
    for rec in synth.parity_switch(20, 1):
        gold = rec["candidates"][rec["gold"][0]]
        assert gold == synth.PARITY_RESPONSES[synth.parity_of(rec)]


def test_entangled_speakers_are_disjoint():
    for rec in synth.entangled_channel(10, 2):
        msgs = [Message(m["id"], m["ts"], m["from"], m.get("to"), m["text"], m.get("conv"))
                for m in rec["messages"]]
        by_conv = {}
        for m in msgs:
            by_conv.setdefault(m.conv, set()).update({m.spoken_from, m.spoken_to})
        groups = list(by_conv.values())
        assert all(not (groups[i] & groups[j]) for i in range(len(groups)) for j in range(i))
        assert select_context(msgs, rec["speaker"]) == [m for m in msgs if m.conv == rec["target_conv"]]


def test_unknown_kind():
    with pytest.raises(Exception, match="unknown synthetic kind"):
        synth.generate("poetry", 2, 0)


# -- runs and reports --------------------------------------------------------------------

def test_runs_are_deterministic(tmp_path):
    cfg = tiny_run(tmp_path, seed=5)
    first = runner.run(cfg, tmp_path / "one")
    second = runner.run(cfg, tmp_path / "two")
    first.pop("wall_time"), second.pop("wall_time")
    assert first == second
    assert (tmp_path / "one/model.dgk").read_bytes() == (tmp_path / "two/model.dgk").read_bytes()


def test_emit_report_bytes_stable(tmp_path):
    report = {"subtask": "s1", "seed": 0, "test": {"recall@1": 0.5, "mrr": 0.75}, "epochs": []}
    emit_report(report, tmp_path / "a")
    emit_report(dict(reversed(list(report.items()))), tmp_path / "b")
    for name in ("report.json", "report.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_zero_epochs_reports_initial_model(tmp_path):
    report = runner.run(tiny_run(tmp_path, epochs=0))
    assert [e["epoch"] for e in report["epochs"]] == [0]
    assert report["selected_epoch"] == 0


def test_s4_report_fields_and_outputs(tmp_path):
    cfg = tiny_run(tmp_path, kind="linkable-channel", subtask="s4", size=1, window=6,
                   classifier_hidden=8, epochs=1, max_len=32, max_positions=32)
    report = runner.run(cfg)
    assert set(report["test"]) == {"one_minus_scaled_vi", "ari", "conv_precision", "conv_recall", "conv_f1"}
    assert (tmp_path / "run/links.jsonl").exists() and (tmp_path / "run/clusters.jsonl").exists()


def test_evaluate_run_matches_report(tmp_path):
    cfg = tiny_run(tmp_path)
    report = runner.run(cfg)
    assert runner.evaluate_run(cfg.out) == report["test"]


# -- command line ------------------------------------------------------------------------

def test_cli_synth_and_train(tmp_path, capsys):
    assert cli.main(["synth", "ranking", "--size", "6", "--out", str(tmp_path / "d")]) == 0
    paths = json.loads(capsys.readouterr().out)
    cfg = RunConfig.for_subtask("s1", train=paths["train"], valid=paths["valid"], test=paths["test"], **TINY)
    dump_config(cfg, tmp_path / "run.cfg")
    assert cli.main(["train", "--config", str(tmp_path / "run.cfg"), "--out", str(tmp_path / "r")]) == 0
    assert "Recall@1" in capsys.readouterr().out
    assert (tmp_path / "r/report.json").exists()


def test_cli_reports_errors(tmp_path, capsys):
    (tmp_path / "bad.cfg").write_text("nonsense = 1\n")
    assert cli.main(["train", "--config", str(tmp_path / "bad.cfg")]) == 2
    assert "unknown key" in capsys.readouterr().err


def test_cli_acceptance_quick(capsys):
    assert cli.main(["acceptance", "AC-7"]) == 0
    assert capsys.readouterr().out.startswith("AC-7 PASS")
