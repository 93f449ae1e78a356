from __future__ import annotations

import json
from pathlib import Path

import pytest

from micoder.annotation import LabelRecord, write_label_file
from micoder.cli import main

pytestmark = pytest.mark.usefixtures("pin_trained_at")


@pytest.fixture
def pin_trained_at(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1600000000")


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """One simgen corpus, trained registry, and model labels shared by the
    CLI tests (training is the expensive step)."""
    root = tmp_path_factory.mktemp("cli")
    assert (
        main(
            [
                "simgen",
                "--seed",
                "5",
                "--conversations",
                "120",
                "--listeners",
                "4",
                "--mean-length",
                "14",
                "--out",
                str(root / "corpus.jsonl"),
                "--labels-out",
                str(root / "truth.labels"),
                "--params-out",
                str(root / "params.json"),
            ]
        )
        == 0
    )
    assert (
        main(
            [
                "train",
                "--input",
                str(root / "corpus.jsonl"),
                "--labels",
                str(root / "truth.labels"),
                "--models",
                str(root / "registry"),
                "--k",
                "0",
                "--epochs",
                "6",
                "--seed",
                "1",
            ]
        )
        == 0
    )
    assert (
        main(
            [
                "label",
                "--input",
                str(root / "corpus.jsonl"),
                "--models",
                str(root / "registry"),
                "--k",
                "0",
                "--out",
                str(root / "model.labels"),
            ]
        )
        == 0
    )
    return root


def test_ingest_roundtrip(tmp_path, capsys):
    src = tmp_path / "in.jsonl"
    records = [
        {"conversation_id": "a", "listener_id": "l1", "member_id": "m1", "rating": 4},
        {
            "utterance_id": "a0",
            "conversation_id": "a",
            "index": 0,
            "speaker": "member",
            "timestamp": "2021-01-01T00:00:00Z",
            "text": "hi",
        },
    ]
    src.write_text("\n".join(json.dumps(r) for r in records) + "\n")
    out = tmp_path / "out.jsonl"
    assert main(["ingest", "--input", str(src), "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary == {"conversations": 1, "utterances": 1, "skipped_records": 0}


def test_ingest_missing_file_exit_1(tmp_path, capsys):
    assert main(["ingest", "--input", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "o")]) == 1
    err = json.loads(capsys.readouterr().err.strip())
    assert err["code"] == "corpus_error"
    assert "error" in err


def test_usage_error_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["trends"])  # missing required flags
    assert exc.value.code == 2


def test_unknown_subcommand_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_agree_bundled_hand_fixture(tmp_path, capsys):
    # the committed 4-unit fixture: presence pairs (1,1),(0,0),(1,0),(0,0)
    labels = Path(__file__).parent / "data" / "agree_fixture.labels"
    out = tmp_path / "agree"
    assert main(["agree", "--labels", str(labels), "--out", str(out)]) == 0
    report = json.loads((tmp_path / "agree.json").read_text())
    assert report["per_code"]["Affirm"]["alpha"] == pytest.approx(0.5333, abs=1e-4)
    text = capsys.readouterr().out
    assert "0.5333" in text


def test_pipeline_closure_label_feeds_analyses(pipeline_dir, tmp_path, capsys):
    # model-label output is direct input to satisfy/trends/corr/topwords
    for args in (
        ["satisfy", "--input", str(pipeline_dir / "corpus.jsonl"), "--labels", str(pipeline_dir / "model.labels"), "--out", str(tmp_path / "sat")],
        ["trends", "--input", str(pipeline_dir / "corpus.jsonl"), "--labels", str(pipeline_dir / "model.labels"), "--out", str(tmp_path / "tr"),
         "--min-span-days", "0", "--min-sessions", "1", "--min-utterances", "2"],
        ["corr", "--input", str(pipeline_dir / "corpus.jsonl"), "--labels", str(pipeline_dir / "model.labels"), "--out", str(tmp_path / "corr"),
         "--min-span-days", "0", "--min-sessions", "1", "--min-utterances", "2"],
        ["topwords", "--input", str(pipeline_dir / "corpus.jsonl"), "--labels", str(pipeline_dir / "model.labels"), "--out", str(tmp_path / "tw")],
    ):
        assert main(args) == 0, args[0]
    capsys.readouterr()
    assert (tmp_path / "sat.txt").exists() and (tmp_path / "sat.json").exists()
    assert (tmp_path / "tr.json").exists()
    assert (tmp_path / "corr.utterance.csv").exists()
    assert (tmp_path / "corr.conversation.csv").exists()
    assert (tmp_path / "corr.listener.csv").exists()
    assert (tmp_path / "tw.json").exists()


def test_satisfy_report_contains_star_legend(pipeline_dir, tmp_path, capsys):
    out = tmp_path / "sat"
    assert (
        main(
            [
                "satisfy",
                "--input",
                str(pipeline_dir / "corpus.jsonl"),
                "--labels",
                str(pipeline_dir / "model.labels"),
                "--out",
                str(out),
            ]
        )
        == 0
    )
    capsys.readouterr()
    text = (tmp_path / "sat.txt").read_text()
    assert "***p < 0.001; **p<0.01; *p<0.05 ⊙p<0.1" in text


def test_evaluate_writes_report(pipeline_dir, tmp_path, capsys):
    out = tmp_path / "eval"
    assert (
        main(
            [
                "evaluate",
                "--input",
                str(pipeline_dir / "corpus.jsonl"),
                "--labels",
                str(pipeline_dir / "truth.labels"),
                "--k",
                "0",
                "--epochs",
                "4",
                "--out",
                str(out),
            ]
        )
        == 0
    )
    capsys.readouterr()
    report = json.loads((tmp_path / "eval.json").read_text())
    assert report["k"] == 0
    assert report["codes"]
    for code_report in report["codes"].values():
        assert 0.0 <= code_report["f1"] <= 1.0


def test_suggest_writes_queue(pipeline_dir, tmp_path, capsys):
    out = tmp_path / "queue.json"
    assert (
        main(
            [
                "suggest",
                "--input",
                str(pipeline_dir / "corpus.jsonl"),
                "--models",
                str(pipeline_dir / "registry"),
                "--k",
                "0",
                "--suggest-threshold",
                "0.7",
                "--out",
                str(out),
            ]
        )
        == 0
    )
    capsys.readouterr()
    queue = json.loads(out.read_text())
    assert queue["threshold"] == 0.7
    for item in queue["items"]:
        assert all(p >= 0.7 for p in item["suggestions"].values())


def test_validate_reports_alphas(pipeline_dir, tmp_path, capsys):
    # add two synthetic human annotators agreeing with the model labels
    from micoder.annotation import load_label_file

    store = load_label_file(pipeline_dir / "model.labels")
    human_records = []
    for (uid, _), record in sorted(store.current_view().items()):
        for annotator in ("a", "b"):
            human_records.append(
                LabelRecord(
                    utterance_id=uid,
                    source=f"human:{annotator}",
                    codes=record.codes,
                    decided_at="2021-01-01T00:00:00Z",
                )
            )
    merged = tmp_path / "merged.labels"
    write_label_file(list(store.records) + human_records, merged)
    out = tmp_path / "val"
    assert main(["validate", "--labels", str(merged), "--out", str(out), "-n", "100", "--seed", "3"]) == 0
    capsys.readouterr()
    report = json.loads((tmp_path / "val.json").read_text())
    assert report["n"] == 100
    assert report["cumulative"]["inter_human"] == pytest.approx(1.0)
    assert report["cumulative"]["vs_model"] == pytest.approx(1.0)


def test_label_then_satisfy_deterministic(pipeline_dir, tmp_path, capsys):
    out1, out2 = tmp_path / "s1", tmp_path / "s2"
    for out in (out1, out2):
        assert (
            main(
                [
                    "satisfy",
                    "--input",
                    str(pipeline_dir / "corpus.jsonl"),
                    "--labels",
                    str(pipeline_dir / "model.labels"),
                    "--out",
                    str(out),
                ]
            )
            == 0
        )
    capsys.readouterr()
    assert (tmp_path / "s1.txt").read_bytes() == (tmp_path / "s2.txt").read_bytes()
    assert (tmp_path / "s1.json").read_bytes() == (tmp_path / "s2.json").read_bytes()


def test_label_records_capped_at_three(pipeline_dir):
    lines = (pipeline_dir / "model.labels").read_text().strip().splitlines()
    assert lines
    for line in lines:
        record = json.loads(line)
        assert 1 <= len(record["codes"]) <= 3
        assert record["source"].startswith("model:")
        assert len(record["confidence"]) == len(record["codes"])
