import json

import pytest

from tsrlab.cli import main
from tsrlab.nn.checkpoint import read_checkpoint

ROW = {"filename": "a.png", "split": "val", "html": {"structure": {"tokens": ["<tbody>", "<tr>", "<td>", "</td>", "</tr>", "</tbody>"]}}}
ROW2 = {"filename": "b.png", "split": "val", "html": {"structure": {"tokens": ["<tr>", "<td", ' rowspan="2"', ">", "</td>", "</tr>", "<tr>", "</tr>"]}}}


@pytest.fixture
def gt_file(tmp_path):
    p = tmp_path / "gt.jsonl"
    p.write_text(json.dumps(ROW) + "\n" + json.dumps(ROW2) + "\n")
    return p


def test_analyze_linearproj_28(capsys):
    assert main(["analyze", "--preset", "linearproj-28"]) == 0
    row = capsys.readouterr().out.splitlines()[-1].split()
    assert row[0] == "LinearProj-28" and "6.25" in row and row[-1] == "256"


def test_analyze_json(capsys):
    assert main(["analyze", "--preset", "convstem", "--json"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["seq_len"] == 729 and d["n_conv"] == 5


def test_analyze_custom_input_size(capsys):
    assert main(["analyze", "--preset", "linearproj-16", "--input-size", "224", "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["seq_len"] == 196


def test_unknown_subcommand_is_usage_error(capsys):
    assert main(["frobnicate"]) == 1
    assert "invalid choice" in capsys.readouterr().err


def test_missing_arguments_are_usage_errors():
    assert main([]) == 1
    assert main(["analyze"]) == 1
    assert main(["analyze", "--preset", "vgg16"]) == 1


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0


def test_teds_identical_files(tmp_path, gt_file, capsys):
    out = tmp_path / "report.json"
    assert main(["teds", "--gt", str(gt_file), "--pred", str(gt_file), "--report", str(out), "--workers", "1"]) == 0
    report = json.loads(out.read_text())
    assert (report["teds_simple"], report["teds_complex"], report["teds_all"]) == (100.0, 100.0, 100.0)
    assert report["n_samples"] == 2


def test_teds_report_is_byte_identical_on_rerun(tmp_path, gt_file):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["teds", "--gt", str(gt_file), "--pred", str(gt_file), "--report", str(a), "--workers", "1"])
    main(["teds", "--gt", str(gt_file), "--pred", str(gt_file), "--report", str(b), "--workers", "2"])
    assert a.read_bytes() == b.read_bytes()


def test_teds_data_errors_exit_two(tmp_path, gt_file):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{oops\n")
    assert main(["teds", "--gt", str(bad), "--pred", str(gt_file)]) == 2
    assert main(["teds", "--gt", str(tmp_path / "nope.jsonl"), "--pred", str(gt_file)]) == 2
    other = tmp_path / "other.jsonl"
    other.write_text(json.dumps({"filename": "zzz", "tokens": []}) + "\n")
    assert main(["teds", "--gt", str(gt_file), "--pred", str(other)]) == 2


def test_teds_split_filter(tmp_path, gt_file, capsys):
    assert main(["teds", "--gt", str(gt_file), "--pred", str(gt_file), "--split", "test"]) == 2
    assert "EmptyJoin" in capsys.readouterr().err


def test_tokenize_round_trip(capsys):
    html = '<thead><tr><td colspan="3"></td></tr></thead>'
    assert main(["tokenize", html]) == 0
    out = capsys.readouterr().out
    assert f"html   {html}" in out and "complex" in out


def test_tokenize_malformed_is_data_error():
    assert main(["tokenize", "<tr><td>"]) == 2


def test_tokenize_manifest(capsys):
    assert main(["tokenize", "--manifest"]) == 0
    assert "sha256" in capsys.readouterr().out


def test_probe_rf_toy(capsys):
    assert main(["probe-rf", "--preset", "toy-convstem"]) == 0
    out = capsys.readouterr().out
    assert "MISMATCH" not in out and out.count("match") == 3


def test_toy_train_writes_outputs(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("TSRLAB_SEED", "4")
    csv_path, ckpt = tmp_path / "loss.csv", tmp_path / "m.ckpt"
    argv = ["toy-train", "--samples", "2", "--steps", "3", "--loss-csv", str(csv_path), "--checkpoint", str(ckpt)]
    assert main(argv) == 0
    header, _ = read_checkpoint(ckpt)
    assert header["seed"] == 4 and header["preset"] == "toy-linearproj"
    first = csv_path.read_text()
    assert main(argv) == 0
    assert csv_path.read_text() == first


def test_bad_seed_env_is_usage_error(monkeypatch):
    monkeypatch.setenv("TSRLAB_SEED", "abc")
    assert main(["toy-train", "--steps", "1"]) == 1
