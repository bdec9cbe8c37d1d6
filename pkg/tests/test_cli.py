"""CLI surface: subcommands, exit codes, dataset format."""

import json

from prefixla.cli import main
from prefixla.setdisj import read_jsonl


def test_sdgen_writes_jsonl_schema(tmp_path, capsys):
    out = tmp_path / "train.jsonl"
    code = main(["sdgen", "--split", "train", "--scale", "0.0002",
                 "--seed", "3", "--out", str(out)])
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 12 * 4  # 20000 * 0.0002 = 4 instances per tuple
    row = json.loads(lines[0])
    assert sorted(row) == ["input_ids", "labels", "len_a", "len_b", "vocab"]
    insts = read_jsonl(str(out))
    assert insts[0].vocab == 256


def test_sdgen_is_deterministic(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for path in (a, b):
        assert main(["sdgen", "--split", "eval", "--scale", "0.001",
                     "--seed", "9", "--out", str(path)]) == 0
    assert a.read_text() == b.read_text()


def test_sdgen_rejects_bad_scale(tmp_path, capsys):
    code = main(["sdgen", "--split", "train", "--scale", "4.0",
                 "--out", str(tmp_path / "x.jsonl")])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_prompt_jrt_round_trip(monkeypatch, capsys):
    import io
    import sys

    monkeypatch.setattr(sys, "stdin", io.StringIO("1 2 3\n|\n9\n"))
    code = main(["prompt", "jrt", "--budget", "8"])
    assert code == 0
    assert capsys.readouterr().out.strip() == "1 2 3 9 1 2 3 9"


def test_prompt_jrt_budget_too_small(monkeypatch, capsys):
    import io
    import sys

    monkeypatch.setattr(sys, "stdin", io.StringIO("1 2 3\n|\n9\n"))
    assert main(["prompt", "jrt", "--budget", "3"]) == 1


def test_equiv_check_passes(capsys):
    code = main(["equiv-check", "--instances", "5", "--seed", "1"])
    out = capsys.readouterr().out
    assert code == 0
    assert out.count("[PASS]") == 3


def test_bench_writes_csv(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    code = main(["bench", "--impls", "la_parallel", "--n", "32,64",
                 "--d", "4", "--out", str(out)])
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "impl,N,M,B,d,D,latency_ms,trials"
    assert len(lines) == 3


def test_report_data_order_from_sweep_csv(tmp_path, capsys):
    from prefixla.toy import write_sweep_csv

    runs = tmp_path / "runs.csv"
    write_sweep_csv([{
        "d_model": 16, "feature_dim": 4, "causal": True, "state_bytes": 3280,
        "acc_overall": 0.5, "acc_a_smaller": 0.7, "acc_b_smaller": 0.4,
        "n_runs": 6, "n_failed": 0,
    }], str(runs))
    code = main(["report", "data-order", "--runs", str(runs),
                 "--out-dir", str(tmp_path / "plots")])
    assert code == 0
    assert (tmp_path / "plots" / "panel_gap.csv").exists()


def test_missing_file_is_validation_error(tmp_path):
    assert main(["report", "data-order", "--runs", str(tmp_path / "nope.csv"),
                 "--out-dir", str(tmp_path)]) == 1
