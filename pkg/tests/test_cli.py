import csv
import io
import json

import pytest

from gridsec import __version__
from gridsec.cli import EXIT_FAILURE, EXIT_INPUT, EXIT_OK, main


def _run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def _body(text):
    return [ln for ln in text.splitlines() if not ln.startswith("#")]


# -- headers and reproducibility ------------------------------------------------------


def test_bdd_header_and_rows(capsys):
    code, out, _ = _run(["bdd", "--trials", "200", "--seed", "5"], capsys)
    assert code == EXIT_OK
    lines = out.splitlines()
    assert lines[0] == f"# gridsec {__version__}"
    assert "# seed: 5" in lines
    assert any(ln.startswith("# input case sha256=") for ln in lines)
    rows = list(csv.DictReader(io.StringIO("\n".join(_body(out)))))
    assert [r["stream"] for r in rows] == ["clean", "gross", "stealthy"]
    assert all(int(r["trials"]) == 200 for r in rows)
    assert float(rows[1]["flag_rate"]) >= 0.99


def test_global_flags_before_subcommand(capsys):
    a = _run(["--seed", "9", "--trials", "50", "bdd"], capsys)
    b = _run(["bdd", "--seed", "9", "--trials", "50"], capsys)
    assert a == b and "# seed: 9" in a[1]


def test_bdd_byte_identical(capsys):
    first = _run(["bdd", "--trials", "100", "--seed", "3"], capsys)[1]
    second = _run(["bdd", "--trials", "100", "--seed", "3"], capsys)[1]
    assert first == second
    assert _run(["bdd", "--trials", "100", "--seed", "4"], capsys)[1] != first


def test_out_directory(tmp_path, capsys):
    code, out, _ = _run(["bdd", "--trials", "50", "--out", tmp_path], capsys)
    assert code == EXIT_OK and out == ""
    assert (tmp_path / "bdd.csv").read_text().startswith("# gridsec")


def test_mtd_row_count(capsys):
    code, out, _ = _run(["mtd", "--trials", "40", "--iterations", "15", "--schedule", "0,0.1,0.2"], capsys)
    assert code == EXIT_OK
    rows = list(csv.DictReader(io.StringIO("\n".join(_body(out)))))
    assert len(rows) == 3
    # no perturbation: zero angle and cost, detection stays at the clean false-alarm rate
    assert rows[0]["cost_delta"] == "0" and rows[0]["spa_rad"] == "0"
    assert abs(float(rows[0]["detection_prob"]) - 0.05) <= float(rows[0]["ci_halfwidth"])


def test_lomos_bench_fields(tmp_path, capsys):
    code, _, _ = _run(["lomos-bench", "--duration", "0.2", "--leaf-count", "512", "--out", tmp_path], capsys)
    assert code == EXIT_OK
    doc = json.loads((tmp_path / "lomos_bench.json").read_text())
    for key in ("seed", "message_bits", "operations", "online_seconds", "ops_per_sec", "setup_seconds",
                "setup_seconds_per_tree", "target_ops_per_sec", "meets_target"):
        assert key in doc
    assert doc["message_bits"] == 128 and doc["operations"] > 0


# -- sim -----------------------------------------------------------------------------------


def test_sim_verdict_and_files(tmp_path, capsys):
    code, out, _ = _run(["sim", "fdi-buscoupler", "--out", tmp_path], capsys)
    assert code == EXIT_OK
    assert "partial outage: loads 0,1" in out
    names = {p.name for p in tmp_path.iterdir()}
    assert names == {"events.jsonl", "alarms.jsonl", "alarm_summary.csv", "trace.csv", "outcome.json"}
    assert "# seed: 7" in (tmp_path / "events.jsonl").read_text()
    outcome = json.loads((tmp_path / "outcome.json").read_text())
    assert outcome["deenergized_loads"] == ["0", "1"]


def test_sim_mitm_address_alarm(capsys):
    code, out, _ = _run(["sim", "mitm"], capsys)
    assert code == EXIT_OK and "address alarm raised" in out


def test_sim_identical_bytes(tmp_path, capsys):
    for d in ("a", "b"):
        assert _run(["sim", "mitm", "--seed", "2", "--out", tmp_path / d], capsys)[0] == EXIT_OK
    for name in ("events.jsonl", "alarms.jsonl", "trace.csv", "outcome.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_sim_defense_flags(capsys):
    _, out, _ = _run(["sim", "mitm", "--no-ids", "--bitw"], capsys)
    assert "frames dropped by BITW" in out and "false SCADA" not in out


@pytest.mark.parametrize("argv", [
    ["sim", "no-such-scenario"],
    ["sim", "/nonexistent/scenario.json"],
    ["bdd", "--case", "/nonexistent/case.json"],
    ["bdd", "--case", "nosuchcase"],
    ["bdd", "--streams", "clean,bogus"],
    ["bdd", "--trials", "0"],
    ["bdd", "--no-such-flag"],
    ["mtd", "--schedule", "0,x"],
])
def test_input_errors_exit_2(argv, capsys):
    code, _, err = _run(argv, capsys)
    assert code == EXIT_INPUT and err


def test_unobservable_measurements_exit_1(tmp_path, capsys):
    ms = tmp_path / "ms.json"
    ms.write_text(json.dumps([{"type": "flow", "line": "L12"}]))
    code, _, err = _run(["bdd", "--case", "ring3", "--measurements", ms, "--trials", "10"], capsys)
    assert code == EXIT_FAILURE and err.startswith("experiment failed")


# -- ids-replay --------------------------------------------------------------------------------


@pytest.fixture
def benign_log(tmp_path, capsys):
    assert _run(["sim", "golden-benign", "--no-ids", "--out", tmp_path / "run"], capsys)[0] == EXIT_OK
    return tmp_path / "run" / "events.jsonl"


def test_replay_baseline_on_itself(benign_log, capsys):
    code, out, _ = _run(["ids-replay", benign_log, "--baseline", benign_log], capsys)
    assert code == EXIT_OK
    assert _body(out) == []
    assert "# command: ids-replay" in out


def test_replay_flood_raises_transport(benign_log, tmp_path, capsys):
    lines = benign_log.read_text().splitlines()
    records = [json.loads(ln) for ln in lines if ln and not ln.startswith("#")]
    frames = [r for r in records if r["type"] == "frame" and r["protocol"] == "goose"]
    flood = []
    for i in range(400):
        rec = dict(frames[0])
        rec["t"] = 5.0 + i * 0.001
        flood.append(json.dumps(rec))
    path = tmp_path / "flood.jsonl"
    path.write_text("\n".join(lines + flood) + "\n")
    code, out, _ = _run(["ids-replay", path, "--baseline", benign_log], capsys)
    assert code == EXIT_OK
    levels = {json.loads(ln)["level"] for ln in _body(out)}
    assert "transport" in levels


def test_replay_malformed_line(benign_log, tmp_path, capsys):
    lines = benign_log.read_text().splitlines()
    lines.insert(10, "{not json")
    path = tmp_path / "bad.jsonl"
    path.write_text("\n".join(lines) + "\n")
    code, _, err = _run(["ids-replay", path, "--baseline", benign_log], capsys)
    assert code == EXIT_INPUT
    assert "line 11" in err


def test_replay_missing_file(benign_log, capsys):
    code, _, err = _run(["ids-replay", "/nonexistent.jsonl", "--baseline", benign_log], capsys)
    assert code == EXIT_INPUT and "not found" in err


def test_replay_summary_file(benign_log, tmp_path, capsys):
    code, _, _ = _run(["ids-replay", benign_log, "--baseline", benign_log, "--out", tmp_path / "r"], capsys)
    assert code == EXIT_OK
    summary = _body((tmp_path / "r" / "alarm_summary.csv").read_text())
    assert summary == [",".join(("level", "count", "max_score", "first_t", "last_t"))]
