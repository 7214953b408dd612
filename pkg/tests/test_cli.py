import csv
import io
import subprocess
import sys

import pytest

import seqboost.cli as cli
from seqboost.cli import main


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_table2_stdout(capsys):
    assert main(["table2"]) == 0
    out = rows(capsys.readouterr().out)
    assert len(out) == 25
    assert float(out[-1]["boost_factor"]) == pytest.approx(68.1985, abs=1e-3)


def test_table3_to_file(tmp_path):
    p = tmp_path / "t3.csv"
    assert main(["--out", str(p), "table3"]) == 0
    assert len(rows(p.read_text())) == 25
    # flags after the subcommand work too
    q = tmp_path / "t3b.csv"
    assert main(["table3", "--out", str(q)]) == 0
    assert p.read_bytes() == q.read_bytes()


def test_simulate_small(tmp_path):
    out, rec = tmp_path / "s.csv", tmp_path / "r.csv"
    code = main(["simulate", "--preset", "fig1", "--trials", "20", "--max-samples", "2000", "--out", str(out), "--records", str(rec)])
    assert code == 0
    assert len(rows(out.read_text())) == 5
    assert len(rows(rec.read_text())) == 5 * 20 * 2


def test_confseq_input(tmp_path, capsys):
    p = tmp_path / "x.txt"
    p.write_text("\n".join(str(2 + 0.1 * (i % 7 - 3)) for i in range(30)))
    assert main(["confseq", "--input", str(p)]) == 0
    out = rows(capsys.readouterr().out)
    assert len(out) == 30
    assert all(float(r["lower"]) >= float(r["robbins_lower"]) - 1e-6 for r in out)


def test_wor_and_log_steps(tmp_path, capsys):
    p = tmp_path / "pop.txt"
    p.write_text("1\n" * 60 + "0\n" * 40)
    assert main(["wor", "--population", str(p)]) == 0
    (row,) = rows(capsys.readouterr().out)
    assert row["decision"] == "reject_null"
    assert main(["--log-steps", "wor", "--population", str(p)]) == 0
    steps = rows(capsys.readouterr().out)
    assert len(steps) == int(row["stopping_time"])


def test_conformal(tmp_path, capsys):
    p = tmp_path / "x.txt"
    p.write_text("\n".join(["0"] * 5 + ["10"] * 20))
    assert main(["conformal", "--input", str(p), "--kappa", "0.3"]) == 0
    (row,) = rows(capsys.readouterr().out)
    assert row["decision"] in ("reject_null", "undecided")


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        main(["simulate", "--preset", "nope"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 1
    assert main(["table2", "--alpha", "1.5"]) == 1
    assert main(["--parallelism", "0", "table2"]) == 1
    p = tmp_path / "bad.txt"
    p.write_text("1\nabc\n")
    assert main(["conformal", "--input", str(p)]) == 1
    assert "bad.txt:2" in capsys.readouterr().err


def test_io_errors(tmp_path, capsys):
    assert main(["wor", "--population", str(tmp_path / "missing.txt")]) == 3
    assert main(["--out", str(tmp_path / "nodir" / "x.csv"), "table2"]) == 3
    assert "nodir" in capsys.readouterr().err


def test_fallback_exit_code(monkeypatch):
    monkeypatch.setitem(cli.COMMANDS, "table2", lambda args: 4)
    assert main(["table2"]) == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "seqboost", "table2"], capture_output=True, text=True)
    assert r.returncode == 0 and len(rows(r.stdout)) == 25
