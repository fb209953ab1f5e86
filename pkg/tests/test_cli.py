import json
import math
from pathlib import Path

import pytest

from almostqudit.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, main
from almostqudit.sdp import read_sdpa

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def rows_of(text):
    lines = text.strip().splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


def test_bound_qubit_rac(capsys):
    assert main(["bound", str(CONFIGS / "rac.yaml"), "--check"]) == EXIT_OK
    (row,) = rows_of(capsys.readouterr().out)
    assert float(row["bound"]) == pytest.approx((2 + math.sqrt(2)) / 4, abs=1e-6)
    assert row["status"] == "optimal"


def test_bound_classical_flag(capsys):
    assert main(["bound", str(CONFIGS / "rac.yaml"), "--classical", "--check"]) == EXIT_OK
    (row,) = rows_of(capsys.readouterr().out)
    assert float(row["bound"]) == pytest.approx(0.75, abs=1e-6)


def test_bound_qutrit_does_not_drop(capsys):
    assert main(["bound", str(CONFIGS / "rac_qutrit.yaml"), "--check"]) == EXIT_OK
    (row,) = rows_of(capsys.readouterr().out)
    assert float(row["bound"]) >= (6 + math.sqrt(2)) / 8 - 1e-6


def test_bound_writes_csv_manifest_and_sdpa(tmp_path):
    out = tmp_path / "rac.csv"
    sdpa = tmp_path / "rac.dat-s"
    assert main(["bound", str(CONFIGS / "rac.yaml"), "--out", str(out), "--export-sdpa", str(sdpa)]) == EXIT_OK
    assert out.read_text().startswith("level,epsilon,d")
    manifest = json.loads(out.with_suffix(".manifest.json").read_text())
    assert manifest["command"] == "bound"
    assert len(manifest["config_hash"]) == 16
    assert str(sdpa) in manifest["artifacts"]
    assert read_sdpa(sdpa).num_vars > 0


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("scenario:\n  n_x: 4\n  n_b: [2, 2\nlevel: 2\n")
    assert main(["bound", str(bad)]) == EXIT_CONFIG
    assert "line" in capsys.readouterr().err
    unknown = tmp_path / "unknown.yaml"
    unknown.write_text("scenario: {n_x: 4, n_b: [2, 2]}\nwitness: {preset: chsh}\n")
    assert main(["bound", str(unknown)]) == EXIT_CONFIG
    assert main(["bound", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG


def test_unbounded_relaxation_exits_3():
    assert main(["bound", str(CONFIGS / "rac.yaml"), "--level", "1"]) == EXIT_SOLVER


def test_failed_check_exits_4():
    assert main(["bound", str(CONFIGS / "rac.yaml"), "--check", "--expect", "0.9"]) == EXIT_CHECK
    # an almost-qubit run has no stored reference value
    assert main(["bound", str(CONFIGS / "rac.yaml"), "--check", "--epsilon-override", "0.1"]) == EXIT_CHECK


def test_randomness_row(capsys):
    argv = ["randomness", "--observed", "0.8", "--epsilon", "0", "--restarts", "2", "--workers", "1"]
    assert main(argv) == EXIT_OK
    (row,) = rows_of(capsys.readouterr().out)
    assert float(row["R_upper"]) >= float(row["R_lower"]) - 1e-3
    assert float(row["R_lower"]) >= float(row["R_perturbative"]) - 1e-9


def test_selftest_check(tmp_path):
    out = tmp_path / "selftest.csv"
    argv = ["selftest", "--theta", f"0,{math.pi / 8},{math.pi / 4}", "--epsilon", "0,0.001", "--check",
            "--workers", "1", "--out", str(out)]
    assert main(argv) == EXIT_OK
    rows = rows_of(out.read_text())
    assert len(rows) == 6
    assert all(float(r["F_shared"]) <= float(r["F_upper"]) + 1e-6 for r in rows)
