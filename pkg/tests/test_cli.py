import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from springblock.cli import UsageError, main, parse_grid


def run(tmp_path, *args):
    return main(["--out", str(tmp_path), *args])


def manifest(tmp_path):
    return json.loads((tmp_path / "manifest.json").read_text())


def test_parse_grid():
    np.testing.assert_allclose(parse_grid("0.1:0.5:0.1"), [0.1, 0.2, 0.3, 0.4, 0.5])
    assert parse_grid("0.01:0.6:0.01").size == 60
    np.testing.assert_array_equal(parse_grid("1e-2, 1e-3,1e-4"), [1e-2, 1e-3, 1e-4])
    for bad in ("1:2", "a,b", "0.5:0.1:0.1", "0:1:0", ""):
        with pytest.raises(UsageError):
            parse_grid(bad)


def test_simulate_writes_manifest_and_csv(tmp_path):
    assert run(tmp_path, "simulate", "--tmax", "5") == 0
    m = manifest(tmp_path)
    assert m["status"] == "ok" and m["command"] == "simulate"
    assert set(m["versions"]) >= {"springblock", "numpy", "scipy", "python"}
    assert m["config"]["eps"] == 1e-2
    with open(tmp_path / "trajectory.csv") as fh:
        head = next(csv.reader(fh))
    assert head[-1] == "defect"


def test_csv_outputs_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run(d, "melnikov", "--h-grid", "0.1,0.3", "--eps", "1e-3") == 0
    assert (a / "melnikov.csv").read_bytes() == (b / "melnikov.csv").read_bytes()


def test_melnikov_matches_golden_rows(tmp_path):
    assert run(tmp_path, "melnikov", "--h-grid", "0.01:0.03:0.01", "--eps", "1e-3") == 0
    got = (tmp_path / "melnikov.csv").read_text().splitlines()
    gold = (Path(__file__).parent / "data" / "melnikov_xi0.5.csv").read_text().splitlines()
    assert got[:4] == gold[:4]


def test_melnikov_parallel_same_output(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(a, "melnikov", "--h-grid", "0.1,0.2,0.3") == 0
    assert run(b, "melnikov", "--h-grid", "0.1,0.2,0.3", "--jobs", "2") == 0
    assert (a / "melnikov.csv").read_bytes() == (b / "melnikov.csv").read_bytes()


def test_gamma0_corner_table(tmp_path):
    assert run(tmp_path, "gamma0", "--alpha", "0.9", "--xi", "0.5") == 0
    rows = {r["name"]: r for r in csv.DictReader(open(tmp_path / "gamma0_corners.csv"))}
    assert float(rows["Q5"]["c1"]) == pytest.approx(-19 / 36, abs=1e-12)
    assert float(rows["Q5"]["c2"]) == pytest.approx(1 / 36, abs=1e-12)
    assert float(rows["Q4"]["c2"]) == pytest.approx(3.6, abs=1e-12)
    assert manifest(tmp_path)["outputs"] == ["gamma0_segments.csv", "gamma0_corners.csv", "gamma0.json"]


def test_hopf_and_atlas_and_levelset(tmp_path):
    assert run(tmp_path, "hopf", "--eps", "1e-3") == 0
    doc = json.loads((tmp_path / "hopf.json").read_text())
    assert doc["alpha_H"] == pytest.approx(0.49975)
    assert run(tmp_path, "atlas") == 0
    assert len(json.loads((tmp_path / "atlas.json").read_text())["fixed_points"]) == 9
    assert run(tmp_path, "levelset", "--h", "0.4") == 0


def test_reduced_command(tmp_path):
    assert run(tmp_path, "reduced", "--alpha", "0.45", "--y0", "-0.5") == 0
    assert manifest(tmp_path)["status"] == "ok"


def test_usage_errors_exit_2(tmp_path, capsys):
    assert run(tmp_path, "simulate", "--eps", "0") == 2
    assert "reduced" in capsys.readouterr().err
    assert run(tmp_path, "gamma0", "--alpha", "0.5") == 2
    assert run(tmp_path, "melnikov", "--h-grid", "1:2") == 2
    assert run(tmp_path, "bifurcate", "--mode", "eps", "--grid", "1e-3") == 2
    assert run(tmp_path, "nosuchcommand") == 2


def test_numeric_failure_exit_1(tmp_path, capsys):
    code = run(tmp_path, "simulate", "--z0", "30", "--y0", "0", "--tmax", "10", "--eps", "0.1")
    assert code == 1
    assert "numerical failure" in capsys.readouterr().err
    m = manifest(tmp_path)
    assert m["status"] == "failed"
    assert m["error"]["type"]


def test_bifurcate_gap_row(tmp_path):
    assert run(tmp_path, "bifurcate", "--mode", "alpha", "--eps", "1e-3", "--grid", "0.45") == 0
    rows = list(csv.reader(open(tmp_path / "bifurcation.csv")))
    assert rows[0] == ["param", "amplitude", "period", "max_multiplier", "status"]
    assert rows[1][-1].startswith("gap")


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("SPRINGBLOCK_OUT", str(tmp_path / "env"))
    assert main(["atlas"]) == 0
    assert (tmp_path / "env" / "manifest.json").exists()


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "springblock.cli", "--out", str(tmp_path), "atlas"],
                       capture_output=True, text=True)
    assert r.returncode == 0
    assert (tmp_path / "atlas.json").exists()
