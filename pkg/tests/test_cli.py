from __future__ import annotations

import csv
import json
import subprocess
import sys

import pytest

from leakdrift.cli import main
from leakdrift.harness import DETECTORS
from tests.test_harness import TINY


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(TINY))
    return path


def test_generate_writes_scenarios(config, tmp_path):
    out = tmp_path / "d"
    assert main(["generate", "--config", str(config), "--out", str(out)]) == 0
    files = sorted(p.name for p in (out / "scenarios").iterdir())
    assert "baseline.csv" in files and "scenario_000_7mm.csv" in files and "scenario_002_19mm.json" in files
    assert json.loads((out / "manifest.json").read_text())["studies"] == ["generate"]


def test_dist_one_row_per_detector(config, tmp_path):
    out = tmp_path / "r"
    rc = main(["dist", "--config", str(config), "--out", str(out), "--displacements", "0", "--sizes", "19"])
    assert rc == 0
    with open(out / "sweep_dist.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert sorted(r["detector"] for r in rows) == sorted(DETECTORS)


def test_seed_flag_changes_results(config, tmp_path):
    args = ["localize", "--config", str(config), "--sizes", "7"]
    main(args + ["--out", str(tmp_path / "a")])
    main(args + ["--out", str(tmp_path / "b"), "--seed", "5"])
    a = json.loads((tmp_path / "a" / "manifest.json").read_text())
    b = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert a["master_seed"] == 0 and b["master_seed"] == 5
    assert (tmp_path / "a" / "records_localization.json").read_bytes() != (tmp_path / "b" / "records_localization.json").read_bytes()


@pytest.mark.parametrize("argv", [
    ["dist", "--bogus"],
    ["dance"],
    ["dist", "--jobs", "0"],
    ["dist", "--sizes", "seven"],
    ["dist", "--displacements", "-1"],
])
def test_usage_errors_exit_1(argv, capsys):
    assert main(argv) == 1
    assert "error" in capsys.readouterr().err


def test_config_errors_exit_1(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"generator": {"noise_std": 0}}))
    assert main(["dist", "--config", str(path)]) == 1
    assert "generator.noise_std" in capsys.readouterr().err
    path.write_text(json.dumps({**TINY, "leak_edges": ["nope"]}))
    assert main(["localize", "--config", str(path), "--out", str(tmp_path / "o")]) == 1


def test_runtime_errors_exit_2(config, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["localize", "--config", str(config), "--out", str(blocker / "sub")]) == 2


def test_module_entry_point(config, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "leakdrift", "shape", "--config", str(config),
                           "--out", str(tmp_path / "s")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "s" / "sweep_shape.csv").exists()
