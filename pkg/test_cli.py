#!/usr/bin/env python3
"""
Test the command-line runner, the run configuration and the result file formats
"""

import itertools
import json
import os
import sys
import time
from types import SimpleNamespace

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pytest
from numpy.testing import assert_allclose

from config import Config, load_run_config
from honeycomb import HoneycombPipeline
from honeycomb.errors import ConfigError, InvalidArgumentError
from honeycomb.output import GRID_MAGIC, read_grid_binary, to_jsonable, write_csv, write_grid_binary
from run import run


def test_default_config():
    config = load_run_config()
    assert config.radius_fraction == Config.DISK_RADIUS_FRACTION
    assert config.green.method == "ewald"
    assert config.envelope.F2.amplitude == 0.0
    assert config.envelope.width == config.envelope.F1.width


def test_overrides_use_dotted_keys():
    config = load_run_config(overrides={"delta": 1e-3, "green.target_tol": 1e-10, "seed": None})
    assert config.delta == 1e-3
    assert config.green.target_tol == 1e-10
    assert config.seed == 0


def test_config_errors(tmp_path):
    print("🧪 Testing configuration errors")
    with pytest.raises(ConfigError) as info:
        load_run_config(overrides={"radius_fraction": 0.4})
    assert "radius_fraction" in str(info.value)
    assert info.value.exit_code == 2

    nested = tmp_path / "nested.json"
    nested.write_text(json.dumps({"green": {"method": "multipole"}}))
    with pytest.raises(ConfigError) as info:
        load_run_config(str(nested))
    assert "green.method" in str(info.value)

    with pytest.raises(ConfigError):
        load_run_config(str(tmp_path / "missing.json"))

    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigError):
        load_run_config(str(broken))

    with pytest.raises(ConfigError):
        load_run_config(overrides={"nodes_per_boundary": 33})
    with pytest.raises(ConfigError):
        load_run_config(overrides={"unknown_key": 1})


def test_exit_codes(tmp_path):
    print("🧪 Testing CLI exit codes")
    assert run([]) == 2
    assert run(["bands", "--radius-fraction", "0.4", "--out", str(tmp_path)]) == 2
    assert run(["evolve", "--config", str(tmp_path / "missing.json")]) == 2


def test_cache_commands(tmp_path, monkeypatch):
    monkeypatch.setattr(Config, "CACHE_PATH", str(tmp_path / "cache.json"))
    assert run(["--cache-stats"]) == 0
    assert run(["--clear-cache"]) == 0
    assert (tmp_path / "cache.json").exists()


def test_evolve_writes_snapshots(tmp_path):
    print("🧪 Testing the evolve stage end to end")
    out = tmp_path / "results"
    code = run(["evolve", "--out", str(out), "--nodes", "32", "--no-cache", "--times", "0", "1.5"])
    assert code == 0

    summary = json.loads((out / "evolve.json").read_text())
    assert [s["time"] for s in summary["snapshots"]] == [0.0, 1.5]
    assert all(s["norm_drift"] < 1e-12 for s in summary["snapshots"])
    assert summary["constants"]["omega_star"] > 0

    meta, data = read_grid_binary(out / "envelope_001.bin")
    assert meta["ncomp"] == 2 and meta["nx"] == Config.ENVELOPE_POINTS
    assert meta["time"] == 1.5
    assert data.shape == (2, meta["nx"], meta["ny"])


def test_evolve_output_is_deterministic(tmp_path):
    args = ["evolve", "--nodes", "32", "--no-cache", "--times", "0", "1.5"]
    assert run(args + ["--out", str(tmp_path / "a")]) == 0
    assert run(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("evolve.json", "envelope_001.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_selfcheck_report_is_deterministic(tmp_path, monkeypatch):
    print("🧪 Testing that selfcheck.json carries no timing")
    passing = lambda self, *args: {"value": 0.0, "tol": 1.0}
    for name in dir(HoneycombPipeline):
        if name.startswith("_check_"):
            monkeypatch.setattr(HoneycombPipeline, name, passing)
    monkeypatch.setattr(HoneycombPipeline, "coefficient", lambda self: SimpleNamespace(rel_gap=0.0, ratio_error=0.0))
    ticks = itertools.count(0.0, 0.37)
    monkeypatch.setattr(time, "time", lambda: next(ticks))

    args = ["selfcheck", "--nodes", "32", "--no-cache"]
    assert run(args + ["--out", str(tmp_path / "a")]) == 0
    assert run(args + ["--out", str(tmp_path / "b")]) == 0
    first = (tmp_path / "a" / "selfcheck.json").read_bytes()
    assert first == (tmp_path / "b" / "selfcheck.json").read_bytes()

    report = json.loads(first)
    assert report["passed"]
    assert all(set(s) == {"name", "value", "tol", "passed"} for s in report["suites"])
    assert "cone fit" in [s["name"] for s in report["suites"]]


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_cone_green_and_ansatz_suites(tmp_path):
    print("🧪 Testing the cone, green method and ansatz selfcheck suites")
    config = load_run_config(overrides={"output_dir": str(tmp_path), "nodes_per_boundary": 96})
    pipeline = HoneycombPipeline(config)
    rng = np.random.default_rng(config.seed)
    for result in (pipeline._check_green_methods(rng), pipeline._check_cone_fit(),
                   pipeline._check_eigvec(), pipeline._check_ansatz()):
        assert result["value"] <= result["tol"]
    assert pipeline.cone() is pipeline.cone()


def test_binary_grid_format(tmp_path):
    rng = np.random.default_rng(0)
    values = rng.normal(size=(2, 4, 3)) + 1j * rng.normal(size=(2, 4, 3))
    path = write_grid_binary(tmp_path / "grid.bin", values, spacing=0.5, span=2.0, time=0.25)
    raw = path.read_bytes()
    assert raw[:8] == GRID_MAGIC
    assert len(raw) == 64 + values.size * 16

    meta, data = read_grid_binary(path)
    assert (meta["ncomp"], meta["nx"], meta["ny"]) == (2, 4, 3)
    assert meta["spacing"] == 0.5 and meta["span"] == 2.0 and meta["time"] == 0.25
    assert_allclose(data, values, rtol=0, atol=0)


def test_binary_grid_rejects_foreign_files(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTAGRID" + bytes(56))
    with pytest.raises(InvalidArgumentError):
        read_grid_binary(bad)
    short = tmp_path / "short.bin"
    short.write_bytes(GRID_MAGIC)
    with pytest.raises(InvalidArgumentError):
        read_grid_binary(short)


def test_csv_header_and_json_values(tmp_path):
    path = write_csv(tmp_path / "t.csv", [("alpha_x", "1/length"), ("omega1", "1/time")],
                     np.array([[0.1, 2.0], [0.2, 3.0]]))
    lines = path.read_text().splitlines()
    assert lines[0] == "alpha_x[1/length],omega1[1/time]"
    assert len(lines) == 3
    with pytest.raises(InvalidArgumentError):
        write_csv(tmp_path / "u.csv", [("a", "1")], np.zeros((2, 2)))

    assert to_jsonable({"c": 1 + 2j, "v": np.array([1.0, 2.0])}) == {"c": {"re": 1.0, "im": 2.0}, "v": [1.0, 2.0]}


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
