import json
import subprocess
import sys

import numpy as np
import pytest

from dpsoliton.channel import read_waveform, write_waveform
from dpsoliton.cli import main
from dpsoliton.sigkit import PHYSICAL, DualPolEnvelope, frame_grid

SHORT = """schema_version = 1
[link]
length_km = 87.0
noiseless = {noiseless}
[run]
n_realizations = 2
master_seed = 9
probe_spacing_km = 43.5
trace_spacing_km = 14.5
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "short.toml"
    p.write_text(SHORT.format(noiseless="true"))
    return p


def run(argv, capsys):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr()


def test_generate_transmit_analyze(cfg_path, tmp_path, capsys):
    out = tmp_path / "o"
    code, io = run(["generate", "--config", cfg_path, "--out", out, "--index", 3], capsys)
    assert code == 0
    wfm = io.out.strip()
    meta = json.load(open(wfm[:-4] + ".json"))
    assert meta["realization"] == 3 and meta["average_power_dbm"] == pytest.approx(-0.75, abs=0.1)
    env = read_waveform(wfm)
    assert env.grid.n_samples == 2048 and env.unit_system == PHYSICAL

    code, io = run(["transmit", wfm, "--config", cfg_path, "--out", out], capsys)
    assert code == 0
    probes = io.out.split()
    assert len(probes) == 3 and probes[-1].endswith("z00087.0km.wfm")

    code, io = run(["analyze", probes[-1], "--config", cfg_path], capsys)
    assert code == 0
    res = json.loads(io.out)
    assert res["distance_km"] == 87.0 and res["failures"] == []
    for row in res["eigenvalues"]:
        assert abs(row["error_phi_c"]) <= 1e-2 and abs(row["error_phi_d"]) <= 1e-2


def test_generate_is_deterministic(cfg_path, tmp_path, capsys):
    paths = []
    for sub in ("a", "b"):
        code, io = run(["generate", "--config", cfg_path, "--out", tmp_path / sub], capsys)
        assert code == 0
        paths.append(io.out.strip())
    assert open(paths[0], "rb").read() == open(paths[1], "rb").read()


def test_sweep_and_report(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text(SHORT.format(noiseless="false"))
    out = tmp_path / "s"
    code, io = run(["sweep", "--config", cfg, "--out", out, "--realizations", 1], capsys)
    assert code == 0
    names = {p.rsplit("/", 1)[-1] for p in io.out.split()}
    assert {"constellation.csv", "std.csv", "symbol_errors.csv", "traces.csv", "manifest.json"} <= names
    first = (out / "std.csv").read_bytes()
    code, _ = run(["report", "--config", cfg, "--out", out], capsys)
    assert code == 0
    assert (out / "std.csv").read_bytes() == first


@pytest.mark.parametrize("argv", [
    ["sweep", "--realizations", "0"],
    ["sweep", "--threads", "0"],
    ["sweep", "--length-km", "100.05"],
    ["report", "--stats", "/nonexistent/stats.npz"],
])
def test_config_errors(argv, tmp_path, capsys):
    code, io = run(argv + ["--out", tmp_path], capsys)
    assert code == 2 and "config error" in io.err


def test_bad_toml_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text("[run]\nunknown_key = 1\n")
    assert run(["sweep", "--config", p], capsys)[0] == 2


def test_numerical_failure_exit_code(cfg_path, tmp_path, capsys):
    g = frame_grid(8192)
    path = tmp_path / "zero.wfm"
    write_waveform(path, DualPolEnvelope(g, np.zeros(g.n_samples), np.zeros(g.n_samples), PHYSICAL))
    code, io = run(["analyze", path, "--config", cfg_path, "--distance-km", 0], capsys)
    assert code == 3 and "numerical failure" in io.err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "dpsoliton", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "sweep" in res.stdout
