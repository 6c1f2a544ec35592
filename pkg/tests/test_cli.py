import csv
import json
import shutil
import subprocess
import sys

import pytest

from mixed_greens.cli import _offsets, load_config, main, ConfigLoadError

FREE = {
    "model": {"kind": "FreeParticle", "n": 1, "mass": 1.0},
    "initial": [0.0],
    "final": [1.0],
    "hbar": 1.0,
    "energy": 0.5,
}

HO_SCAN = {
    "model": {"kind": "HarmonicOscillator", "frequencies": [1.0]},
    "initial": [0.3],
    "final": [0.4],
    "hbar": 1.0,
    "energies": {"start": 0.4, "stop": 0.6, "num": 5},
    "derivatives": "linearized",
    "chunk": 2,
    "search": {"t_max": 20.0},
}


def write(tmp_path, cfg, name="run.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg, indent=2))
    return p


def test_greens_free_particle(tmp_path, capsys):
    rc = main(["greens", "--config", str(write(tmp_path, FREE)), "--out", str(tmp_path / "o")])
    assert rc == 0
    out = json.loads(capsys.readouterr().out)
    assert out["value"]["re"] == pytest.approx(0.8415, abs=1e-4)
    assert out["value"]["im"] == pytest.approx(-0.5403, abs=1e-4)
    meta = json.loads((tmp_path / "o" / "metadata.json").read_text())
    assert meta["config"] == FREE
    assert meta["tool_version"]
    assert "t_max" in meta["truncation"]


def test_missing_config_exit_2(tmp_path, capsys):
    assert main(["greens", "--config", str(tmp_path / "absent.json")]) == 2
    assert "cannot read config" in capsys.readouterr().err


def test_schema_error_names_line(tmp_path, capsys):
    text = '{\n  "model": {"kind": "FreeParticle"},\n  "initial": [0.0],\n  "final": [1.0],\n  "hbar": 1.0,\n  "energy": 0.5,\n  "bogus": 3\n}\n'
    p = tmp_path / "bad.json"
    p.write_text(text)
    assert main(["greens", "--config", str(p)]) == 2
    err = capsys.readouterr().err
    assert f"{p}:7:" in err and "bogus" in err


def test_invalid_json_reports_position(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text('{\n  "hbar": 1.0,\n  "energy": \n}\n')
    with pytest.raises(ConfigLoadError, match=r"broken.json:4:1"):
        load_config(p, "greens")


def test_missing_required_key(tmp_path):
    cfg = dict(FREE)
    del cfg["energy"]
    with pytest.raises(ConfigLoadError, match="'energy' is a required property"):
        load_config(write(tmp_path, cfg), "greens")


def test_offsets_locate_nested_keys():
    text = '{\n "a": {\n   "b": [1,\n 2]\n },\n "c": "x"\n}'
    off = _offsets(text)
    line = lambda path: text.count("\n", 0, off[path]) + 1
    assert line(("a", "b")) == 3
    assert line(("a", "b", 1)) == 4
    assert line(("c",)) == 6


def test_scan_single_point(tmp_path):
    cfg = dict(HO_SCAN, energies=[0.45])
    assert main(["scan", "--config", str(write(tmp_path, cfg)), "--out", str(tmp_path)]) == 0
    rows = list(csv.reader((tmp_path / "scan.csv").open()))
    assert rows[0] == ["E", "Re", "Im", "|G|", "n_traj"]
    assert len(rows) == 2


def test_scan_deterministic_across_workers(tmp_path, monkeypatch):
    p = write(tmp_path, HO_SCAN)
    assert main(["scan", "--config", str(p), "--out", str(tmp_path / "a")]) == 0
    monkeypatch.setenv("MIXED_GREENS_THREADS", "2")
    assert main(["scan", "--config", str(p), "--out", str(tmp_path / "b")]) == 0
    for name in ("scan.csv", "metadata.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    row = next(csv.DictReader((tmp_path / "a" / "scan.csv").open()))
    assert len(row["Re"].replace("-", "").replace(".", "").split("e")[0]) >= 16


def test_computation_error_exit_1(tmp_path, capsys):
    cfg = dict(FREE, energy=-1.0)
    assert main(["greens", "--config", str(write(tmp_path, cfg)), "--out", str(tmp_path)]) == 1
    assert "DomainError" in capsys.readouterr().err
    assert "error" in json.loads((tmp_path / "metadata.json").read_text())


def test_uniformize_command(tmp_path):
    cfg = {
        "model": {"kind": "HarmonicOscillator", "frequencies": [1.0]},
        "hbar": 0.1,
        "energy": 2.0,
        "uniform": {"momentum_axis": [-2.2, 2.2, 161], "q_initial": -1.6, "q_final": [1.9, 2.05],
                    "t_max": 12.0, "threshold": 1.2, "width": 0.2},
    }
    assert main(["uniformize", "--config", str(write(tmp_path, cfg)), "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader((tmp_path / "uniform.csv").open()))
    assert len(rows) == 2
    # beyond the turning point at q = 2 only the transformed value exists
    assert float(rows[1]["caustic_metric"]) == float("inf")
    assert rows[1]["Re"] == rows[1]["transformed_re"]


def test_oracle_compare_command(tmp_path):
    cfg = {
        "model": {"kind": "HarmonicOscillator", "frequencies": [1.0]},
        "representation": [0],
        "initial": [2.1236760581595302],
        "final": [1.5833],
        "energy": 2.3,
        "search": {"t_max": 1.6},
        "oracle": {"hbars": [0.2], "initial_axes": [[-1.2, 1.2, 121]], "final_axes": [[0.7, 1.9, 121]],
                   "t_max": 7.0, "dt": 0.02, "max_maslov": 0},
    }
    assert main(["oracle-compare", "--config", str(write(tmp_path, cfg)), "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader((tmp_path / "oracle.csv").open()))
    assert len(rows) == 1 and float(rows[0]["rel_err"]) >= 0


def test_selftest(tmp_path, capsys):
    assert main(["selftest", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 5


@pytest.mark.skipif(shutil.which("mixed-greens") is None, reason="console script not installed")
def test_console_script(tmp_path):
    proc = subprocess.run(["mixed-greens", "greens", "--config", str(tmp_path / "nope.json")], capture_output=True,
                          text=True)
    assert proc.returncode == 2


def test_module_entry(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mixed_greens.cli", "schema"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["additionalProperties"] is False
