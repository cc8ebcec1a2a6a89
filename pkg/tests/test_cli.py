import io
import json
import subprocess
import sys

import numpy as np
import pytest

from shellspec import cli
from shellspec.spectral import SpectralError


def call(argv):
    out, err = io.StringIO(), io.StringIO()
    rc = cli.run(argv, out, err)
    return rc, out.getvalue(), err.getvalue()


@pytest.mark.parametrize("text,kind,params,levels", [
    ("icosphere:1.0:{1,2,3}", "icosphere", (1.0,), (1, 2, 3)),
    ("ellipsoid:2,1,1:2", "ellipsoid", (2.0, 1.0, 1.0), (2,)),
    ("spheroid:2,1:0-2", "spheroid", (2.0, 1.0), (0, 1, 2)),
    ("two-copy:0.5,4,0,0:1", "two-copy", (0.5, 4.0, 0.0, 0.0), (1,)),
])
def test_parse_shape(text, kind, params, levels):
    s = cli.parse_shape(text)
    assert (s.kind, s.params, s.subdivisions) == (kind, params, levels)


@pytest.mark.parametrize("text", ["cube:1:1", "icosphere:1", "icosphere:-1:2", "ellipsoid:1,1:2",
                                  "icosphere:1:{2,1}", "icosphere:1:x", "off:"])
def test_parse_shape_rejects(text):
    with pytest.raises(cli.ValidationError):
        cli.parse_shape(text)


def test_off_shape_keeps_path():
    s = cli.parse_shape("off:some/dir/body.off")
    assert s.kind == "off" and s.path == "some/dir/body.off" and s.levels() == [None]


def test_dumps_is_stable():
    obj = {"b": np.float64(0.1), "a": [1, 2.0, float("nan"), True, None], "c": np.arange(2)}
    text = cli.dumps(obj)
    assert json.loads(text) == {"b": 0.1, "a": [1, 2.0, None, True, None], "c": [0, 1]}
    assert "2.0" in text
    assert text == cli.dumps(obj)


def test_mesh_command_and_csv(tmp_path):
    rc, out, err = call(["mesh", "--shape", "icosphere:1:{0,1}", "--csv", str(tmp_path / "t.csv")])
    assert rc == 0, err
    rep = json.loads(out)
    assert rep["command"] == "mesh" and len(rep["results"]) == 2
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "shape,m,a,quantity,value"
    assert any(",n_panels,80" in ln for ln in lines)


def test_lambda_command_writes_sidecar(tmp_path):
    out = tmp_path / "r.json"
    rc, _, err = call(["lambda", "--shape", "icosphere:1:1", "--out", str(out)])
    assert rc == 0, err
    res = json.loads(out.read_text())["results"][0]
    assert res["bisection"]["lambda_omega"] == pytest.approx(res["lambda_omega"], rel=1e-6)
    assert res["relative_agreement"] < 1e-6
    meta = json.loads((tmp_path / "r.json.meta.json").read_text())
    assert "started" in meta and "started" not in out.read_text()


@pytest.mark.parametrize("argv", [
    ["mesh", "--shape", "nothing:1:1"],
    ["mesh", "--bogus"],
    [],
    ["verify", "--shape", "icosphere:1:1", "--a", "2"],
    ["curves", "--shape", "icosphere:1:1", "--a-grid", "-1,1,5"],
    ["mesh", "--shape", "off:/does/not/exist.off"],
])
def test_validation_exit_code(argv):
    rc, _, err = call(argv)
    assert rc == 1
    assert "shellspec:" in err


def test_numerical_failure_exit_code(monkeypatch):
    def boom(cfg):
        raise SpectralError("no convergence")

    monkeypatch.setitem(cli._RUNNERS, "capacity", boom)
    rc, _, err = call(["capacity", "--shape", "icosphere:1:0"])
    assert rc == 2 and "numerical failure" in err


def test_sweep_partial_failure(tmp_path):
    cfg = tmp_path / "sweep.json"
    cfg.write_text(json.dumps({"shapes": ["icosphere:1:0", "ellipsoid:2,1:1"], "experiments": ["capacity"]}))
    rc, _, err = call(["sweep", str(cfg), "--out", str(tmp_path / "o")])
    assert rc == 0 and "1 sweep job(s) failed" in err
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert [r["status"] for r in rep["results"]] == ["ok", "failed"]
    assert "ValidationError" in rep["results"][1]["error"]
    for name in ("table.csv", "margins.dat", "report.meta.json"):
        assert (tmp_path / "o" / name).exists()


def test_sweep_all_failed_and_bad_config(tmp_path):
    cfg = tmp_path / "sweep.json"
    cfg.write_text(json.dumps({"shapes": ["x:1:1"], "experiments": ["capacity"]}))
    assert call(["sweep", str(cfg)])[0] == 2
    cfg.write_text(json.dumps({"shapes": []}))
    assert call(["sweep", str(cfg)])[0] == 1
    cfg.write_text("{not json")
    assert call(["sweep", str(cfg)])[0] == 1


def test_threads_from_environment(monkeypatch):
    monkeypatch.setenv("SHELLSPEC_THREADS", "2")
    assert cli._threads(None) == 2
    assert cli._threads(3) == 3
    monkeypatch.setenv("SHELLSPEC_THREADS", "many")
    with pytest.raises(cli.ValidationError):
        cli._threads(None)


def test_sweep_threads_merge_in_order(tmp_path):
    cfg = tmp_path / "sweep.json"
    cfg.write_text(json.dumps({"shapes": ["icosphere:1:0", "ellipsoid:2,1,1:0", "icosphere:2:0"],
                               "experiments": ["capacity"]}))
    one = call(["sweep", str(cfg), "--threads", "1"])[1]
    three = call(["sweep", str(cfg), "--threads", "3"])[1]
    assert one == three


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "shellspec", "mesh", "--shape", "icosphere:1:0"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["results"][0]["n_panels"] == 20
