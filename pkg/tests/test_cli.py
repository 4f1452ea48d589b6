import json

import pytest

from cauchy_maps.cli import RunConfig, main
from cauchy_maps.estimators import ConfigError


def test_usage_errors(capsys):
    assert main([]) == 64
    assert main(["nope"]) == 64
    assert main(["peel", "run", "--algo", "x", "--ell", "3"]) == 64
    assert "usage" in capsys.readouterr().err


def test_kernel_build(tmp_path, capsys):
    out = tmp_path / "k.json"
    assert main(["kernel", "build", "--type2", "--K", "4096", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["checksum"]
    report = capsys.readouterr().out
    assert "harmonic" in report


def test_kernel_cache(tmp_path, monkeypatch):
    monkeypatch.setenv("CAUCHY_MAP_CACHE", str(tmp_path))
    assert main(["kernel", "build", "--quad", "--K", "4096", "--out", str(tmp_path / "q.json")]) == 0
    assert (tmp_path / "quad-K4096.json").exists()
    assert main(["oracle", "build", "--kernel", "builtin:quad", "--depth", "8", "--horizon", "6"]) == 0
    assert list(tmp_path.glob("W-*.npz"))


def test_oracle_commands(capsys):
    assert main(["oracle", "W", "--kernel", "builtin:quad", "--ells", "1,2"]) == 0
    assert main(["oracle", "tutte", "--kernel", "builtin:quad", "--m-max", "20"]) == 0
    assert main(["oracle", "first-passage", "--kernel", "builtin:quad", "--k", "1", "--n", "5"]) == 0
    capsys.readouterr()


def test_walk_and_peel(tmp_path, capsys):
    assert main(["walk", "--kind", "down", "--p", "3", "--steps", "1000", "--seed", "2"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "step,state"
    traj = tmp_path / "t.csv"
    out = tmp_path / "p.json"
    assert main(["peel", "run", "--ell", "30", "--algo", "layers", "--samples", "4",
                 "--trajectory", str(traj), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert len(doc["runs"]) == 4
    assert traj.read_text().splitlines()[0] == "n,P,D,H,T,event"
    assert main(["peel", "run", "--ell", "30", "--algo", "uniform", "--trajectory", str(traj)]) == 64


def test_map_build(tmp_path):
    out = tmp_path / "m.json"
    dual = tmp_path / "d.csv"
    assert main(["map", "build", "--ell", "5", "--seed", "1", "--out", str(out),
                 "--dual-csv", str(dual)]) == 0
    doc = json.loads(out.read_text())
    assert doc["V"] - doc["E"] + doc["F"] == 2
    assert main(["map", "build", "--ell", "5", "--format", "binary", "--out",
                 str(tmp_path / "m.npz")]) == 0
    assert main(["map", "build", "--ell", "2000", "--max-half-edges", "64"]) == 2


def test_experiment_run_and_report(tmp_path, capsys):
    out = tmp_path / "rep"
    args = ["experiment", "run", "--name", "theorem1", "--ells", "100,1000", "--samples", "200",
            "--seed", "7", "--out", str(out)]
    code = main(args)
    assert code in (0, 3)
    doc = json.loads((out / "theorem1.json").read_text())
    assert doc["seed"] == 7
    assert (out / "theorem1.csv").read_text().startswith("ell,")
    assert (out / "theorem1.plot.gr_ratio.csv").exists()
    first = doc["digest"]
    assert main(args + ["--workers", "2"]) == code
    assert json.loads((out / "theorem1.json").read_text())["digest"] == first
    assert main(["report", "show", str(out / "theorem1.json")]) == code
    capsys.readouterr()


def test_identity_suite_from_manifest(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"kernel": "builtin:quad", "seed": 7, "output": str(tmp_path / "o"),
                               "experiments": {"identity_suite": {"structures": 50,
                                                                  "coupling_M": 65536}}}))
    assert main(["experiment", "run", "--config", str(cfg)]) == 0
    doc = json.loads((tmp_path / "o" / "identity_suite.json").read_text())
    assert doc["passed"]
    capsys.readouterr()


def test_bad_manifest(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"kernel": "builtin:quad", "bogus": 1}))
    assert main(["experiment", "run", "--config", str(cfg)]) == 2
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"experiments": {"theorem1": {"nope": 1}}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"workers": 0})


def test_kernel_build_reports_invalid_truncation(tmp_path):
    # a short table leaves the harmonicity defect above tolerance
    assert main(["kernel", "build", "--quad", "--K", "512", "--out", str(tmp_path / "q.json")]) == 2
