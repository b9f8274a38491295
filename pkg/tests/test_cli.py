import json

import numpy as np
import pytest

from lidarfeat import config
from lidarfeat.cli import EXIT_CONFIG, EXIT_IO, EXIT_PIPELINE, main
from lidarfeat.extract import FeatureSet, read_features, write_features
from lidarfeat.geom import read_poses
from lidarfeat.pairgen import read_manifest

from cli_pipeline import run_pipeline


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("cli"))


def test_simulate_layout(pipeline):
    sim = pipeline / "sim"
    assert len(list((sim / "scans").glob("*.scn"))) == 12
    assert len(read_poses(sim / "poses.txt")) == 12
    meta = json.loads((sim / "scanner.json").read_text())
    assert meta["height"] == 64 and meta["width"] == 1024
    cfg = json.loads((sim / "simulate.config.json").read_text())
    assert cfg["trajectory"]["steps"] == 12


def test_pairgen_outputs(pipeline):
    pairs = pipeline / "pairs"
    manifest = read_manifest(pairs / "manifest.txt")
    assert manifest
    for i, j, _ in manifest:
        assert (pairs / "flows" / f"{i:06d}_{j:06d}.flo").exists()
    assert len(json.loads((pairs / "synthetic.json").read_text())) == 4


def test_train_outputs(pipeline):
    w = pipeline / "w"
    assert (w / "toy.w3dl").exists()
    lines = (w / "toy.loss.csv").read_text().splitlines()
    assert lines[0] == "step,total,repeat,peaky,reliab" and len(lines) == 4


def test_extract_and_register(pipeline, capsys):
    fs = read_features(pipeline / "f" / "000000.f3dl")
    assert len(fs) > 10
    head = (pipeline / "f" / "000000.score.pgm").read_bytes()[:15]
    assert head.startswith(b"P5\n1024 64\n255\n")
    rep = json.loads((pipeline / "r" / "reg.json").read_text())
    assert np.array(rep["transform"]).shape == (3, 4) and rep["inliers"] >= 3
    assert read_features(pipeline / "f" / "net.f3dl").dim == 16


def test_register_prints_matrix(pipeline, capsys):
    f = pipeline / "f"
    assert main(["register", str(f / "000001.f3dl"), str(f / "000000.f3dl")]) == 0
    rows = [l.split() for l in capsys.readouterr().out.strip().splitlines()]
    assert len(rows) == 3 and all(len(r) == 4 for r in rows)


def test_slam_both_modes(pipeline):
    s = pipeline / "slam"
    odo = read_poses(s / "trajectory_odometry.txt")
    lc = read_poses(s / "trajectory_loop.txt")
    assert len(odo) == len(lc) == 12
    summary = json.loads((s / "slam_loop.json").read_text())
    assert summary["loop_closure"] and "optimizer" in summary
    assert (s / "graph_loop.g2o").exists() and (s / "topview_loop.csv").exists()


def test_bench_report(pipeline):
    b = pipeline / "bench"
    rep = json.loads((b / "report.json").read_text())
    assert set(rep["summary"]) >= {"RS", "MR", "RR"}
    assert (b / "pairs.csv").exists() and (b / "sweep_RS.dat").exists()
    timing = json.loads((b / "report.timing.json").read_text())
    assert timing["reference_ms"]["extract"] == 22.9


def test_bench_identity_manifest(pipeline, tmp_path, capsys):
    man = tmp_path / "id.txt"
    eye = "1 0 0 0 0 1 0 0 0 0 1 0"
    man.write_text("".join(f"{k} {k} {eye}\n" for k in range(3)))
    assert main(["bench", "--data", str(pipeline / "sim"), "--manifest", str(man), "--out", str(tmp_path / "o")]) == 0
    s = json.loads((tmp_path / "o" / "report.json").read_text())["summary"]
    assert (s["RS"], s["MR"], s["RR"]) == (100.0, 100.0, 100.0)


def test_bench_external_features(pipeline, tmp_path):
    man = tmp_path / "id.txt"
    man.write_text("0 0 1 0 0 0 0 1 0 0 0 0 1 0\n")
    assert main(["bench", "--features", str(pipeline / "f"), "--manifest", str(man), "--out", str(tmp_path / "o")]) == 0


def test_malformed_config_writes_nothing(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    out = tmp_path / "out"
    assert main(["simulate", "--out", str(out), "--config", str(bad)]) == EXIT_CONFIG
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["exit_code"] == EXIT_CONFIG
    assert main(["simulate", "--out", str(out), "--set", "scanner.bogus=1"]) == EXIT_CONFIG
    assert main(["simulate", "--out", str(out), "--set", "pairgen.inner_radius=9"]) == EXIT_CONFIG
    assert main(["simulate", "--out", str(out), "--set", "extract.nms_radius=\"x\""]) == EXIT_CONFIG
    assert not out.exists()


def test_io_and_pipeline_errors(tmp_path, rng):
    assert main(["extract", str(tmp_path / "missing.scn"), "--out", str(tmp_path / "x.f3dl")]) == EXIT_IO
    (tmp_path / "junk.f3dl").write_bytes(b"junk")
    assert main(["register", str(tmp_path / "junk.f3dl"), str(tmp_path / "junk.f3dl")]) == EXIT_IO
    tiny = FeatureSet(np.zeros((2, 2)), rng.normal(size=(2, 3)), np.ones(2), np.eye(2, 4))
    write_features(tmp_path / "t.f3dl", tiny)
    assert main(["register", str(tmp_path / "t.f3dl"), str(tmp_path / "t.f3dl")]) == EXIT_PIPELINE


def test_config_layers(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"extract": {"nms_radius": 4}, "seed": 9}))
    cfg = config.resolve(f, ["extract.nms_radius=5", "mapping.words=50"])
    assert cfg["extract"]["nms_radius"] == 5 and cfg["seed"] == 9 and cfg["mapping"]["words"] == 50
    assert cfg["extract"]["score_threshold"] == 0.7
    assert json.loads(config.dump(cfg)) == cfg
    with pytest.raises(config.ConfigError):
        config.parse_override("novalue")
    assert config.parse_override("a.b=hello") == {"a": {"b": "hello"}}


def test_defaults_are_reference_values():
    d = config.DEFAULTS
    assert (d["extract"]["score_threshold"], d["extract"]["nms_radius"]) == (0.7, 8)
    assert (d["bench"]["tau1"], d["bench"]["tau2"], d["bench"]["tau3"]) == (0.3, 0.2, 0.3)
    assert d["pairgen"]["overlap_threshold"] == 0.2 and d["mapping"]["words"] == 180
    assert d["mapping"]["hist_threshold"] == 0.8 and d["train"]["crop"] == [64, 180]
    assert d["network"]["patch_size"] == 8 and d["network"]["batch_size"] == 4
