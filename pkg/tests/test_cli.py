import json
import shutil

import pytest

from layercurate.cli import EXIT_GLOBAL, EXIT_OK, EXIT_PARTIAL, main
from layercurate.config import load_manifest
from layercurate.formats import read_latb


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--clips", "2", "--seed", "4", "--out", str(root / "data")]) == EXIT_OK
    return root / "data" / "manifest.json"


def copy_dataset(manifest, dest):
    shutil.copytree(manifest.parent, dest)
    return dest / "manifest.json"


def test_run_and_stats(small, tmp_path, capsys):
    out = tmp_path / "b"
    assert main(["run", str(small), "--out", str(out), "--jobs", "2"]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["ok"] == 2 and summary["failed"] == 0
    assert main(["stats", str(out)]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["bundles"] == 2


def test_stage_verbs(small, tmp_path, capsys):
    out = tmp_path / "stages"
    for verb in ("validate", "curate", "merge", "assign"):
        assert main([verb, str(small), "--out", str(out)]) == EXIT_OK, verb
    clip = load_manifest(small)[0].clip_id
    layers = json.loads((out / clip / "layers.json").read_text())
    assert len(layers["layers"]) >= 2
    assert read_latb(out / clip / "stack.latb")["layer_masks"].shape == (4, 16, 1, 320, 512)


def test_encode_controls_writes_every_modality(small, tmp_path):
    out = tmp_path / "enc"
    assert main(["encode-controls", str(small), "--out", str(out)]) == EXIT_OK
    clip = load_manifest(small)[0].clip_id
    b = read_latb(out / clip / "controls.latb")
    assert {"score_map/0", "trajectory_map/0", "sketch/0"} <= set(b.arrays)


def test_partial_and_global_failure_codes(small, tmp_path):
    manifest = copy_dataset(small, tmp_path / "d")
    clips = load_manifest(manifest)
    clips[0].flow.write_bytes(b"junk")
    assert main(["run", str(manifest), "--out", str(tmp_path / "o1")]) == EXIT_PARTIAL
    report = json.loads((tmp_path / "o1" / "report.json").read_text())
    failed = [c for c in report["clips"] if c["status"] == "failed"]
    assert [c["clip_id"] for c in failed] == [clips[0].clip_id]
    clips[1].flow.write_bytes(b"junk")
    assert main(["run", str(manifest), "--out", str(tmp_path / "o2")]) == EXIT_GLOBAL


def test_bad_manifest_is_global_failure(tmp_path):
    p = tmp_path / "m.json"
    p.write_text("{}")
    assert main(["run", str(p)]) == EXIT_GLOBAL
    assert main(["run", str(tmp_path / "missing.json")]) == EXIT_GLOBAL


def test_sample_controls(capsys):
    args = ["sample-controls", "--layers", "3", "--capacity", "4", "--clip-id", "c", "--seed", "11"]
    assert main(args) == EXIT_OK
    first = capsys.readouterr().out
    assert main(args) == EXIT_OK
    assert capsys.readouterr().out == first
    doc = json.loads(first)
    assert doc["seed"] == 11 and len(doc["controls"]) == 4 and doc["controls"][3] == "dropped"


def test_config_file_is_applied(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"sampler": {"p_drop": 1.0}}))
    assert main(["--config", str(cfg), "sample-controls", "--layers", "2"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["controls"] == ["dropped", "dropped"]
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["sample-controls", "--layers", "2", "--config", str(cfg)]) == EXIT_GLOBAL
