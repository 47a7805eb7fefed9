"""Command-line pipeline smoke tests and error diagnostics."""

import json

import numpy as np
import pytest

from arborseg.cli import main
from arborseg.v3d import read_v3d


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    rc = main(["gen-data", "--out", str(out), "--count", "3",
               "--dims", "64", "64", "16", "--seed", "5",
               "--overlap-volumes", "0.34"])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def soma_run(tmp_path_factory, data_dir):
    out = tmp_path_factory.mktemp("soma_ckpt")
    rc = main(["train", "--data", str(data_dir), "--out", str(out),
               "--stage", "soma", "--epochs", "1", "--seed", "0", "--quiet"])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def branch_run(tmp_path_factory, data_dir, soma_run):
    out = tmp_path_factory.mktemp("branch_ckpt")
    rc = main(["train", "--data", str(data_dir), "--out", str(out),
               "--stage", "branch", "--epochs", "1", "--seed", "0",
               "--from-checkpoint", str(soma_run / "last.tr3d"), "--quiet"])
    assert rc == 0
    return out


def test_gen_data_writes_samples_and_config(data_dir):
    subdirs = sorted(p.name for p in data_dir.iterdir() if p.is_dir())
    assert len(subdirs) == 3
    for sub in subdirs:
        assert (data_dir / sub / "meta.json").is_file()
        assert (data_dir / sub / "image.v3d").is_file()
    synth = json.loads((data_dir / "synth_config.json").read_text())
    assert synth["dims"] == [64, 64, 16]
    assert synth["seed"] == 5


def test_gen_data_is_reproducible(tmp_path, data_dir):
    rc = main(["gen-data", "--out", str(tmp_path), "--count", "3",
               "--dims", "64", "64", "16", "--seed", "5",
               "--overlap-volumes", "0.34"])
    assert rc == 0
    for sub in sorted(p.name for p in data_dir.iterdir() if p.is_dir()):
        a = read_v3d(data_dir / sub / "image.v3d")
        b = read_v3d(tmp_path / sub / "image.v3d")
        np.testing.assert_array_equal(a, b)


def test_soma_training_writes_checkpoints(soma_run):
    assert (soma_run / "last.tr3d").is_file()
    assert (soma_run / "best.tr3d").is_file()


def test_branch_training_transfers_weights(branch_run, capsys):
    assert (branch_run / "last.tr3d").is_file()


def test_soma_inference_writes_probabilities(tmp_path, data_dir, soma_run):
    sample = sorted(p for p in data_dir.iterdir() if p.is_dir())[0]
    rc = main(["infer", "--checkpoint", str(soma_run / "last.tr3d"),
               "--input", str(sample), "--out", str(tmp_path)])
    assert rc == 0
    prob = read_v3d(tmp_path / "soma_prob.v3d")
    assert prob.shape == (16, 64, 64)
    assert prob.dtype == np.float32
    assert 0.0 < prob.min() and prob.max() < 1.0
    somas = json.loads((tmp_path / "somas.json").read_text())["somas"]
    assert isinstance(somas, list)


def test_branch_inference_segments_prompted_cells(tmp_path, data_dir, branch_run):
    sample = sorted(p for p in data_dir.iterdir() if p.is_dir())[0]
    somas_file = tmp_path / "somas.json"
    somas_file.write_text(json.dumps({"somas": [[20, 20, 8], [40, 40, 8]]}))
    rc = main(["infer", "--checkpoint", str(branch_run / "last.tr3d"),
               "--input", str(sample), "--out", str(tmp_path),
               "--point", "32,32,8", "--somas", str(somas_file),
               "--threshold", "0.12"])
    assert rc == 0
    for i in range(3):                    # one --point plus two from the file
        mask = read_v3d(tmp_path / f"cell_{i:03d}.v3d")
        assert mask.shape == (16, 64, 64)
        assert mask.dtype == np.uint8


def test_eval_writes_report(tmp_path, data_dir, soma_run, capsys):
    report_path = tmp_path / "report.json"
    rc = main(["eval", "--checkpoint", str(soma_run / "last.tr3d"),
               "--data", str(data_dir), "--out", str(report_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "soma eval over 3 volumes" in out
    report = json.loads(report_path.read_text())
    assert len(report["per_sample"]) == 3
    assert "dice" in report["aggregate"]
    assert {"mean", "std"} == set(report["aggregate"]["dice"])


def test_params_reports_frozen_tiny_total(capsys):
    assert main(["params", "--variant", "tiny"]) == 0
    out = capsys.readouterr().out
    assert "2,005,201" in out
    for name in ("encoder", "skips", "decoder", "prompt", "total"):
        assert name in out


def test_params_honors_backend_flag(capsys):
    assert main(["--backend", "numpy", "params", "--variant", "tiny"]) == 0
    assert "2,005,201" in capsys.readouterr().out
    main(["--backend", "numba", "params"])  # restore the default backend


def test_config_error_is_one_line(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"train": {"bogus": 1}}))
    rc = main(["train", "--data", str(tmp_path), "--out", str(tmp_path),
               "--stage", "soma", "--config", str(cfg)])
    assert rc == 1
    err = capsys.readouterr().err
    assert err.startswith("error: train.bogus")
    assert err.count("\n") == 1


def test_missing_dataset_directory_fails_cleanly(tmp_path, capsys):
    rc = main(["train", "--data", str(tmp_path / "nope"),
               "--out", str(tmp_path), "--stage", "soma"])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_branch_inference_requires_prompts(tmp_path, data_dir, branch_run,
                                           capsys):
    sample = sorted(p for p in data_dir.iterdir() if p.is_dir())[0]
    rc = main(["infer", "--checkpoint", str(branch_run / "last.tr3d"),
               "--input", str(sample), "--out", str(tmp_path)])
    assert rc == 1
    assert "prompt" in capsys.readouterr().err


def test_malformed_point_fails_cleanly(tmp_path, data_dir, branch_run, capsys):
    sample = sorted(p for p in data_dir.iterdir() if p.is_dir())[0]
    rc = main(["infer", "--checkpoint", str(branch_run / "last.tr3d"),
               "--input", str(sample), "--out", str(tmp_path),
               "--point", "1,2"])
    assert rc == 1
    assert "x,y,z" in capsys.readouterr().err
