"""Subcommand contracts: file outputs, JSON on stdout, and exit codes."""

import json

import numpy as np
import pytest

from certdw import load_calibration, load_dataset, load_model, load_trigger
from certdw.cli import EX_DATAERR, EX_NEGATIVE, EX_OK, EX_USAGE, main


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    doc = json.loads(captured.out) if captured.out.strip() else None
    return code, doc, captured.err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A small end-to-end CLI workspace: data, models, trigger, calibration."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    wm_data = root / "wm-data"
    args = [
        ["gen-data", "--out", str(data), "--classes", "3", "--per-class", "40",
         "--shape", "2,4,4", "--noise-std", "0.05", "--seed", "1"],
        ["watermark", "--data", str(data), "--trigger", "blended-noise",
         "--target", "1", "--rate", "0.1", "--l2", "0.8", "--seed", "2",
         "--out", str(wm_data)],
    ]
    for j in range(3):
        args.append(["train", "--data", str(data), "--arch", "mlp",
                     "--epochs", "60", "--seed", str(10 + j),
                     "--out", str(root / f"benign-{j}.json")])
    args.append(["train", "--data", str(wm_data), "--arch", "mlp",
                 "--epochs", "60", "--seed", "20",
                 "--out", str(root / "suspicious.json")])
    args.append(["calibrate", "--models", str(root / "benign-*.json"),
                 "--data", str(data), "--sigma", "1.5", "--samples", "256",
                 "--kappa", "0.2", "--seed", "3",
                 "--out", str(root / "calib.json")])
    for argv in args:
        assert main(argv) == EX_OK, argv
    return root


class TestGenData(object):
    def test_writes_both_splits(self, tmp_path, capsys):
        out = tmp_path / "ds"
        code, doc, _ = run_cli(capsys, "gen-data", "--out", str(out),
                               "--classes", "2", "--per-class", "10",
                               "--shape", "1,2,2", "--seed", "7")
        assert code == EX_OK
        assert doc["train_count"] == 16 and doc["test_count"] == 4
        assert load_dataset(out / "train").split == "train"
        assert load_dataset(out / "test").split == "test"

    def test_same_seed_same_bytes(self, tmp_path, capsys):
        for name in ("a", "b"):
            run_cli(capsys, "gen-data", "--out", str(tmp_path / name),
                    "--classes", "2", "--per-class", "10", "--shape", "1,2,2",
                    "--seed", "7")
        for rel in ("train/data.f32le", "train/meta.json", "test/labels.u32le"):
            assert (tmp_path / "a" / rel).read_bytes() == \
                (tmp_path / "b" / rel).read_bytes()


class TestWatermark:
    def test_outputs(self, workspace):
        wm = load_dataset(workspace / "wm-data" / "train")
        orig = load_dataset(workspace / "data" / "train")
        assert len(wm) == len(orig)
        trig = load_trigger(workspace / "wm-data" / "trigger.json")
        assert trig.target_label == 1
        assert abs(np.linalg.norm(trig.pattern) - 0.8) < 1e-9
        changed = (wm.labels != orig.labels) | (
            (wm.tensors != orig.tensors).any(axis=(1, 2, 3))
        )
        assert changed.sum() == int(0.1 * len(orig))


class TestTrainAndCalibrate:
    def test_model_loads(self, workspace):
        model = load_model(workspace / "suspicious.json")
        assert model.kind == "mlp"
        assert model.input_shape == (2, 4, 4)

    def test_calibration_file(self, workspace):
        calib = load_calibration(workspace / "calib.json")
        assert calib.size == 3
        assert calib.sample_count == 256
        assert (np.diff(calib.pp_values) >= 0).all()


class TestVerify:
    def test_watermarked_model_verifies(self, workspace, capsys):
        code, doc, _ = run_cli(
            capsys, "verify", "--model", str(workspace / "suspicious.json"),
            "--trigger", str(workspace / "wm-data" / "trigger.json"),
            "--calib", str(workspace / "calib.json"),
            "--data", str(workspace / "data"), "--sigma", "1.5",
            "--samples", "256", "--seed", "4",
        )
        assert set(doc) == {"W", "S", "p", "threshold", "verified"}
        assert code == (EX_OK if doc["verified"] else EX_NEGATIVE)
        assert (doc["p"] >= 0.95) == doc["verified"]

    def test_low_w_not_verified_with_floor_p(self, workspace, tmp_path, capsys):
        # calibration values all above any possible W: p = 1 / (J - m + 1)
        calib_path = tmp_path / "high.json"
        calib_path.write_text(json.dumps({
            "pp_values": [0.96, 0.97, 0.98, 0.99, 1.0], "kappa": 0.2, "m": 1,
            "noise_spec": None, "M": None, "model_ids": [], "master_seed": None,
        }))
        code, doc, _ = run_cli(
            capsys, "verify", "--model", str(workspace / "suspicious.json"),
            "--trigger", str(workspace / "wm-data" / "trigger.json"),
            "--calib", str(calib_path),
            "--data", str(workspace / "data"), "--sigma", "1.5",
            "--samples", "128", "--seed", "4",
        )
        assert code == EX_NEGATIVE
        assert doc["p"] == pytest.approx(1 / 5)
        assert not doc["verified"]

    def test_permissive_calibration_verifies(self, workspace, tmp_path, capsys):
        calib_path = tmp_path / "low.json"
        calib_path.write_text(json.dumps({
            "pp_values": [0.0, 0.0, 0.0, 0.0, 0.0], "kappa": 0.2, "m": 1,
            "noise_spec": None, "M": None, "model_ids": [], "master_seed": None,
        }))
        code, doc, _ = run_cli(
            capsys, "verify", "--model", str(workspace / "suspicious.json"),
            "--trigger", str(workspace / "wm-data" / "trigger.json"),
            "--calib", str(calib_path),
            "--data", str(workspace / "data"), "--sigma", "1.5",
            "--samples", "128", "--seed", "4",
        )
        assert code == EX_OK and doc["verified"] and doc["p"] == 1.0


class TestCertify:
    def test_gaussian_record_and_region(self, workspace, tmp_path, capsys):
        region = tmp_path / "region.csv"
        code, doc, _ = run_cli(
            capsys, "certify", "--model", str(workspace / "suspicious.json"),
            "--trigger", str(workspace / "wm-data" / "trigger.json"),
            "--calib", str(workspace / "calib.json"),
            "--data", str(workspace / "data"), "--dist", "gaussian",
            "--sigma", "1.5", "--samples", "128", "--seed", "5",
            "--region-out", str(region), "--grid-n", "11",
        )
        assert code in (EX_OK, EX_NEGATIVE)
        for key in ("W", "S", "R", "p", "threshold", "certified",
                    "tau_certified", "beta2_star"):
            assert key in doc
        assert (doc["certified"]) == (code == EX_OK)
        assert region.exists()
        assert region.with_suffix(".json").exists()

    def test_uniform_dist(self, workspace, capsys):
        code, doc, _ = run_cli(
            capsys, "certify", "--model", str(workspace / "suspicious.json"),
            "--trigger", str(workspace / "wm-data" / "trigger.json"),
            "--calib", str(workspace / "calib.json"),
            "--data", str(workspace / "data"), "--dist", "uniform",
            "--bounds=-2,2", "--samples", "128", "--seed", "5",
        )
        assert code in (EX_OK, EX_NEGATIVE)
        assert "beta2_star" in doc

    def test_uniform_rejects_region_out(self, workspace, capsys):
        code, _, err = run_cli(
            capsys, "certify", "--model", str(workspace / "suspicious.json"),
            "--trigger", str(workspace / "wm-data" / "trigger.json"),
            "--calib", str(workspace / "calib.json"),
            "--data", str(workspace / "data"), "--dist", "uniform",
            "--bounds=-2,2", "--region-out", "/tmp/x.csv",
        )
        assert code == EX_USAGE and "region-out" in err


class TestSweep:
    def test_grid_csv(self, workspace, tmp_path, capsys):
        out = tmp_path / "grid.csv"
        code, doc, _ = run_cli(
            capsys, "sweep", "--model", str(workspace / "suspicious.json"),
            "--trigger", str(workspace / "wm-data" / "trigger.json"),
            "--data", str(workspace / "data"), "--eps-n", "0,0.1",
            "--eps-a", "0,0.1", "--sigma", "1.5", "--seed", "6",
            "--out", str(out),
        )
        assert code == EX_OK
        lines = out.read_text().splitlines()
        assert lines[0] == "eps_n,eps_a,wsr"
        assert len(lines) == 5
        assert len(doc["wsr"]) == 2


class TestRun:
    def test_run_from_config(self, tmp_path, capsys):
        config = {"master_seed": 5, "num_benign": 3, "num_watermarked": 1,
                  "num_independent": 1, "per_class": 20, "epochs": 10,
                  "samples": 64, "noise_levels": [1.5], "region_grid_n": 11}
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(config))
        code, doc, err = run_cli(capsys, "run", "--config", str(cfg_path),
                                 "--out", str(tmp_path / "out"))
        assert code == EX_OK
        assert (tmp_path / "out" / "report.json").exists()
        assert "resolved config" in err
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report["config"]["master_seed"] == 5

    def test_seed_flag_overrides_config(self, tmp_path, capsys):
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps({"master_seed": 5, "num_benign": 2,
                                        "num_watermarked": 0,
                                        "num_independent": 1, "per_class": 20,
                                        "epochs": 30, "samples": 32,
                                        "region_grid_n": 5}))
        code, _, _ = run_cli(capsys, "run", "--config", str(cfg_path),
                             "--seed", "9", "--out", str(tmp_path / "out"))
        assert code == EX_OK
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report["config"]["master_seed"] == 9


class TestErrorPaths:
    def test_unknown_flag_is_usage_error(self, capsys):
        assert run_cli(capsys, "verify", "--nope")[0] == EX_USAGE

    def test_unknown_command_is_usage_error(self, capsys):
        assert run_cli(capsys, "frobnicate")[0] == EX_USAGE

    def test_malformed_model_is_data_error(self, workspace, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{broken")
        code, _, err = run_cli(
            capsys, "verify", "--model", str(bad),
            "--trigger", str(workspace / "wm-data" / "trigger.json"),
            "--calib", str(workspace / "calib.json"),
            "--data", str(workspace / "data"), "--sigma", "1.5",
        )
        assert code == EX_DATAERR and "error" in err

    def test_missing_file_is_data_error(self, workspace, capsys):
        code, _, _ = run_cli(
            capsys, "verify", "--model", "/nonexistent/model.json",
            "--trigger", str(workspace / "wm-data" / "trigger.json"),
            "--calib", str(workspace / "calib.json"),
            "--data", str(workspace / "data"), "--sigma", "1.5",
        )
        assert code == EX_DATAERR
