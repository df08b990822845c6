"""
Tests for the neuro_rbm command-line application.

This module runs ``main`` end to end on small artifacts in temp directories:
- exit codes (usage, validation, missing prerequisite)
- the map -> validate -> simulate workflow
- data commands (occlude, reconstruct, train, ais)
- sampler commands and figure wiring
"""

import json
from unittest.mock import patch

import numpy as np
import pytest

import neuro_rbm_app
from errors import EXIT_MISSING, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION
from mnist_data import parse_idx, save_idx
from model_io import load_model, save_model
from rbm_core import RbmModel, patch_mask


@pytest.fixture
def base_args(tmp_path):
    """Global flags pointing at a missing config (defaults) and a temp output directory."""
    return ["--config", str(tmp_path / "no-config.json"), "--out-dir", str(tmp_path / "runs")]


@pytest.fixture
def image_file(tmp_path, synthetic_dataset):
    """The synthetic bar images as an IDX byte file."""
    path = tmp_path / "images-idx3-ubyte"
    save_idx(path, synthetic_dataset.images.astype(np.uint8) * 255)
    return path


@pytest.fixture
def model_file(tmp_path, small_quantized_model):
    """The 4+3 quantized model saved in the binary format."""
    return save_model(small_quantized_model, tmp_path / "small.nrbm", export_json=False)


@pytest.fixture
def bar_model_file(tmp_path):
    """A patched 36+9 model for the 6x6 images."""
    m = RbmModel.random(36, 9, np.random.default_rng(5), mask=patch_mask(6, 4))
    return save_model(m, tmp_path / "bars.nrbm", export_json=False)


class TestExitCodes:
    """Test the exit-code convention."""

    def test_no_command(self, base_args):
        """Test that running without a command prints help and exits with 1."""
        assert neuro_rbm_app.main(base_args) == EXIT_USAGE

    def test_bad_arguments(self, base_args):
        """Test that argument errors exit with the usage code."""
        with pytest.raises(SystemExit) as info:
            neuro_rbm_app.main(base_args + ["figures", "fig99"])
        assert info.value.code == EXIT_USAGE

    def test_missing_model(self, base_args, tmp_path):
        """Test that a missing model file exits with 3."""
        code = neuro_rbm_app.main(base_args + ["map", "--model", str(tmp_path / "absent.nrbm"),
                                               "--placement", str(tmp_path / "out")])
        assert code == EXIT_MISSING

    def test_invalid_parameter(self, base_args, bar_model_file, image_file):
        """Test that an invalid occlusion fraction exits with 1."""
        code = neuro_rbm_app.main(base_args + ["reconstruct", "--model", str(bar_model_file),
                                               "--data", str(image_file), "--fraction", "1.5"])
        assert code == EXIT_USAGE

    def test_invalid_config_file(self, tmp_path):
        """Test that a config file that is not JSON exits with 1."""
        bad = tmp_path / "config.json"
        bad.write_text("{oops")
        assert neuro_rbm_app.main(["--config", str(bad), "figures", "table1"]) == EXIT_USAGE


class TestMapValidateSimulate:
    """Test the compile workflow through the CLI."""

    def test_workflow(self, base_args, model_file, tmp_path):
        """Test map, validate (with the conservation check) and simulate with a trace."""
        placement = tmp_path / "mapped"
        assert neuro_rbm_app.main(base_args + ["map", "--model", str(model_file), "--placement", str(placement),
                                               "--T-A", "8"]) == EXIT_OK
        assert (placement / "network.json").exists()
        assert neuro_rbm_app.main(base_args + ["validate", str(placement), "--model", str(model_file)]) == EXIT_OK

        code = neuro_rbm_app.main(base_args + ["--seed", "3", "simulate", "--placement", str(placement),
                                               "--periods", "2", "--v0", "1010", "--trace"])
        assert code == EXIT_OK
        run_dir = tmp_path / "runs" / "simulate"
        assert (run_dir / "visible.csv").exists() and (run_dir / "trace.csv").exists()

    def test_validation_failure(self, base_args, model_file, tmp_path, capsys):
        """Test that a broken network exits with 2 and lists its violations."""
        placement = tmp_path / "mapped"
        neuro_rbm_app.main(base_args + ["map", "--model", str(model_file), "--placement", str(placement),
                                        "--T-A", "8"])
        doc = json.loads((placement / "network.json").read_text())
        doc["cores"][0]["neurons"][0]["leak"] = 4000
        (placement / "network.json").write_text(json.dumps(doc))
        capsys.readouterr()

        assert neuro_rbm_app.main(base_args + ["validate", str(placement / "network.json")]) == EXIT_VALIDATION
        assert "leak 4000" in capsys.readouterr().err

    def test_simulate_bad_initial_state(self, base_args, model_file, tmp_path):
        """Test that a bit string of the wrong length is refused."""
        placement = tmp_path / "mapped"
        neuro_rbm_app.main(base_args + ["map", "--model", str(model_file), "--placement", str(placement),
                                        "--T-A", "8"])
        code = neuro_rbm_app.main(base_args + ["simulate", "--placement", str(placement), "--v0", "101"])
        assert code == EXIT_USAGE


class TestDataCommands:
    """Test the dataset-driven commands."""

    def test_occlude(self, base_args, image_file, tmp_path):
        """Test that occluded images and masks are written as IDX files."""
        output = tmp_path / "occluded"
        code = neuro_rbm_app.main(base_args + ["occlude", "--data", str(image_file), "--output", str(output),
                                               "--fraction", "0.5", "--n-images", "4"])
        assert code == EXIT_OK
        images = parse_idx(output.read_bytes())
        masks = parse_idx((tmp_path / "occluded.mask").read_bytes())
        assert images.shape == masks.shape == (4, 6, 6)
        assert not images.reshape(4, -1)[:, 18:].any()
        assert masks.reshape(4, -1)[:, :18].all()

    def test_reconstruct(self, base_args, bar_model_file, image_file, tmp_path):
        """Test an ideal-backend reconstruction run."""
        code = neuro_rbm_app.main(base_args + ["reconstruct", "--model", str(bar_model_file),
                                               "--data", str(image_file), "--n-samples", "3", "--n-images", "2"])
        assert code == EXIT_OK
        assert (tmp_path / "runs" / "reconstruct-ideal" / "mean_hamming.csv").exists()

    def test_train_then_ais(self, base_args, image_file, tmp_path):
        """Test training a quantized model and estimating its partition function."""
        model = tmp_path / "trained.nrbm"
        code = neuro_rbm_app.main(base_args + ["train", "--data", str(image_file), "--model", str(model),
                                               "--patch", "3", "--epochs", "2", "--batch-size", "10",
                                               "--chains", "5", "--quantize", "50"])
        assert code == EXIT_OK
        assert load_model(model).s == 50
        assert model.with_suffix(".json").exists()

        code = neuro_rbm_app.main(base_args + ["ais", "--model", str(model), "--n-intermediate", "10",
                                               "--n-runs", "4"])
        assert code == EXIT_OK
        assert (tmp_path / "runs" / "ais" / "ais.csv").exists()


class TestSamplerCommands:
    """Test the sampler analysis and fitting commands."""

    def test_analyze_dtmc(self, base_args, tmp_path):
        """Test the curve and summary outputs for a small configuration."""
        code = neuro_rbm_app.main(base_args + ["analyze-dtmc", "--s", "10", "--T-S", "3", "--V-th", "5",
                                               "--M", "4", "--L", "7"])
        assert code == EXIT_OK
        out = tmp_path / "runs" / "analyze-dtmc"
        assert (out / "curve.csv").exists() and (out / "summary.csv").exists()

    def test_fit_sampler(self, base_args, tmp_path):
        """Test a small grid search."""
        code = neuro_rbm_app.main(base_args + ["fit-sampler", "--s", "10", "--T-S", "2",
                                               "--v-th-range", "0", "10", "--m-range", "6", "6",
                                               "--l-range", "4", "8"])
        assert code == EXIT_OK
        run_dir = tmp_path / "runs" / "fit-sampler"
        assert (run_dir / "best.csv").exists()
        assert (run_dir / "report.txt").read_text().startswith("Best sampler:")

        lines = (run_dir / "curve.csv").read_text().splitlines()
        assert lines[0] == "V_init,P_spike"
        rows = [line.split(",") for line in lines[1:]]
        assert all(len(row) == 2 for row in rows)
        v_sat = -int(rows[0][0])
        assert len(rows) == 2 * v_sat + 1 and int(rows[-1][0]) == v_sat
        probs = [float(p) for _, p in rows]
        assert all(0.0 <= p <= 1.0 for p in probs)

    def test_figures_wiring(self, base_args):
        """Test that the figures command hands seed, threads and paths to the builder."""
        with patch("neuro_rbm_app.cmd_figures", return_value=[]) as builder:
            code = neuro_rbm_app.main(base_args + ["--seed", "7", "--threads", "2", "figures", "fig4", "table1"])
        assert code == EXIT_OK
        which, config, seed, threads, model, data, test = builder.call_args.args
        assert which == ["fig4", "table1"]
        assert (seed, threads, model, data, test) == (7, 2, None, None, None)
        assert "sampler" in config

    def test_figures_written(self, base_args, tmp_path):
        """Test that the table1 data lands in its experiment directory."""
        assert neuro_rbm_app.main(base_args + ["figures", "table1"]) == EXIT_OK
        assert (tmp_path / "runs" / "table1" / "table1.csv").exists()
        assert (tmp_path / "runs" / "table1" / "manifest.json").exists()
