"""
Tests for the model file format, experiment artifacts and configuration loading.
"""

import json

import numpy as np
import pytest

from artifacts import ExperimentReport, atomic_write_text, csv_text, read_csv, sha256_file, write_csv
from config import DEFAULT_CONFIG, load_config, section
from errors import InvalidParameterError, MissingPrerequisiteError, ModelFormatError
from model_io import _HEADER, MAGIC, decode_model, encode_model, load_model, model_from_dict, save_model
from rbm_core import QuantizedRbm, RbmModel, patch_mask, quantize


@pytest.fixture
def patched_model():
    """Random 16+4 model with a 3x3 patch mask on 4x4 images."""
    return RbmModel.random(16, 4, np.random.default_rng(3), mask=patch_mask(4, 3))


def assert_same_model(a, b):
    assert type(a) is type(b)
    base_a = a.base if isinstance(a, QuantizedRbm) else a
    base_b = b.base if isinstance(b, QuantizedRbm) else b
    assert np.array_equal(base_a.W, base_b.W)
    assert np.array_equal(base_a.b_v, base_b.b_v)
    assert np.array_equal(base_a.b_h, base_b.b_h)
    assert np.array_equal(base_a.mask, base_b.mask)
    if isinstance(a, QuantizedRbm):
        assert a.s == b.s
        assert np.array_equal(a.Wq, b.Wq)
        assert np.array_equal(a.bvq, b.bvq)
        assert np.array_equal(a.bhq, b.bhq)


class TestBinaryFormat:
    """Test the binary model layout."""

    def test_header(self, patched_model):
        """Test magic, version, sizes and the unquantized marker."""
        magic, version, n_v, n_h, s = _HEADER.unpack_from(encode_model(patched_model), 0)
        assert (magic, version, n_v, n_h, s) == (MAGIC, 1, 16, 4, 0)

    def test_quantized_model_keeps_integers(self, patched_model):
        """Test that a quantized model is restored with its scale and integer parameters."""
        q = quantize(patched_model, 50)
        restored = decode_model(encode_model(q))
        assert_same_model(q, restored)
        assert restored.Wq.dtype == np.int64

    def test_payload_length(self, patched_model):
        """Test the byte count of the real and quantized layouts."""
        n_w = 16 * 4
        real = _HEADER.size + 8 * (n_w + 16 + 4) + (n_w + 7) // 8
        assert len(encode_model(patched_model)) == real
        assert len(encode_model(quantize(patched_model, 10))) == real + 4 * (n_w + 16 + 4)

    def test_truncated(self, patched_model):
        """Test that a truncated file is refused."""
        blob = encode_model(patched_model)
        with pytest.raises(ModelFormatError, match="payload length"):
            decode_model(blob[:-3])
        with pytest.raises(ModelFormatError, match="header"):
            decode_model(blob[:5])

    def test_bad_magic(self, patched_model):
        """Test that a foreign file is refused."""
        with pytest.raises(ModelFormatError, match="magic"):
            decode_model(b"XXXX" + encode_model(patched_model)[4:])

    def test_unsupported_version(self):
        """Test that a newer version number is refused."""
        with pytest.raises(ModelFormatError, match="version"):
            decode_model(_HEADER.pack(MAGIC, 2, 1, 1, 0))


class TestModelFiles:
    """Test saving and loading model files."""

    def test_save_writes_json_twin(self, tmp_path, patched_model):
        """Test that the JSON export describes the same model as the binary file."""
        q = quantize(patched_model, 20)
        path = save_model(q, tmp_path / "model.nrbm")
        doc = json.loads(path.with_suffix(".json").read_text())
        assert doc["format"] == "neuro_rbm.model" and doc["s"] == 20
        assert_same_model(load_model(path), model_from_dict(doc))

    def test_save_without_json(self, tmp_path, tiny_model):
        """Test that the JSON export can be skipped."""
        path = save_model(tiny_model, tmp_path / "tiny.nrbm", export_json=False)
        assert not path.with_suffix(".json").exists()
        assert_same_model(load_model(path), tiny_model)

    def test_missing_file(self, tmp_path):
        """Test that a missing model is a missing prerequisite."""
        with pytest.raises(MissingPrerequisiteError, match="train"):
            load_model(tmp_path / "absent.nrbm")

    def test_document_missing_field(self, tiny_model):
        """Test that an incomplete JSON document is refused."""
        with pytest.raises(ModelFormatError, match="b_h"):
            model_from_dict({"W": tiny_model.W.tolist(), "b_v": [0, 0, 0], "mask": tiny_model.mask.tolist()})


class TestArtifacts:
    """Test atomic writes, CSV series and experiment directories."""

    def test_atomic_write_leaves_no_temp_files(self, tmp_path):
        """Test that only the destination file remains."""
        atomic_write_text(tmp_path / "sub" / "out.txt", "hello")
        assert [p.name for p in (tmp_path / "sub").iterdir()] == ["out.txt"]
        assert (tmp_path / "sub" / "out.txt").read_text() == "hello"

    def test_csv_cells(self):
        """Test that floats keep full precision and numpy scalars become plain values."""
        text = csv_text(["a", "b", "c"], [[0.1, np.int64(3), np.float64(1 / 3)]])
        assert text == "a,b,c\n0.1,3,0.3333333333333333\n"

    def test_csv_round_trip(self, tmp_path):
        """Test that a written CSV is read back as dict rows."""
        write_csv(tmp_path / "x.csv", ["V", "p_spike"], [[-5, 0.25], [0, 0.5]])
        assert read_csv(tmp_path / "x.csv") == [{"V": "-5", "p_spike": "0.25"}, {"V": "0", "p_spike": "0.5"}]

    def test_report_layout_and_hashes(self, tmp_path):
        """Test config, series files and manifest hashes of an experiment directory."""
        report = ExperimentReport("fig13", {"seed": 4, "T_A": np.int64(4), "weights": np.arange(3)},
                                  model_sha256="abc")
        report.new_series("fig13", ["strategy", "neurons"]).add("none", 120)
        report.extra_files["notes.bin"] = b"\x00\x01"
        exp_dir = report.write(tmp_path)

        manifest = json.loads((exp_dir / "manifest.json").read_text())
        assert manifest["experiment_id"] == "fig13" and manifest["seed"] == 4
        assert manifest["model_sha256"] == "abc"
        assert set(manifest["files"]) == {"config.json", "fig13.csv", "notes.bin"}
        for name, digest in manifest["files"].items():
            assert sha256_file(exp_dir / name) == digest
        assert json.loads((exp_dir / "config.json").read_text())["weights"] == [0, 1, 2]

    def test_identical_inputs_identical_files(self, tmp_path):
        """Test that writing the same report twice gives byte-identical files."""
        def build():
            report = ExperimentReport("table1", {"seed": 0})
            report.new_series("table1", ["config", "mse"]).add("G4", 0.0123)
            return report

        a = build().write(tmp_path / "a")
        b = build().write(tmp_path / "b")
        for name in ("config.json", "table1.csv", "manifest.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()


class TestConfig:
    """Test configuration loading and merging."""

    def test_defaults(self):
        """Test that None gives a copy of the built-in defaults."""
        config = load_config(None)
        assert config == DEFAULT_CONFIG
        config["sampler"]["s"] = 1
        assert DEFAULT_CONFIG["sampler"]["s"] == 50

    def test_missing_file_uses_defaults(self, tmp_path):
        """Test that a missing config file falls back to the defaults."""
        assert load_config(str(tmp_path / "config.json")) == DEFAULT_CONFIG

    def test_partial_override(self, tmp_path):
        """Test that a file overrides single keys and keeps the rest of each section."""
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"sampler": {"s": 10}, "compiler": {"T_A": 8}}))
        config = load_config(str(path))
        assert config["sampler"]["s"] == 10
        assert config["sampler"]["V_th"] == 79
        assert config["compiler"]["T_A"] == 8 and config["compiler"]["strategy"] == "s1_2"

    def test_invalid_json(self, tmp_path):
        """Test that malformed JSON is an invalid parameter."""
        path = tmp_path / "config.json"
        path.write_text("{not json")
        with pytest.raises(InvalidParameterError, match="Invalid JSON"):
            load_config(str(path))

    def test_not_an_object(self, tmp_path):
        """Test that a JSON list is refused."""
        path = tmp_path / "config.json"
        path.write_text("[1, 2]")
        with pytest.raises(InvalidParameterError):
            load_config(str(path))

    def test_section(self):
        """Test section lookup with defaults and unknown names."""
        assert section({}, "ais") == DEFAULT_CONFIG["ais"]
        with pytest.raises(InvalidParameterError):
            section({}, "qdrant")
