import json

import numpy as np
import pytest

from pdemix.datagen import (BlobConfig, Dataset, GenConfig, SampleRecord,
                            SampleTruth, generate_dataset)
from pdemix.dataio import (FORMAT_TAG, ManifestError, ShapeMismatchError,
                           TruncatedArrayError, canonical_json,
                           config_from_dict, config_to_dict, load_sample,
                           read_dataset, write_dataset)
from pdemix.pde import ReactionKind

CFG = GenConfig(grid=(8, 8), n_train=3, n_val=2, n_test=3,
                obs_times=(0.0, 4.0, 8.0), blob=BlobConfig(center_margin=2.0),
                seed=5)


@pytest.fixture()
def ds() -> Dataset:
    return generate_dataset(CFG)


class TestCanonicalJson:
    def test_sorted_keys_and_stable(self):
        a = canonical_json({"b": 1, "a": [2, 3]})
        b = canonical_json({"a": [2, 3], "b": 1})
        assert a == b
        assert a.index('"a"') < a.index('"b"')
        assert a.endswith("\n")

    def test_float_formatting_is_round_trippable(self):
        s = canonical_json({"x": 0.1 + 0.2, "y": 1e-9})
        d = json.loads(s)
        assert d["x"] == pytest.approx(0.3, rel=1e-8)
        assert d["y"] == pytest.approx(1e-9, rel=1e-8)


class TestConfigRoundTrip:
    def test_round_trip(self):
        back = config_from_dict(config_to_dict(CFG))
        assert back == CFG

    def test_unknown_key_rejected(self):
        d = config_to_dict(CFG)
        d["n_extra"] = 3
        with pytest.raises(ManifestError):
            config_from_dict(d)

    def test_missing_key_rejected(self):
        d = config_to_dict(CFG)
        del d["seed"]
        with pytest.raises(ManifestError):
            config_from_dict(d)

    def test_component_names_round_trip(self):
        cfg = GenConfig(components=(ReactionKind.NONE, ReactionKind.LOGISTIC2))
        assert config_from_dict(config_to_dict(cfg)).components == cfg.components


class TestRoundTrip:
    def test_frames_bit_exact(self, ds, tmp_path):
        write_dataset(ds, tmp_path)
        back = read_dataset(tmp_path)
        assert [s.id for s in back.samples] == [s.id for s in ds.samples]
        for a, b in zip(ds.samples, back.samples):
            assert a.frames.tobytes() == b.frames.tobytes()
            np.testing.assert_array_equal(a.times, b.times)
            assert b.truth is not None
            assert b.truth.component_id == a.truth.component_id
            assert b.truth.z_x == pytest.approx(a.truth.z_x, rel=1e-8)
        assert back.splits == ds.splits
        assert back.normalization[0] == pytest.approx(ds.normalization[0], rel=1e-8)

    def test_write_read_write_byte_identical(self, ds, tmp_path):
        first = tmp_path / "a"
        second = tmp_path / "b"
        write_dataset(ds, first)
        write_dataset(read_dataset(first), second)
        assert (first / "manifest.json").read_bytes() == \
            (second / "manifest.json").read_bytes()
        for s in ds.samples:
            assert (first / f"{s.id}.f32").read_bytes() == \
                (second / f"{s.id}.f32").read_bytes()

    def test_empty_dataset(self, tmp_path):
        empty = Dataset(samples=[], splits={"train": [], "val": [], "test": []},
                        normalization=(0.0, 1.0), provenance=CFG)
        write_dataset(empty, tmp_path)
        back = read_dataset(tmp_path)
        assert back.samples == []

    def test_missing_truth_preserved(self, ds, tmp_path):
        ds.samples[0].truth = None
        write_dataset(ds, tmp_path)
        back = read_dataset(tmp_path)
        assert back.samples[0].truth is None
        assert back.samples[1].truth is not None


class TestErrors:
    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ManifestError):
            read_dataset(tmp_path)

    def test_invalid_json(self, tmp_path):
        (tmp_path / "manifest.json").write_text("{not json", encoding="utf-8")
        with pytest.raises(ManifestError):
            read_dataset(tmp_path)

    def test_wrong_format_tag(self, tmp_path):
        (tmp_path / "manifest.json").write_text(
            json.dumps({"format": "other", "config": {}, "normalization": [],
                        "samples": []}), encoding="utf-8")
        with pytest.raises(ManifestError):
            read_dataset(tmp_path)

    def test_truncated_array(self, ds, tmp_path):
        write_dataset(ds, tmp_path)
        f = tmp_path / f"{ds.samples[0].id}.f32"
        f.write_bytes(f.read_bytes()[:-8])
        with pytest.raises(TruncatedArrayError):
            read_dataset(tmp_path)

    def test_missing_array_file(self, ds, tmp_path):
        write_dataset(ds, tmp_path)
        (tmp_path / f"{ds.samples[0].id}.f32").unlink()
        with pytest.raises(TruncatedArrayError):
            read_dataset(tmp_path)

    def test_oversized_array_is_shape_mismatch(self, ds, tmp_path):
        write_dataset(ds, tmp_path)
        f = tmp_path / f"{ds.samples[0].id}.f32"
        f.write_bytes(f.read_bytes() + b"\x00" * 4)
        with pytest.raises(ShapeMismatchError):
            read_dataset(tmp_path)

    def test_frame_count_vs_times_mismatch(self, ds, tmp_path):
        write_dataset(ds, tmp_path)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        manifest["samples"][0]["times"] = [0.0, 4.0]
        (tmp_path / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(ShapeMismatchError):
            read_dataset(tmp_path)

    def test_bad_entry_is_manifest_error(self, tmp_path):
        with pytest.raises(ManifestError):
            load_sample(tmp_path, {"id": "x"})

    def test_format_tag_value(self):
        assert FORMAT_TAG == "pdemix-dataset-v1"
