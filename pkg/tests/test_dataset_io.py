"""Raster I/O, manifest loading, config parsing, model/gallery files."""

import numpy as np
import pytest

from patchface.config import Config, ConfigError, parse_config, parse_config_lines
from patchface.dataset import DatasetError, load_dataset, load_manifest
from patchface.gallery_io import (
    GalleryBadMagicError,
    GalleryTruncatedError,
    deserialize_gallery,
    load_gallery,
    save_gallery,
    serialize_gallery,
)
from patchface.rasters import RasterError, read_pgm, read_ppm, write_pgm, write_ppm
from patchface.sparse import GalleryIndex, GalleryModality


class TestRasters:
    def test_pgm8_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, size=(17, 23)).astype(np.uint8)
        path = tmp_path / "x.pgm"
        write_pgm(path, img)
        np.testing.assert_array_equal(read_pgm(path), img)

    def test_pgm16_round_trip_big_endian(self, tmp_path):
        rng = np.random.default_rng(1)
        dep = rng.integers(0, 65536, size=(9, 11)).astype(np.uint16)
        path = tmp_path / "d.pgm"
        write_pgm(path, dep)
        back = read_pgm(path)
        assert back.dtype == np.uint16
        np.testing.assert_array_equal(back, dep)
        # payload must be big-endian per the netpbm convention
        raw = path.read_bytes()
        header_end = raw.index(b"65535\n") + 6
        first = int.from_bytes(raw[header_end:header_end + 2], "big")
        assert first == dep[0, 0]

    def test_ppm_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        img = rng.integers(0, 256, size=(5, 7, 3)).astype(np.uint8)
        path = tmp_path / "c.ppm"
        write_ppm(path, img)
        np.testing.assert_array_equal(read_ppm(path), img)

    def test_comment_in_header(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# a comment\n2 2\n255\n\x01\x02\x03\x04")
        np.testing.assert_array_equal(read_pgm(path),
                                      [[1, 2], [3, 4]])

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n4 4\n255\n\x00\x00")
        with pytest.raises(RasterError, match="truncated"):
            read_pgm(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "b.pgm"
        path.write_bytes(b"P2\n2 2\n255\n")
        with pytest.raises(RasterError, match="magic"):
            read_pgm(path)


def write_min_dataset(root, depth_shape=(8, 8)):
    root.mkdir(parents=True, exist_ok=True)
    (root / "pA").mkdir(exist_ok=True)
    write_pgm(root / "pA/s0.img.pgm",
              np.zeros((8, 8), dtype=np.uint8))
    write_pgm(root / "pA/s0.dep.pgm",
              np.full(depth_shape, 700, dtype=np.uint16))
    (root / "manifest.csv").write_text(
        "person,sample,image,depth,tag,split\n"
        "pA,s0,pA/s0.img.pgm,pA/s0.dep.pgm,frontal,gallery\n"
    )


class TestManifest:
    def test_minimal_load(self, tmp_path):
        write_min_dataset(tmp_path / "d")
        manifest, samples = load_dataset(tmp_path / "d")
        assert manifest.persons == ["pA"]
        assert samples["pA/s0"].label == "pA"

    def test_missing_file_names_path(self, tmp_path):
        write_min_dataset(tmp_path / "d")
        (tmp_path / "d/pA/s0.dep.pgm").unlink()
        with pytest.raises(DatasetError, match="s0.dep.pgm"):
            load_dataset(tmp_path / "d")

    def test_dimension_mismatch_names_path(self, tmp_path):
        write_min_dataset(tmp_path / "d", depth_shape=(4, 4))
        with pytest.raises(DatasetError, match="does not match depth"):
            load_dataset(tmp_path / "d")

    def test_duplicate_entry_rejected(self, tmp_path):
        write_min_dataset(tmp_path / "d")
        mf = tmp_path / "d/manifest.csv"
        mf.write_text(mf.read_text()
                      + "pA,s0,pA/s0.img.pgm,pA/s0.dep.pgm,frontal,probe\n")
        with pytest.raises(DatasetError, match="duplicate"):
            load_manifest(tmp_path / "d")

    def test_unknown_tag_rejected(self, tmp_path):
        write_min_dataset(tmp_path / "d")
        mf = tmp_path / "d/manifest.csv"
        mf.write_text(
            "person,sample,image,depth,tag,split\n"
            "pA,s0,pA/s0.img.pgm,pA/s0.dep.pgm,grimace,gallery\n"
        )
        with pytest.raises(DatasetError, match="grimace"):
            load_manifest(tmp_path / "d")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DatasetError, match="manifest"):
            load_manifest(tmp_path)


class TestConfig:
    def test_defaults_round_trip_through_lines(self):
        cfg = Config()
        back = parse_config_lines(cfg.to_lines())
        assert back == cfg

    def test_overrides(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text(
            "# comment line\n"
            "epochs = 7\n"
            "margin = 0.5\n"
            "normalize_embeddings = true\n"
            "\n"
        )
        cfg = parse_config(path)
        assert cfg.epochs == 7
        assert cfg.margin == 0.5
        assert cfg.normalize_embeddings is True
        assert cfg.batch_size == 64  # untouched default

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            parse_config_lines(["no_such_knob = 3"])

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError, match="cannot parse"):
            parse_config_lines(["epochs = banana"])

    def test_bad_line_rejected(self):
        with pytest.raises(ConfigError, match="key = value"):
            parse_config_lines(["epochs 7"])

    def test_every_spec_default_is_overridable(self):
        # Each documented default maps to a key the parser accepts.
        lines = [
            "seed = 1", "epochs = 2", "batch_size = 3",
            "learning_rate = 0.5", "momentum = 0.4", "weight_decay = 0.3",
            "margin = 0.9", "pool_refresh = 2", "pool_size_per_person = 4",
            "normalize_embeddings = yes", "bn_eps = 0.001",
            "max_keypoints = 5", "keypoint_threshold = 0.01",
            "max_invalid_fraction = 0.25", "lasso_lambda = 0.7",
            "n_atoms = 9", "lasso_tol = 0.001", "lasso_max_iter = 11",
            "weight_image = 0.3", "weight_depth = 0.7",
        ]
        cfg = parse_config_lines(lines)
        assert cfg.n_atoms == 9 and cfg.weight_depth == 0.7


def small_gallery():
    rng = np.random.default_rng(3)
    mods = {}
    for name, n in (("image", 6), ("depth", 4)):
        emb = rng.normal(size=(16, n)).astype(np.float32)
        labels = [f"p{i % 2}" for i in range(n)]
        ids = [f"p{i % 2}/s{i}" for i in range(n)]
        mods[name] = GalleryModality(emb, labels, ids)
    return GalleryIndex(mods)


class TestGalleryFile:
    def test_round_trip_bit_exact(self, tmp_path):
        gal = small_gallery()
        path = tmp_path / "g.pfga"
        save_gallery(gal, path)
        back = load_gallery(path)
        assert sorted(back.modalities) == sorted(gal.modalities)
        for m in gal.modalities:
            np.testing.assert_array_equal(back[m].embeddings,
                                          gal[m].embeddings)
            assert back[m].labels == gal[m].labels
            assert back[m].sample_ids == gal[m].sample_ids
        assert serialize_gallery(back) == serialize_gallery(gal)

    def test_bad_magic(self):
        blob = serialize_gallery(small_gallery())
        with pytest.raises(GalleryBadMagicError):
            deserialize_gallery(b"ZZZZ" + blob[4:])

    def test_truncated(self):
        blob = serialize_gallery(small_gallery())
        with pytest.raises(GalleryTruncatedError):
            deserialize_gallery(blob[: len(blob) - 10])
