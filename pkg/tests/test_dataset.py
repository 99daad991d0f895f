import json

import numpy as np
import pytest
from scipy import ndimage

from lenstrace import dataset, isp, lens, metrics
from lenstrace.dataset import (
    DatasetManifest,
    build_fov_map,
    build_psf_cache,
    decode_fov,
    encode_fov,
    generate_dataset,
    load_manifest,
    read_fov_png,
    verify_psf_cache,
)
from lenstrace.psf import delta_psf_grid
from lenstrace.psf_io import PsfCacheError, dump_psf_grid

from conftest import TRIPLET


class TestFovMap:
    def test_corners_and_center(self):
        m = build_fov_map(11, 21)
        assert tuple(m[0, 0]) == (-1.0, -1.0)
        assert tuple(m[0, -1]) == (1.0, -1.0)
        assert tuple(m[-1, 0]) == (-1.0, 1.0)
        assert tuple(m[-1, -1]) == (1.0, 1.0)
        assert tuple(m[5, 10]) == (0.0, 0.0)

    def test_fixed_point_roundtrip_is_stable(self):
        m = build_fov_map(32, 48)
        once = decode_fov(encode_fov(m))
        twice = decode_fov(encode_fov(once))
        assert np.array_equal(once, twice)

    def test_bad_dims(self):
        with pytest.raises(ValueError):
            build_fov_map(0, 4)


def tiny_dataset_setup(tmp_path, tiny_triplet, n_images=3, zero_noise=True):
    """Corpus + prescription + handmade delta cache on a 60x80 sensor."""
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    rng = np.random.default_rng(0)
    for i in range(n_images):
        img = ndimage.gaussian_filter(rng.uniform(0, 1, (90, 120, 3)), (3, 3, 0))
        isp.write_image_srgb(corpus / f"img{i}.png", np.clip(img, 0, 1))
    pres_path = tmp_path / "lens.json"
    lens.save_prescription(tiny_triplet, pres_path)
    cache = tmp_path / "grid.psfg"
    dump_psf_grid(delta_psf_grid(3, 4, 20), cache)
    manifest = DatasetManifest(
        corpus_dir=str(corpus),
        prescription_path=str(pres_path),
        psf_cache_path=str(cache),
        output_dir=str(tmp_path / "out"),
        field_grid=(3, 4),
        seed=7,
        crop_px=32,
        zero_noise=zero_noise,
    )
    return manifest


class TestGenerateDataset:
    def test_toy_corpus_and_determinism(self, tmp_path, tiny_triplet):
        manifest = tiny_dataset_setup(tmp_path, tiny_triplet)
        summary = generate_dataset(manifest)
        out = tmp_path / "out"
        assert len(summary["images"]) == 3
        for sub in ("gt", "input", "fov"):
            assert sorted(p.name for p in (out / sub).iterdir()) == [
                "0000.png", "0001.png", "0002.png"]
        first = {p: p.read_bytes() for p in out.rglob("*.png")}
        generate_dataset(manifest)
        for p, blob in first.items():
            assert p.read_bytes() == blob  # bit-identical regeneration

    def test_alignment_with_delta_grid(self, tmp_path, tiny_triplet):
        manifest = tiny_dataset_setup(tmp_path, tiny_triplet)
        generate_dataset(manifest)
        out = tmp_path / "out"
        gt = isp.read_image_srgb(out / "gt" / "0000.png")
        deg = isp.read_image_srgb(out / "input" / "0000.png")
        assert metrics.psnr(deg, gt) > 35.0
        # zero displacement: cross-correlation peak at the origin
        a = gt[..., 1] - gt[..., 1].mean()
        b = deg[..., 1] - deg[..., 1].mean()
        corr = np.fft.irfft2(np.fft.rfft2(a) * np.conj(np.fft.rfft2(b)))
        assert np.unravel_index(np.argmax(corr), corr.shape) == (0, 0)

    def test_fov_map_decodes(self, tmp_path, tiny_triplet):
        manifest = tiny_dataset_setup(tmp_path, tiny_triplet)
        generate_dataset(manifest)
        stored = read_fov_png(tmp_path / "out" / "fov" / "0001.png")
        expect = decode_fov(encode_fov(build_fov_map(60, 80)))
        assert np.array_equal(stored, expect)

    def test_summary_records_crop(self, tmp_path, tiny_triplet):
        manifest = tiny_dataset_setup(tmp_path, tiny_triplet)
        generate_dataset(manifest)
        with open(tmp_path / "out" / "manifest.json") as fh:
            summary = json.load(fh)
        assert summary["crop_px"] == 32
        assert [r["seed"] for r in summary["images"]] == [7, 8, 9]

    def test_empty_corpus_rejected(self, tmp_path, tiny_triplet):
        manifest = tiny_dataset_setup(tmp_path, tiny_triplet)
        empty = tmp_path / "empty"
        empty.mkdir()
        bad = DatasetManifest(**{**manifest.__dict__, "corpus_dir": str(empty)})
        with pytest.raises(ValueError):
            generate_dataset(bad)

    def test_crop_larger_than_sensor_rejected(self, tmp_path, tiny_triplet):
        manifest = tiny_dataset_setup(tmp_path, tiny_triplet)
        bad = DatasetManifest(**{**manifest.__dict__, "crop_px": 512})
        with pytest.raises(ValueError):
            generate_dataset(bad)


class TestManifestIo:
    def test_roundtrip(self, tmp_path, tiny_triplet):
        manifest = tiny_dataset_setup(tmp_path, tiny_triplet)
        path = tmp_path / "manifest.json"
        with open(path, "w") as fh:
            json.dump({
                "corpus_dir": manifest.corpus_dir,
                "prescription_path": manifest.prescription_path,
                "psf_cache_path": manifest.psf_cache_path,
                "output_dir": manifest.output_dir,
                "field_grid": [3, 4],
                "seed": 7,
                "crop_px": 32,
                "zero_noise": True,
            }, fh)
        loaded = load_manifest(path)
        assert loaded.field_grid == (3, 4)
        assert loaded.zero_noise is True

    def test_malformed(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"corpus_dir": "x"}')
        with pytest.raises(ValueError):
            load_manifest(path)


class TestPsfCacheOps:
    def test_build_then_verify(self, tmp_path, tiny_triplet):
        cache = tmp_path / "c.psfg"
        build_psf_cache(tiny_triplet, (3, 4), cache, pupil_samples=24)
        report = verify_psf_cache(cache, tiny_triplet, pupil_samples=24)
        assert report["max_deviation"] <= 1e-6

    def test_rebuild_bit_identical(self, tmp_path, tiny_triplet):
        a, b = tmp_path / "a.psfg", tmp_path / "b.psfg"
        build_psf_cache(tiny_triplet, (3, 4), a, pupil_samples=24)
        build_psf_cache(tiny_triplet, (3, 4), b, pupil_samples=24)
        assert a.read_bytes() == b.read_bytes()

    def test_corruption_detected(self, tmp_path, tiny_triplet):
        cache = tmp_path / "c.psfg"
        build_psf_cache(tiny_triplet, (3, 4), cache, pupil_samples=24)
        blob = bytearray(cache.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        cache.write_bytes(bytes(blob))
        with pytest.raises(PsfCacheError):
            verify_psf_cache(cache, tiny_triplet, pupil_samples=24)

    def test_wrong_parameters_detected(self, tmp_path, tiny_triplet):
        # A cache built at different sampling fails the recompute check.
        cache = tmp_path / "c.psfg"
        build_psf_cache(tiny_triplet, (3, 4), cache, pupil_samples=16)
        with pytest.raises(PsfCacheError):
            verify_psf_cache(cache, tiny_triplet, pupil_samples=32)


def test_prepare_frame_geometry():
    rng = np.random.default_rng(1)
    img = rng.uniform(0, 1, (200, 300, 3))
    out = dataset.prepare_frame(img, (60, 80))
    assert out.shape == (60, 80, 3)
    assert out.min() >= 0.0 and out.max() <= 1.0
    gray = dataset.prepare_frame(rng.uniform(0, 1, (100, 100)), (60, 80))
    assert gray.shape == (60, 80, 3)
