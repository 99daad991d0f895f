import numpy as np
import pytest
from scipy import ndimage

from lenstrace import isp, metrics
from lenstrace.isp import NoiseParams, SimulationConfig
from lenstrace.psf import PsfGrid, delta_psf_grid

from conftest import natural_images


def uniform_grid(rows, cols, patch, kernel):
    kernels = [[kernel.copy() for _ in range(cols)] for _ in range(rows)]
    return PsfGrid(rows=rows, cols=cols, patch_px=patch, kernels=kernels,
                   weights=np.ones((rows, cols, 3), dtype=np.float32))


class TestGamma:
    def test_zero_maps_below_epsilon(self):
        out = isp.gamma_decompress(np.array([0.0]))
        assert 0.0 <= out[0] <= 1e-8

    def test_one_maps_to_one(self):
        assert isp.gamma_decompress(np.array([1.0]))[0] == pytest.approx(1.0)

    def test_half(self):
        expect = ((0.5 + 0.055) / 1.055) ** 2.4
        assert isp.gamma_decompress(np.array([0.5]))[0] == pytest.approx(expect)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            isp.gamma_decompress(np.array([1.2]))

    def test_roundtrip(self):
        x = np.linspace(0.0, 1.0, 1000)
        back = isp.gamma_compress(isp.gamma_decompress(x))
        assert np.abs(back - np.maximum(x, 1e-8)).max() < 1e-12


class TestEnergyTransform:
    def test_identity_calibration_is_pure_gamma(self, flat_window):
        x = np.random.default_rng(0).uniform(0, 1, (8, 8, 3))
        got = isp.energy_transform(x, flat_window.sensor, 5500)
        assert np.allclose(got, isp.gamma_decompress(x), atol=1e-12)

    def test_wb_divides_channels(self, triplet_doc):
        import copy

        from lenstrace import lens

        doc = copy.deepcopy(triplet_doc)
        doc["sensor"]["ccm"] = [[1, 0, 0], [0, 1, 0], [0, 0, 1]]
        doc["sensor"]["wb"] = {"5500": [2.0, 1.0, 1.5]}
        sensor = lens.prescription_from_dict(doc).sensor
        gray = np.full((4, 4, 3), 0.5)
        e = isp.energy_transform(gray, sensor, 5500)
        lin = isp.gamma_decompress(np.array([0.5]))[0]
        assert np.allclose(e[..., 0], lin / 2.0)
        assert np.allclose(e[..., 1], lin)
        assert np.allclose(e[..., 2], lin / 1.5)

    def test_roundtrip(self, triplet):
        x = np.random.default_rng(1).uniform(0, 1, (16, 16, 3))
        e = isp.energy_transform(x, triplet.sensor, 6500)
        back = isp.inverse_energy_transform(e, triplet.sensor, 6500)
        assert np.sqrt(np.mean((back - x) ** 2)) < 1e-6

    def test_unknown_temperature(self, triplet):
        with pytest.raises(KeyError):
            isp.energy_transform(np.zeros((2, 2, 3)), triplet.sensor, 9999)


class TestPartitionedConvolve:
    def test_delta_identity_exact(self):
        rng = np.random.default_rng(2)
        img = rng.uniform(0, 1, (60, 80, 3))
        out = isp.partitioned_convolve(img, delta_psf_grid(3, 4, 20))
        assert np.array_equal(out, img)

    def test_uniform_grid_matches_direct(self):
        rng = np.random.default_rng(3)
        img = rng.uniform(0, 1, (60, 80, 3))
        k = rng.uniform(0, 1, (3, 7, 5))
        k /= k.sum(axis=(1, 2), keepdims=True)
        got = isp.partitioned_convolve(img, uniform_grid(3, 4, 20, k))
        ref = np.stack([
            ndimage.convolve(np.pad(img[:, :, c], ((3, 3), (2, 2)), mode="edge"),
                             k[c], mode="constant")[3:-3, 2:-2]
            for c in range(3)], axis=-1)
        assert np.sqrt(np.mean((got - ref) ** 2)) <= 1e-6

    def test_two_cell_own_kernels(self):
        rng = np.random.default_rng(4)
        img = rng.uniform(0, 1, (20, 40, 3))
        ka = rng.uniform(0, 1, (3, 5, 5)); ka /= ka.sum(axis=(1, 2), keepdims=True)
        kb = rng.uniform(0, 1, (3, 5, 5)); kb /= kb.sum(axis=(1, 2), keepdims=True)
        grid = PsfGrid(rows=1, cols=2, patch_px=20,
                       kernels=[[ka, kb]],
                       weights=np.ones((1, 2, 3), dtype=np.float32))
        got = isp.partitioned_convolve(img, grid)
        for (c0, k) in ((0, ka), (20, kb)):
            full = np.stack([
                ndimage.convolve(np.pad(img[:, :, ch], 2, mode="edge"),
                                 k[ch], mode="constant")[2:-2, 2:-2]
                for ch in range(3)], axis=-1)
            # interior of the cell, away from its boundary by the radius
            inner = got[2:-2, c0 + 2:c0 + 18]
            assert np.allclose(inner, full[2:-2, c0 + 2:c0 + 18], atol=1e-12)

    def test_linearity(self):
        rng = np.random.default_rng(5)
        a = rng.uniform(0, 1, (40, 40, 3))
        b = rng.uniform(0, 1, (40, 40, 3))
        k = rng.uniform(0, 1, (3, 5, 5)); k /= k.sum(axis=(1, 2), keepdims=True)
        grid = uniform_grid(2, 2, 20, k)
        lhs = isp.partitioned_convolve(0.4 * a + 1.7 * b, grid)
        rhs = 0.4 * isp.partitioned_convolve(a, grid) + 1.7 * isp.partitioned_convolve(b, grid)
        assert np.abs(lhs - rhs).max() / np.abs(lhs).max() <= 1e-9

    def test_energy_bookkeeping(self):
        rng = np.random.default_rng(6)
        img = rng.uniform(0, 1, (60, 80, 3))
        k = rng.uniform(0, 1, (3, 9, 9)); k /= k.sum(axis=(1, 2), keepdims=True)
        out = isp.partitioned_convolve(img, uniform_grid(3, 4, 20, k))
        assert abs(out.mean() / img.mean() - 1.0) < 1e-3

    def test_kernel_wider_than_patch(self):
        # Padding follows the largest kernel radius, so kernels wider than
        # the patch itself still convolve correctly.
        rng = np.random.default_rng(7)
        img = rng.uniform(0, 1, (8, 8, 3))
        k = rng.uniform(0, 1, (3, 11, 11))
        k /= k.sum(axis=(1, 2), keepdims=True)
        got = isp.partitioned_convolve(img, uniform_grid(2, 2, 4, k))
        ref = np.stack([
            ndimage.convolve(np.pad(img[:, :, c], 5, mode="edge"),
                             k[c], mode="constant")[5:-5, 5:-5]
            for c in range(3)], axis=-1)
        assert np.abs(got - ref).max() < 1e-12

    def test_resolution_mismatch(self):
        with pytest.raises(ValueError):
            isp.partitioned_convolve(np.zeros((30, 40, 3)), delta_psf_grid(3, 4, 20))

    def test_illumination_weight_applied(self):
        img = np.ones((20, 20, 3))
        grid = delta_psf_grid(1, 1, 20)
        grid.weights[0, 0] = [0.5, 1.0, 0.25]
        out = isp.partitioned_convolve(img, grid)
        assert np.allclose(out[..., 0], 0.5)
        assert np.allclose(out[..., 2], 0.25)


class TestMosaic:
    def test_constant(self):
        raw = isp.mosaic(np.full((6, 6, 3), 0.3), "RGGB")
        assert np.allclose(raw, 0.3)

    def test_rggb_sites(self):
        img = np.zeros((4, 4, 3))
        img[..., 0], img[..., 1], img[..., 2] = 0.1, 0.2, 0.3
        raw = isp.mosaic(img, "RGGB")
        assert raw[0, 0] == 0.1 and raw[0, 1] == 0.2
        assert raw[1, 0] == 0.2 and raw[1, 1] == 0.3

    def test_pure_red_even_even(self):
        img = np.zeros((6, 6, 3)); img[..., 0] = 1.0
        raw = isp.mosaic(img, "RGGB")
        assert np.all(raw[0::2, 0::2] == 1.0)
        assert raw.sum() == raw[0::2, 0::2].sum()

    def test_bad_pattern(self):
        with pytest.raises(ValueError):
            isp.mosaic(np.zeros((4, 4, 3)), "RGBG")


class TestNoise:
    def test_zero_params_identity(self):
        x = np.random.default_rng(0).uniform(0, 2, (16, 16))  # even > 1
        out = isp.add_noise(x, NoiseParams(0.0, 0.0), 1)
        assert np.array_equal(out, x)

    def test_empirical_variance(self):
        draws = isp.add_noise(np.full((1000, 1000), 0.5),
                              NoiseParams(shot=1e-2, read=1e-4), 99)
        expect = 1e-4 + 0.5 * 1e-2
        assert abs(draws.var() / expect - 1.0) < 0.02

    def test_clipping(self):
        out = isp.add_noise(np.full((64, 64), 0.98),
                            NoiseParams(shot=0.3, read=0.05), 7)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_deterministic(self):
        x = np.full((32, 32), 0.4)
        a = isp.add_noise(x, NoiseParams(1e-3, 1e-5), 123)
        b = isp.add_noise(x, NoiseParams(1e-3, 1e-5), 123)
        assert np.array_equal(a, b)

    def test_negative_params_rejected(self):
        with pytest.raises(ValueError):
            NoiseParams(-1e-3, 0.0)


class TestDemosaic:
    @pytest.mark.parametrize("pattern", ["RGGB", "BGGR", "GRBG", "GBRG"])
    @pytest.mark.parametrize("method", ["malvar2004", "adaptive", "bilinear"])
    def test_constant(self, pattern, method):
        rec = isp.demosaic(isp.mosaic(np.full((16, 16, 3), 0.37), pattern),
                           pattern, method)
        assert np.abs(rec - 0.37).max() < 1e-12

    def test_smooth_gradient_roundtrip(self):
        yy, xx = np.mgrid[0:128, 0:160]
        img = np.stack([xx / 159.0, yy / 127.0, (xx + yy) / 286.0], axis=-1)
        rec = isp.demosaic(isp.mosaic(img, "RGGB"), "RGGB")
        assert metrics.psnr(rec, img) > 40.0

    def test_single_white_pixel(self):
        img = np.zeros((32, 32, 3)); img[16, 16] = 1.0
        rec = isp.demosaic(isp.mosaic(img, "RGGB"), "RGGB")
        assert np.isfinite(rec).all()
        assert rec[:13].max() == 0.0  # strictly local support

    def test_too_small(self):
        with pytest.raises(ValueError):
            isp.demosaic(np.zeros((4, 4)), "RGGB")

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            isp.demosaic(np.zeros((8, 8)), "RGGB", method="magic")

    @pytest.mark.parametrize("pattern", ["RGGB", "BGGR", "GRBG", "GBRG"])
    def test_patterns_consistent(self, pattern):
        rng = np.random.default_rng(8)
        smooth = ndimage.gaussian_filter(rng.uniform(0, 1, (64, 64, 3)),
                                         (3, 3, 0))
        rec = isp.demosaic(isp.mosaic(smooth, pattern), pattern)
        assert metrics.psnr(rec, smooth) > 35.0


class TestSimulateImage:
    def test_delta_zero_noise_roundtrip(self, triplet):
        images = natural_images(triplet.sensor.resolution, count=1)
        img = next(iter(images.values()))
        grid = delta_psf_grid(6, 8, 100)
        cfg = SimulationConfig(seed=3, noise=NoiseParams(0.0, 0.0))
        out = isp.simulate_image(img, grid, triplet.sensor, cfg)
        assert metrics.psnr(out, img) > 35.0

    def test_seed_bit_identical(self, triplet):
        rng = np.random.default_rng(9)
        img = ndimage.gaussian_filter(rng.uniform(0, 1, (600, 800, 3)), (2, 2, 0))
        grid = delta_psf_grid(6, 8, 100)
        a = isp.simulate_image(img, grid, triplet.sensor, SimulationConfig(seed=11))
        b = isp.simulate_image(img, grid, triplet.sensor, SimulationConfig(seed=11))
        assert np.array_equal(a, b)

    def test_no_nan_anywhere(self, triplet):
        rng = np.random.default_rng(10)
        img = rng.uniform(0, 1, (600, 800, 3))
        grid = delta_psf_grid(6, 8, 100)
        out = isp.simulate_image(img, grid, triplet.sensor, SimulationConfig(seed=1))
        assert np.isfinite(out).all()
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_patch_size_checked(self, triplet):
        grid = delta_psf_grid(6, 8, 100)
        cfg = SimulationConfig(seed=0, patch_px=50)
        with pytest.raises(ValueError):
            isp.simulate_image(np.zeros((600, 800, 3)), grid, triplet.sensor, cfg)


class TestIo:
    def test_png_roundtrip_8bit(self, tmp_path):
        rng = np.random.default_rng(12)
        img = rng.uniform(0, 1, (32, 48, 3))
        path = tmp_path / "t.png"
        isp.write_image_srgb(path, img, bits=8)
        back = isp.read_image_srgb(path)
        assert np.abs(back - img).max() <= 0.5 / 255 + 1e-9

    def test_png_roundtrip_16bit(self, tmp_path):
        rng = np.random.default_rng(13)
        img = rng.uniform(0, 1, (32, 48, 3))
        path = tmp_path / "t16.png"
        isp.write_image_srgb(path, img, bits=16)
        back = isp.read_image_srgb(path)
        assert np.abs(back - img).max() <= 0.5 / 65535 + 1e-12

    def test_energy_dump_roundtrip(self, tmp_path):
        rng = np.random.default_rng(14)
        e = rng.uniform(0, 2, (20, 30, 3))
        path = tmp_path / "e.bin"
        isp.write_energy(path, e)
        back = isp.read_energy(path)
        assert back.shape == e.shape
        assert np.abs(back - e).max() < 1e-6  # f32 storage
