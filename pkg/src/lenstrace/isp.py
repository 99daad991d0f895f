"""Forward imaging pipeline: sRGB -> energy domain -> optical blur ->
mosaic -> sensor noise -> demosaic -> sRGB.

Energy-domain images are plain (H, W, 3) float arrays in camera-RGB linear
energy units; raw frames are (H, W) single-channel mosaics.  The pipeline
is deterministic under a fixed seed: the sampled color temperature is
reused when the transform is inverted, and noise comes from a seeded
generator.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .lens import BAYER_PATTERNS, SensorSpec
from .psf import PsfGrid

GAMMA_EPS = 1e-8

_BAYER_LAYOUT = {
    "RGGB": ((0, 1), (1, 2)),
    "BGGR": ((2, 1), (1, 0)),
    "GRBG": ((1, 0), (2, 1)),
    "GBRG": ((1, 2), (0, 1)),
}


@dataclass(frozen=True)
class NoiseParams:
    """Heteroscedastic Gaussian: variance = read + shot * signal."""

    shot: float
    read: float

    def __post_init__(self):
        if self.shot < 0 or self.read < 0:
            raise ValueError("noise variances must be nonnegative")


@dataclass(frozen=True)
class SimulationConfig:
    """Sampling choices for one simulated exposure.

    ``noise=None`` draws shot/read variances log-uniformly from the ranges;
    ``color_temps=None`` samples among every calibrated white-balance
    temperature.  The seed pins every stochastic choice.
    """

    seed: int = 0
    color_temps: tuple | None = None
    shot_range: tuple = (1e-4, 1e-2)
    read_range: tuple = (1e-6, 1e-4)
    noise: NoiseParams | None = None
    demosaic_method: str = "malvar2004"
    patch_px: int | None = None


def gamma_decompress(image) -> np.ndarray:
    """Inverse sRGB transfer; inputs are clamped to at least 1e-8."""
    x = np.asarray(image, dtype=float)
    if np.any(x < 0) or np.any(x > 1):
        raise ValueError("display-referred input must lie in [0, 1]")
    x = np.maximum(x, GAMMA_EPS)
    return np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)


def gamma_compress(image) -> np.ndarray:
    """Forward sRGB transfer, clamped to [0, 1]."""
    x = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * x ** (1 / 2.4) - 0.055)


def energy_transform(image, sensor: SensorSpec, color_temp: int) -> np.ndarray:
    """sRGB -> camera-RGB energy: degamma, invert CCM, divide WB gains."""
    gains = sensor.wb.get(int(color_temp))
    if gains is None:
        raise KeyError(f"color temperature {color_temp} K not calibrated")
    linear = gamma_decompress(image)
    cam = linear @ np.linalg.inv(sensor.ccm).T
    np.maximum(cam, 0.0, out=cam)
    return cam / gains


def inverse_energy_transform(image, sensor: SensorSpec, color_temp: int) -> np.ndarray:
    """Camera-RGB energy -> sRGB: apply WB gains, CCM, gamma; clamp [0, 1]."""
    gains = sensor.wb.get(int(color_temp))
    if gains is None:
        raise KeyError(f"color temperature {color_temp} K not calibrated")
    cam = np.asarray(image, dtype=float) * gains
    linear = cam @ sensor.ccm.T
    return gamma_compress(linear)


def partitioned_convolve(image, grid: PsfGrid) -> np.ndarray:
    """Spatially variant blur: per-cell convolution with true-content padding.

    Each sensor patch is padded by its kernel radius with neighboring image
    content (edge replication beyond the frame), convolved with the cell's
    per-channel kernel, scaled by the illumination weight, and spliced back.
    """
    img = np.asarray(image, dtype=float)
    H, W, C = img.shape
    patch = grid.patch_px
    if H != grid.rows * patch or W != grid.cols * patch:
        raise ValueError(
            f"image {H}x{W} does not match {grid.rows}x{grid.cols} cells of {patch} px"
        )
    pad = grid.max_kernel // 2
    padded = np.pad(img, ((pad, pad), (pad, pad), (0, 0)), mode="edge")
    out = np.empty_like(img)
    for r in range(grid.rows):
        for c in range(grid.cols):
            kernel, weights = grid.cell(r, c)
            hy, hx = kernel.shape[1] // 2, kernel.shape[2] // 2
            if kernel.shape[1] > patch + 2 * pad or kernel.shape[2] > patch + 2 * pad:
                raise ValueError("kernel larger than padded patch")
            y0, x0 = r * patch, c * patch
            region = padded[pad + y0 - hy:pad + y0 + patch + hy,
                            pad + x0 - hx:pad + x0 + patch + hx]
            for ch in range(C):
                conv = ndimage.convolve(region[:, :, ch],
                                        np.asarray(kernel[ch], dtype=float),
                                        mode="constant")
                out[y0:y0 + patch, x0:x0 + patch, ch] = (
                    float(weights[ch]) * conv[hy:hy + patch, hx:hx + patch]
                )
    return out


def mosaic(image, pattern: str) -> np.ndarray:
    """Keep one color per pixel according to the Bayer layout."""
    pattern = pattern.upper()
    if pattern not in BAYER_PATTERNS:
        raise ValueError(f"unknown Bayer pattern {pattern!r}")
    img = np.asarray(image, dtype=float)
    H, W, _ = img.shape
    layout = _BAYER_LAYOUT[pattern]
    raw = np.empty((H, W))
    for dy in range(2):
        for dx in range(2):
            raw[dy::2, dx::2] = img[dy::2, dx::2, layout[dy][dx]]
    return raw


def add_noise(raw, params: NoiseParams, seed) -> np.ndarray:
    """Heteroscedastic Gaussian sensor noise, clipped to [0, 1].

    Zero parameters return the input unchanged (identity, no clipping).
    ``seed`` may be an integer or a ``numpy.random.Generator``.
    """
    x = np.asarray(raw, dtype=float)
    if params.shot == 0 and params.read == 0:
        return x.copy()
    rng = np.random.default_rng(seed)
    sigma = np.sqrt(params.read + params.shot * x)
    return np.clip(x + rng.standard_normal(x.shape) * sigma, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Demosaicing


def _site_masks(shape, pattern):
    H, W = shape
    layout = _BAYER_LAYOUT[pattern]
    sites = np.empty((H, W), dtype=np.uint8)
    for dy in range(2):
        for dx in range(2):
            sites[dy::2, dx::2] = layout[dy][dx]
    rows_red = np.zeros((H, W), dtype=bool)
    for dy in range(2):
        if 0 in layout[dy]:
            rows_red[dy::2, :] = True
    return sites, rows_red


# Gradient-corrected linear interpolation stencils (5x5, /8).
_G_AT_RB = np.array([
    [0, 0, -1, 0, 0],
    [0, 0, 2, 0, 0],
    [-1, 2, 4, 2, -1],
    [0, 0, 2, 0, 0],
    [0, 0, -1, 0, 0]]) / 8.0
_RB_AT_G_ROW = np.array([
    [0, 0, 0.5, 0, 0],
    [0, -1, 0, -1, 0],
    [-1, 4, 5, 4, -1],
    [0, -1, 0, -1, 0],
    [0, 0, 0.5, 0, 0]]) / 8.0
_RB_AT_G_COL = _RB_AT_G_ROW.T
_RB_AT_RB = np.array([
    [0, 0, -1.5, 0, 0],
    [0, 2, 0, 2, 0],
    [-1.5, 0, 6, 0, -1.5],
    [0, 2, 0, 2, 0],
    [0, 0, -1.5, 0, 0]]) / 8.0


def demosaic_malvar(raw, pattern: str) -> np.ndarray:
    """Gradient-corrected 5x5 linear demosaic (mirror boundaries)."""
    x = np.asarray(raw, dtype=float)
    if x.shape[0] < 5 or x.shape[1] < 5:
        raise ValueError("raw frame must be at least 5x5")
    pattern = pattern.upper()
    sites, rows_red = _site_masks(x.shape, pattern)

    conv = {k: ndimage.correlate(x, w, mode="mirror")
            for k, w in (("g", _G_AT_RB), ("row", _RB_AT_G_ROW),
                         ("col", _RB_AT_G_COL), ("diag", _RB_AT_RB))}

    g = np.where(sites == 1, x, conv["g"])
    red = np.where(sites == 0, x,
                   np.where(sites == 2, conv["diag"],
                            np.where(rows_red, conv["row"], conv["col"])))
    blue = np.where(sites == 2, x,
                    np.where(sites == 0, conv["diag"],
                             np.where(rows_red, conv["col"], conv["row"])))
    return np.stack([red, g, blue], axis=-1)


def demosaic_adaptive(raw, pattern: str) -> np.ndarray:
    """Gradient-directed demosaic (Hamilton-Adams green, color-difference
    chroma).  Green is reconstructed along the axis of least gradient with
    a Laplacian correction; red/blue follow by interpolating R-G and B-G
    differences.  Deterministic, 5x5 support.
    """
    x = np.asarray(raw, dtype=float)
    if x.shape[0] < 5 or x.shape[1] < 5:
        raise ValueError("raw frame must be at least 5x5")
    pattern = pattern.upper()
    sites, rows_red = _site_masks(x.shape, pattern)
    pad = np.pad(x, 2, mode="reflect")

    def sh(dy, dx):
        return pad[2 + dy:2 + dy + x.shape[0], 2 + dx:2 + dx + x.shape[1]]

    # Hamilton-Adams green estimates and gradients at the R/B sites.
    grad_h = np.abs(sh(0, -1) - sh(0, 1)) + np.abs(2 * x - sh(0, -2) - sh(0, 2))
    grad_v = np.abs(sh(-1, 0) - sh(1, 0)) + np.abs(2 * x - sh(-2, 0) - sh(2, 0))
    g_h = (sh(0, -1) + sh(0, 1)) / 2 + (2 * x - sh(0, -2) - sh(0, 2)) / 4
    g_v = (sh(-1, 0) + sh(1, 0)) / 2 + (2 * x - sh(-2, 0) - sh(2, 0)) / 4
    g_est = np.where(grad_h < grad_v, g_h,
                     np.where(grad_v < grad_h, g_v, (g_h + g_v) / 2))
    green = np.where(sites == 1, x, g_est)

    # Chroma by bilinear interpolation of the color differences.
    out = np.empty(x.shape + (3,))
    out[:, :, 1] = green
    gpad = np.pad(green, 2, mode="reflect")

    def gsh(dy, dx):
        return gpad[2 + dy:2 + dy + x.shape[0], 2 + dx:2 + dx + x.shape[1]]

    for ch in (0, 2):
        diff = np.where(sites == ch, x - green, 0.0)
        have = (sites == ch).astype(float)
        dpad = np.pad(diff, 2, mode="reflect")
        hpad = np.pad(have, 2, mode="reflect")

        def dsh(dy, dx, p=dpad):
            return p[2 + dy:2 + dy + x.shape[0], 2 + dx:2 + dx + x.shape[1]]

        def hsh(dy, dx, p=hpad):
            return p[2 + dy:2 + dy + x.shape[0], 2 + dx:2 + dx + x.shape[1]]

        # Diagonal pass fills the opposite-color sites, then the axial pass
        # fills the green sites from a now half-populated lattice.
        num = sum(dsh(dy, dx) for dy in (-1, 1) for dx in (-1, 1))
        den = sum(hsh(dy, dx) for dy in (-1, 1) for dx in (-1, 1))
        diag = np.where(den > 0, num / np.maximum(den, 1), 0.0)
        diff1 = np.where(sites == ch, diff, diag)
        have1 = ((sites == ch) | (den > 0)).astype(float)
        dpad1 = np.pad(np.where(have1 > 0, diff1, 0.0), 2, mode="reflect")
        hpad1 = np.pad(have1, 2, mode="reflect")
        num2 = sum(dsh(dy, dx, dpad1) for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)))
        den2 = sum(hsh(dy, dx, hpad1) for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)))
        axial = np.where(den2 > 0, num2 / np.maximum(den2, 1), 0.0)
        full = np.where(have1 > 0, diff1, axial)
        out[:, :, ch] = green + full
    return out


_BILINEAR_G = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]]) / 4.0
_BILINEAR_RB = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]]) / 4.0


def demosaic_bilinear(raw, pattern: str) -> np.ndarray:
    """Plain bilinear demosaic; simple reference method."""
    x = np.asarray(raw, dtype=float)
    if x.shape[0] < 5 or x.shape[1] < 5:
        raise ValueError("raw frame must be at least 5x5")
    sites, _ = _site_masks(x.shape, pattern.upper())
    planes = []
    for ch, w in ((0, _BILINEAR_RB), (1, _BILINEAR_G), (2, _BILINEAR_RB)):
        masked = np.where(sites == ch, x, 0.0)
        planes.append(ndimage.correlate(masked, w, mode="mirror"))
    return np.stack(planes, axis=-1)


DEMOSAIC_METHODS = {
    "malvar2004": demosaic_malvar,
    "adaptive": demosaic_adaptive,
    "bilinear": demosaic_bilinear,
}


def demosaic(raw, pattern: str, method: str = "malvar2004") -> np.ndarray:
    try:
        fn = DEMOSAIC_METHODS[method]
    except KeyError:
        raise ValueError(f"unknown demosaic method {method!r}") from None
    return fn(raw, pattern)


# ---------------------------------------------------------------------------
# Full pipeline


def simulate_image(image, grid: PsfGrid, sensor: SensorSpec,
                   config: SimulationConfig) -> np.ndarray:
    """Render one aberrated exposure of a clean sRGB image.

    Stage order: energy transform, partitioned convolution, Bayer mosaic,
    sensor noise, demosaic, inverse energy transform.  The same sampled
    color temperature is used in both transform directions.
    """
    if config.patch_px is not None and config.patch_px != grid.patch_px:
        raise ValueError("config patch size does not match the PSF grid")
    rng = np.random.default_rng(config.seed)
    temps = config.color_temps or tuple(sorted(sensor.wb))
    temp = int(temps[rng.integers(len(temps))])
    if config.noise is not None:
        params = config.noise
    else:
        params = NoiseParams(
            shot=float(np.exp(rng.uniform(*np.log(config.shot_range)))),
            read=float(np.exp(rng.uniform(*np.log(config.read_range)))),
        )
    energy = energy_transform(image, sensor, temp)
    blurred = partitioned_convolve(energy, grid)
    raw = mosaic(blurred, sensor.bayer)
    raw = add_noise(raw, params, rng)
    rgb = demosaic(raw, sensor.bayer, config.demosaic_method)
    return inverse_energy_transform(rgb, sensor, temp)


# ---------------------------------------------------------------------------
# Image and energy-dump I/O


def read_image_srgb(path) -> np.ndarray:
    """Load an 8- or 16-bit PNG (or similar) as float RGB in [0, 1]."""
    import cv2

    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise IOError(f"cannot read image {path}")
    if data.ndim == 2:
        data = data[:, :, None].repeat(3, axis=2)
    if data.shape[2] == 4:
        data = data[:, :, :3]
    data = data[:, :, ::-1]  # BGR -> RGB
    scale = 65535.0 if data.dtype == np.uint16 else 255.0
    return data.astype(float) / scale


def write_image_srgb(path, image, bits: int = 8) -> None:
    import cv2

    x = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)[:, :, ::-1]
    if bits == 8:
        data = np.round(x * 255.0).astype(np.uint8)
    elif bits == 16:
        data = np.round(x * 65535.0).astype(np.uint16)
    else:
        raise ValueError("bits must be 8 or 16")
    if not cv2.imwrite(str(path), data):
        raise IOError(f"cannot write image {path}")


ENERGY_MAGIC = b"ENRG"


def write_energy(path, image) -> None:
    """Dump a linear energy image as 32-bit float planar binary."""
    x = np.asarray(image, dtype=np.float32)
    if x.ndim == 2:
        x = x[:, :, None]
    H, W, C = x.shape
    with open(path, "wb") as fh:
        fh.write(ENERGY_MAGIC + struct.pack("<IIII", 1, H, W, C))
        fh.write(np.ascontiguousarray(x.transpose(2, 0, 1), dtype="<f4").tobytes())


def read_energy(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(20)
        if head[:4] != ENERGY_MAGIC:
            raise IOError("not an energy dump")
        version, H, W, C = struct.unpack("<IIII", head[4:])
        if version != 1:
            raise IOError(f"energy dump version {version} unsupported")
        data = np.frombuffer(fh.read(4 * H * W * C), dtype="<f4")
    return data.reshape(C, H, W).transpose(1, 2, 0).astype(float)
