"""Quantitative evaluation: PSNR, SSIM, MTF from PSFs and slanted edges,
chromatic-aberration curves over the field."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .psf import PsfGrid


def psnr(a, b, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE); returns math.inf for identical images."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _ssim_single(a, b, data_range):
    # 11x11 Gaussian window: sigma 1.5 truncated at 3.5 sigma.
    sigma, truncate = 1.5, 3.5
    pad = int(truncate * sigma + 0.5)
    filt = lambda x: ndimage.gaussian_filter(x, sigma, truncate=truncate,
                                             mode="nearest")
    K1, K2 = 0.01, 0.03
    C1, C2 = (K1 * data_range) ** 2, (K2 * data_range) ** 2
    ux, uy = filt(a), filt(b)
    uxx, uyy, uxy = filt(a * a), filt(b * b), filt(a * b)
    vx = uxx - ux * ux
    vy = uyy - uy * uy
    vxy = uxy - ux * uy
    S = ((2 * ux * uy + C1) * (2 * vxy + C2)) / (
        (ux * ux + uy * uy + C1) * (vx + vy + C2))
    return float(S[pad:-pad, pad:-pad].mean())


def ssim(a, b, data_range: float = 1.0) -> float:
    """Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5).

    Color images are scored as the mean over channels.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape[0], a.shape[1]) < 11:
        raise ValueError("images must be at least 11x11")
    if a.ndim == 2:
        return _ssim_single(a, b, data_range)
    return float(np.mean([_ssim_single(a[..., c], b[..., c], data_range)
                          for c in range(a.shape[2])]))


@dataclass(frozen=True)
class MtfCurve:
    """Modulation vs spatial frequency (cycles/pixel, 0..0.5)."""

    frequencies: np.ndarray
    modulation: np.ndarray
    orientation: str

    @property
    def area(self) -> float:
        return float(np.trapezoid(self.modulation, self.frequencies))


def _mtf_of_lsf(lsf, spacing_px: float, orientation: str,
                n_freq: int = 257) -> MtfCurve:
    lsf = np.asarray(lsf, dtype=float)
    t = np.arange(lsf.size) * spacing_px
    freqs = np.linspace(0.0, 0.5, n_freq)
    phases = np.exp(-2j * math.pi * freqs[:, None] * t[None, :])
    spectrum = np.abs(phases @ lsf)
    if spectrum[0] == 0:
        raise ValueError("zero-sum line spread function")
    return MtfCurve(freqs, spectrum / spectrum[0], orientation)


def mtf_from_psf(kernel) -> dict:
    """Sagittal/tangential MTF curves of a centered, normalized kernel.

    The line spread function along x (column sums) yields the modulation of
    vertical structure, tagged "sagittal"; row sums yield "tangential".
    The names follow the convention of field points sampled along the
    horizontal meridian.
    """
    k = np.asarray(kernel, dtype=float)
    if k.size == 0 or k.sum() <= 0:
        raise ValueError("kernel is empty")
    return {
        "sagittal": _mtf_of_lsf(k.sum(axis=0), 1.0, "sagittal"),
        "tangential": _mtf_of_lsf(k.sum(axis=1), 1.0, "tangential"),
    }


def render_slanted_edge(shape, angle_deg: float = 5.0, lo: float = 0.2,
                        hi: float = 0.8, center=None) -> np.ndarray:
    """Near-vertical edge with a 1-pixel linear transition along its normal.

    The soft transition is exactly a box filter of the ideal step, so the
    chart's own spectrum is sinc(pi f) and can be divided out of slanted
    edge measurements.
    """
    H, W = shape
    cy, cx = center if center is not None else ((H - 1) / 2, (W - 1) / 2)
    r, c = np.mgrid[0:H, 0:W]
    slope = math.tan(math.radians(angle_deg))
    d = ((c - cx) - slope * (r - cy)) / math.sqrt(1 + slope * slope)
    coverage = np.clip(0.5 + d, 0.0, 1.0)
    return lo + (hi - lo) * coverage


def slanted_edge_mtf(patch, oversample: int = 4,
                     chart_aperture_correction: bool = True,
                     sample_mask=None) -> MtfCurve:
    """ISO-style e-SFR from a linear image of a near-vertical edge.

    Edge positions are located per row, a line is fit, pixels are projected
    onto the edge normal and binned at 1/oversample px into an oversampled
    ESF; its windowed derivative gives the LSF and the MTF.  The discrete
    derivative is compensated; the chart's 1-px aperture (see
    ``render_slanted_edge``) is divided out when requested.

    ``sample_mask`` restricts the binned samples (e.g. to raw Bayer sites
    of one channel, sidestepping demosaic transfer); the edge line is still
    estimated from the full patch.
    """
    img = np.asarray(patch, dtype=float)
    H, W = img.shape
    if H < 8 or W < 16:
        raise ValueError("edge patch too small")

    grad = np.gradient(img, axis=1)
    w = np.abs(grad)
    cols = np.arange(W)
    denom = w.sum(axis=1)
    if np.any(denom <= 0):
        raise ValueError("rows without edge response")
    centers = (w * cols).sum(axis=1) / denom
    rows = np.arange(H)
    slope, intercept = np.polyfit(rows, centers, 1)

    # Project each pixel onto the edge normal (in pixel units).
    r, c = np.mgrid[0:H, 0:W]
    dist = ((c - (slope * r + intercept)) / math.sqrt(1 + slope * slope)).ravel()
    vals = img.ravel()
    if sample_mask is not None:
        keep = np.asarray(sample_mask, dtype=bool).ravel()
        dist, vals = dist[keep], vals[keep]
    spacing = 1.0 / oversample
    bins = np.round(dist / spacing).astype(int)
    bins -= bins.min()
    esf_sum = np.bincount(bins, weights=vals)
    esf_n = np.bincount(bins)
    esf = np.full(esf_sum.shape, np.nan)
    good = esf_n > 0
    esf[good] = esf_sum[good] / esf_n[good]
    if not good.all():
        idx = np.arange(esf.size)
        esf[~good] = np.interp(idx[~good], idx[good], esf[good])

    lsf = np.zeros_like(esf)
    lsf[1:-1] = (esf[2:] - esf[:-2]) / (2 * spacing)
    peak = int(np.argmax(np.abs(lsf)))
    half = min(peak, lsf.size - 1 - peak)
    window = np.zeros_like(lsf)
    window[peak - half:peak + half + 1] = np.hamming(2 * half + 1)
    curve = _mtf_of_lsf(np.abs(lsf * window), spacing, "sagittal")

    freqs, mtf = curve.frequencies, curve.modulation.copy()
    with np.errstate(invalid="ignore", divide="ignore"):
        # Central-difference derivative response over the oversampled grid.
        arg = 2 * math.pi * freqs * spacing
        d_corr = np.where(freqs > 0, arg / np.sin(arg), 1.0)
        mtf *= d_corr
        if chart_aperture_correction:
            a = math.pi * freqs
            box = np.where(freqs > 0, np.sin(a) / a, 1.0)
            mtf /= box
    return MtfCurve(freqs, mtf, "sagittal")


def ca_curve(grid: PsfGrid) -> dict:
    """Chromatic displacement of R and B kernel centroids relative to G.

    Returns per-cell normalized field positions and centroid distances in
    sensor pixels.
    """
    if grid.channels < 2:
        raise ValueError("need at least two channels")
    rows, cols = grid.rows, grid.cols
    fov = np.zeros((rows, cols))
    disp_r = np.zeros((rows, cols))
    disp_b = np.zeros((rows, cols))
    cy, cx = (rows - 1) / 2, (cols - 1) / 2
    r_max = math.hypot(cy + 0.5, cx + 0.5)
    for r in range(rows):
        for c in range(cols):
            kernel, _ = grid.cell(r, c)
            cents = []
            for ch in range(3):
                k = np.asarray(kernel[ch], dtype=float)
                total = k.sum()
                if total <= 0:
                    raise ValueError(f"degenerate kernel at cell ({r}, {c})")
                iy, ix = np.mgrid[0:k.shape[0], 0:k.shape[1]]
                cents.append(((iy * k).sum() / total, (ix * k).sum() / total))
            fov[r, c] = math.hypot(r - cy, c - cx) / r_max
            disp_r[r, c] = math.hypot(cents[0][0] - cents[1][0],
                                      cents[0][1] - cents[1][1])
            disp_b[r, c] = math.hypot(cents[2][0] - cents[1][0],
                                      cents[2][1] - cents[1][1])
    return {"fov": fov, "r": disp_r, "b": disp_b}
