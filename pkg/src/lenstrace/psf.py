"""Coherent point-spread-function engine.

Every surviving pupil sample is a spherical wavelet carrying the traced
optical path length as its phase; the monochromatic PSF is the squared
magnitude of the wavelet sum on an image-plane grid.  Per-channel
convolution kernels come from weighting the monochromatic PSFs by the
sensor's spectral response and the relative illumination, then box-binning
the fine grid down to the sensor pixel pitch.

Units: mm for geometry, nm for wavelengths; the wave number is 2*pi over
the wavelength expressed in mm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from llvmlite import ir
from numba import njit, prange, types
from numba.extending import intrinsic

from .lens import CHANNELS, LensPrescription, SensorSpec
from .raytrace import (
    Vignetted,
    chief_ray_center,
    probe_beam,
    trace_pupil_points,
)

POLICY_CLASSIC = 0   # K = (1 + cos<D, r>) / 2, the Fresnel inclination factor
POLICY_LITERAL = 1   # K = (cos<n, r> - cos<n, D>) / 2

_POLICIES = {"classic": POLICY_CLASSIC, "literal": POLICY_LITERAL}


def wave_number(wavelength_nm: float) -> float:
    """k = 2*pi/lambda in rad/mm."""
    return 2.0 * math.pi / (wavelength_nm * 1e-6)


def _grid_nodes(count: int, interval: float, center: float) -> np.ndarray:
    return center + (np.arange(count) - (count - 1) / 2.0) * interval


@dataclass(frozen=True)
class PupilGridSpec:
    """Uniform sampling of the pupil plane: ranges, interval, plane normal."""

    range_x: float
    range_y: float
    interval: float
    normal: tuple = (0.0, 0.0, 1.0)
    center: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.interval <= 0:
            raise ValueError("pupil sample interval must be > 0")
        n = np.asarray(self.normal, dtype=float)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("pupil normal must be a unit vector")

    @property
    def counts(self):
        return (
            int(math.ceil(self.range_x / self.interval - 1e-9)),
            int(math.ceil(self.range_y / self.interval - 1e-9)),
        )

    def nodes(self) -> np.ndarray:
        """(M, 2) sample targets, row-major with x varying slowest."""
        nx, ny = self.counts
        xs = _grid_nodes(nx, self.interval, self.center[0])
        ys = _grid_nodes(ny, self.interval, self.center[1])
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel()], axis=1)


@dataclass(frozen=True)
class ImageGridSpec:
    """Image-plane sampling window centered on the chief-ray intersection."""

    range_x: float
    range_y: float
    interval: float
    center: tuple

    def __post_init__(self):
        if self.interval <= 0:
            raise ValueError("image sample interval must be > 0")

    @property
    def counts(self):
        return (
            int(math.ceil(self.range_x / self.interval - 1e-9)),
            int(math.ceil(self.range_y / self.interval - 1e-9)),
        )

    def axes(self):
        nx, ny = self.counts
        return (
            _grid_nodes(nx, self.interval, self.center[0]),
            _grid_nodes(ny, self.interval, self.center[1]),
        )


@dataclass(frozen=True)
class PupilSamples:
    """Surviving wavelet sources on the pupil plane for one field/wavelength."""

    xy: np.ndarray           # (M, 2)
    z_mm: float
    directions: np.ndarray   # (M, 3)
    opl_mm: np.ndarray       # (M,)
    launched: int
    wavelength_nm: float
    normal: tuple = (0.0, 0.0, 1.0)

    @property
    def transmitted_fraction(self) -> float:
        return self.xy.shape[0] / self.launched


@dataclass(frozen=True)
class MonoPsf:
    """Monochromatic PSF intensity on its image grid."""

    intensity: np.ndarray    # (ny, nx), nonnegative
    grid: ImageGridSpec
    wavelength_nm: float
    transmitted_fraction: float


@dataclass(frozen=True)
class SpectralModel:
    """Wavelength set plus per-channel response and relative illumination."""

    wavelengths_nm: np.ndarray
    response: dict                      # channel -> array over wavelengths
    illumination: object = None         # RelativeIllumination or None

    @classmethod
    def from_sensor(cls, sensor: SensorSpec):
        return cls(sensor.wavelengths_nm, sensor.spectral_response,
                   sensor.relative_illumination)


def obliquity(direction, r, normal=(0.0, 0.0, 1.0), policy="classic") -> float:
    """Angular amplitude weight of a secondary wavelet propagating along r."""
    d = np.asarray(direction, dtype=float)
    r = np.asarray(r, dtype=float)
    n = np.asarray(normal, dtype=float)
    rn = np.linalg.norm(r)
    if rn == 0:
        raise ValueError("degenerate propagation vector")
    if _POLICIES[policy] == POLICY_CLASSIC:
        return 0.5 * (1.0 + float(np.dot(d, r)) / rn)
    return 0.5 * (float(np.dot(n, r)) / rn - float(np.dot(n, d)))


def wavelet_field(sample, image_point, k, normal=(0.0, 0.0, 1.0),
                  policy="classic") -> complex:
    """Complex amplitude of one pupil wavelet at an image-plane point.

    ``sample`` needs ``pupil_xy``, ``pupil_z_mm``, ``direction`` and
    ``path_length_mm`` attributes (a ``TraceResult`` fits).  The amplitude
    at unit distance is 1; intensities are in arbitrary units.
    """
    x, y = sample.pupil_xy
    r = np.asarray(image_point, dtype=float) - np.array([x, y, sample.pupil_z_mm])
    rn = float(np.linalg.norm(r))
    if rn == 0:
        raise ValueError("image point coincides with the pupil sample")
    K = obliquity(sample.direction, r, normal, policy)
    l = sample.path_length_mm
    return K / (l * rn) * complex(math.cos(k * (l + rn)), math.sin(k * (l + rn)))


@intrinsic
def _fma(typingctx, a, b, c):
    """Fused multiply-add; kept out of fastmath reassociation on purpose."""
    sig = types.float64(types.float64, types.float64, types.float64)

    def codegen(context, builder, signature, args):
        d = ir.DoubleType()
        fn = builder.module.declare_intrinsic(
            "llvm.fma", [d], ir.FunctionType(d, [d, d, d]))
        return builder.call(fn, args)

    return sig, codegen


# Argument reduction and kernel polynomials for the inlined sincos (fdlibm
# minimax coefficients; accurate to 1 ulp after Cody-Waite reduction with
# fma-protected steps).  The hot loop avoids libm calls so it vectorizes.
_PIO2_HI = 1.5707963267948966
_PIO2_LO = 6.123233995736766e-17
_TWO_OVER_PI = 2.0 / math.pi
_S1, _S2, _S3, _S4, _S5, _S6 = (
    -1.66666666666666324348e-01, 8.33333333332248946124e-03,
    -1.98412698298579493134e-04, 2.75573137070700676789e-06,
    -2.50507602534068634195e-08, 1.58969099521155010221e-10)
_C1, _C2, _C3, _C4, _C5, _C6 = (
    4.16666666666666019037e-02, -1.38888888888741095749e-03,
    2.48015872894767294178e-05, -2.75573143513906633035e-07,
    2.08757232129817482790e-09, -1.13596475577881948265e-11)


@njit(parallel=True, cache=True, fastmath=True)
def _superpose(px, py, pz, dx, dy, dz, amp, phase_l, xs, ys, z_img, k,
               policy, nx, ny, nz):  # pragma: no cover - executed via dispatch
    out = np.empty((ys.size, xs.size), np.complex128)
    rz = z_img - pz
    rz2 = rz * rz
    for iy in prange(ys.size):
        y = ys[iy]
        for ix in range(xs.size):
            x = xs[ix]
            sre = 0.0
            sim = 0.0
            for m in range(px.size):
                rx = x - px[m]
                ry = y - py[m]
                rn = math.sqrt(rx * rx + ry * ry + rz2)
                if policy == 0:
                    K = 0.5 * (1.0 + (dx[m] * rx + dy[m] * ry + dz[m] * rz) / rn)
                else:
                    K = 0.5 * ((nx * rx + ny * ry + nz * rz) / rn
                               - (nx * dx[m] + ny * dy[m] + nz * dz[m]))
                ph = k * (phase_l[m] + rn)
                j = float(math.floor(ph * _TWO_OVER_PI + 0.5))
                r = _fma(-j, _PIO2_LO, _fma(-j, _PIO2_HI, ph))
                z2 = r * r
                sn = r + r * z2 * (_S1 + z2 * (_S2 + z2 * (_S3 + z2 * (
                    _S4 + z2 * (_S5 + z2 * _S6)))))
                cs = 1.0 - 0.5 * z2 + z2 * z2 * (_C1 + z2 * (_C2 + z2 * (
                    _C3 + z2 * (_C4 + z2 * (_C5 + z2 * _C6)))))
                q = int(j) & 3
                sw = q & 1
                sgn_s = 1.0 - 2.0 * ((q >> 1) & 1)
                sgn_c = 1.0 - 2.0 * (((q + 1) >> 1) & 1)
                sin_v = sgn_s * (cs if sw else sn)
                cos_v = sgn_c * (sn if sw else cs)
                a = amp[m] * K / rn
                sre += a * cos_v
                sim += a * sin_v
            out[iy, ix] = complex(sre, sim)
    return out


def superpose_field(samples: PupilSamples, grid: ImageGridSpec, z_image: float,
                    k: float, policy="classic", phase_l=None) -> np.ndarray:
    """Sum all wavelets onto the image grid; returns the complex field.

    ``phase_l`` overrides the per-sample path length used in the phase term
    (the 1/l amplitude always uses the traced value); this is how the
    zero-aberration reference is built.
    """
    if samples.xy.shape[0] == 0:
        raise Vignetted("no surviving pupil samples")
    xs, ys = grid.axes()
    amp = 1.0 / samples.opl_mm
    pl = samples.opl_mm if phase_l is None else np.asarray(phase_l, dtype=float)
    n = np.asarray(samples.normal, dtype=float)
    return _superpose(
        np.ascontiguousarray(samples.xy[:, 0]),
        np.ascontiguousarray(samples.xy[:, 1]),
        samples.z_mm,
        np.ascontiguousarray(samples.directions[:, 0]),
        np.ascontiguousarray(samples.directions[:, 1]),
        np.ascontiguousarray(samples.directions[:, 2]),
        np.ascontiguousarray(amp),
        np.ascontiguousarray(pl),
        np.ascontiguousarray(xs),
        np.ascontiguousarray(ys),
        z_image,
        k,
        _POLICIES[policy],
        n[0], n[1], n[2],
    )


def pupil_samples(prescription: LensPrescription, object_point, wavelength_nm,
                  pupil: PupilGridSpec) -> PupilSamples:
    """Trace the pupil grid for one object point; keep surviving samples.

    Sample order is row-major in the grid (x slowest), matching a literal
    nested loop over the pupil coordinates.
    """
    targets = pupil.nodes()
    res = trace_pupil_points(prescription, object_point, targets, wavelength_nm)
    alive = res["alive"]
    if not alive.any():
        raise Vignetted("all pupil samples vignetted")
    return PupilSamples(
        xy=res["pupil"][alive],
        z_mm=prescription.exit_pupil_z_mm,
        directions=res["direction"][alive],
        opl_mm=res["opl"][alive],
        launched=targets.shape[0],
        wavelength_nm=wavelength_nm,
        normal=pupil.normal,
    )


def psf_from_samples(samples: PupilSamples, grid: ImageGridSpec, z_image: float,
                     policy="classic") -> MonoPsf:
    k = wave_number(samples.wavelength_nm)
    E = superpose_field(samples, grid, z_image, k, policy)
    return MonoPsf(
        intensity=(E * E.conjugate()).real,
        grid=grid,
        wavelength_nm=samples.wavelength_nm,
        transmitted_fraction=samples.transmitted_fraction,
    )


def reference_from_samples(samples: PupilSamples, grid: ImageGridSpec,
                           z_image: float, policy="classic") -> MonoPsf:
    """Aberration-free twin: wavelet phases flattened at the grid center."""
    k = wave_number(samples.wavelength_nm)
    cx, cy = grid.center
    r_c = np.sqrt(
        (cx - samples.xy[:, 0]) ** 2
        + (cy - samples.xy[:, 1]) ** 2
        + (z_image - samples.z_mm) ** 2
    )
    const = float(np.max(samples.opl_mm + r_c))
    E = superpose_field(samples, grid, z_image, k, policy, phase_l=const - r_c)
    return MonoPsf(
        intensity=(E * E.conjugate()).real,
        grid=grid,
        wavelength_nm=samples.wavelength_nm,
        transmitted_fraction=samples.transmitted_fraction,
    )


def psf_monochromatic(prescription: LensPrescription, object_point,
                      wavelength_nm, pupil: PupilGridSpec,
                      image: ImageGridSpec, policy="classic") -> MonoPsf:
    """Algorithm entry point: trace the pupil grid, superpose, square."""
    samples = pupil_samples(prescription, object_point, wavelength_nm, pupil)
    return psf_from_samples(samples, image, prescription.image_plane_z_mm, policy)


def strehl(psf: MonoPsf, reference: MonoPsf) -> float:
    """Peak ratio against the zero-aberration PSF of the same pupil."""
    if psf.intensity.shape != reference.intensity.shape:
        raise ValueError("PSF and reference grids differ")
    peak_ref = float(reference.intensity.max())
    if peak_ref <= 0:
        raise ValueError("reference peak is zero")
    ratio = float(psf.intensity.max()) / peak_ref
    return min(ratio, 1.0) if ratio <= 1.0 + 1e-6 else ratio


def synthetic_pupil(fnumber: float, wavelength_nm: float, pupil_radius_mm=2.0,
                    n_samples=128) -> tuple:
    """Ideal aberration-free converging pupil (for oracles and baselines).

    Returns (samples, z_image): a disc of wavelets whose phases agree
    exactly at the focus (0, 0, z_image) with z_image = 2 * radius * N.
    """
    a = pupil_radius_mm
    z_f = 2.0 * a * fnumber
    u = _grid_nodes(n_samples, 2.0 * a / n_samples, 0.0)
    gx, gy = np.meshgrid(u, u, indexing="ij")
    inside = gx**2 + gy**2 <= a**2
    xy = np.stack([gx[inside], gy[inside]], axis=1)
    to_focus = np.concatenate(
        [-xy, np.full((xy.shape[0], 1), z_f)], axis=1
    )
    dist = np.linalg.norm(to_focus, axis=1)
    dirs = to_focus / dist[:, None]
    opl = 2.0 * z_f - dist  # constant total phase at the focus
    samples = PupilSamples(
        xy=xy, z_mm=0.0, directions=dirs, opl_mm=opl,
        launched=n_samples * n_samples, wavelength_nm=wavelength_nm,
    )
    return samples, z_f


# ---------------------------------------------------------------------------
# Spectral weighting and the field-grid kernel assembly


def spectral_weight(fov: float, wavelength_nm: float, model: SpectralModel,
                    channel: str) -> float:
    """C_e(fov, lambda): relative illumination times channel wave response."""
    wl = model.wavelengths_nm
    hits = np.nonzero(np.isclose(wl, wavelength_nm))[0]
    if hits.size == 0:
        raise ValueError(f"{wavelength_nm} nm is not in the spectral model")
    c_wav = float(model.response[channel][hits[0]])
    c_ill = 1.0
    if model.illumination is not None:
        c_ill = model.illumination.value(fov, wavelength_nm)
    return c_ill * c_wav


def assemble_channel_kernels(monos, model: SpectralModel, fov: float,
                             reference_sums=None, illumination_override=None):
    """Combine per-wavelength PSFs into per-channel kernels.

    Each wavelength contributes ``C_e * transmitted_fraction`` times its
    unit-normalized intensity; the kernel is renormalized to unit sum
    afterwards.  The pre-normalization totals divided by the on-axis cell's
    totals (``reference_sums``) give the illumination weights.

    ``illumination_override`` supplies per-wavelength illumination factors
    when the sensor carries no calibrated table (the raw-energy fallback).

    Returns (kernels, weights, sums): dicts keyed by channel; kernels are on
    the shared fine grid of the inputs.
    """
    if len(monos) != model.wavelengths_nm.size:
        raise ValueError("need one monochromatic PSF per model wavelength")
    shape = monos[0].intensity.shape
    kernels, weights, sums = {}, {}, {}
    for ch in CHANNELS:
        if float(np.sum(model.response[ch])) <= 0:
            raise ValueError(f"channel {ch!r} has all-zero response")
        acc = np.zeros(shape)
        total = 0.0
        for i, mono in enumerate(monos):
            wl = float(model.wavelengths_nm[i])
            if mono.intensity.shape != shape:
                raise ValueError("monochromatic PSFs are not co-registered")
            if illumination_override is not None:
                c_e = illumination_override[i] * float(model.response[ch][i])
            else:
                c_e = spectral_weight(fov, wl, model, ch)
            w = c_e * mono.transmitted_fraction
            s = float(mono.intensity.sum())
            if w > 0 and s > 0:
                acc += (w / s) * mono.intensity
                total += w
        if total <= 0:
            raise ValueError(f"channel {ch!r} received no energy")
        kernels[ch] = acc / acc.sum()
        sums[ch] = total
        weights[ch] = 1.0 if reference_sums is None else total / reference_sums[ch]
    return kernels, weights, sums


def bin_to_pixels(fine: np.ndarray, oversample: int) -> np.ndarray:
    """Box-integrate an oversampled kernel down to the pixel pitch."""
    ny, nx = fine.shape
    if ny % oversample or nx % oversample:
        raise ValueError("fine grid is not a whole multiple of the pixel pitch")
    return fine.reshape(ny // oversample, oversample,
                        nx // oversample, oversample).sum(axis=(1, 3))


def crop_window(kernel: np.ndarray, keep_energy=0.999, cap=129):
    """Smallest odd centered (half_y, half_x) window with ``keep_energy``."""
    ny, nx = kernel.shape
    cy, cx = ny // 2, nx // 2
    total = kernel.sum()
    # Shrink each axis independently against the marginal energy profiles.
    row_e = kernel.sum(axis=1)
    col_e = kernel.sum(axis=0)
    target = math.sqrt(keep_energy)

    def half_for(profile, center, limit):
        cum = 0.0
        for half in range(limit + 1):
            lo, hi = center - half, center + half
            cum = profile[max(lo, 0):hi + 1].sum()
            if cum >= target * total:
                return half
        return limit

    half_y = half_for(row_e, cy, min(cy, (cap - 1) // 2))
    half_x = half_for(col_e, cx, min(cx, (cap - 1) // 2))
    # Grow together until the joint window really holds keep_energy.
    while kernel[cy - half_y:cy + half_y + 1,
                 cx - half_x:cx + half_x + 1].sum() < keep_energy * total:
        grew = False
        if half_y < min(cy, (cap - 1) // 2):
            half_y += 1
            grew = True
        if half_x < min(cx, (cap - 1) // 2):
            half_x += 1
            grew = True
        if not grew:
            break
    return half_y, half_x


@dataclass
class PsfGrid:
    """Per-cell, per-channel sensor-pitch kernels plus illumination weights.

    ``kernels[r][c]`` is a (channels, h, w) array with odd h, w and unit sum
    per channel (before illumination weighting); ``weights`` is
    (rows, cols, channels) float32 relative to the on-axis field point.
    Freshly computed grids hold float64 kernels; the binary cache stores and
    returns float32.
    """

    rows: int
    cols: int
    patch_px: int
    kernels: list          # kernels[r][c] -> float32 (channels, h, w)
    weights: np.ndarray    # float32 (rows, cols, channels)
    version: int = 1

    @property
    def channels(self) -> int:
        return self.weights.shape[2]

    @property
    def max_kernel(self) -> int:
        return max(max(k.shape[1], k.shape[2]) for row in self.kernels for k in row)

    def cell(self, r: int, c: int):
        return self.kernels[r][c], self.weights[r, c]


def delta_psf_grid(rows: int, cols: int, patch_px: int,
                   channels: int = 3) -> PsfGrid:
    """Identity grid: centered single-pixel kernels, unit weights."""
    kernel = np.zeros((channels, 1, 1))
    kernel[:, 0, 0] = 1.0
    kernels = [[kernel.copy() for _ in range(cols)] for _ in range(rows)]
    weights = np.ones((rows, cols, channels), dtype=np.float32)
    return PsfGrid(rows=rows, cols=cols, patch_px=patch_px,
                   kernels=kernels, weights=weights)


def _odd_window_px(full_extent_mm: float, one_sided_mm: float, pitch_mm: float,
                   minimum=5, cap=129) -> int:
    """Compute window size as 1.5x the raytraced spot extent (odd pixels).

    The one-sided deviation from the chief point guards against strongly
    asymmetric (comatic) spots whose hull sits mostly on one side.
    """
    range_mm = max(1.5 * full_extent_mm, 2.2 * one_sided_mm)
    px = int(math.ceil(range_mm / pitch_mm))
    px = max(px, minimum)
    if px % 2 == 0:
        px += 1
    return min(px, cap)


def _conjugate_object_point(prescription, target_xy, wavelength_nm,
                            magnification, tol_mm=1e-9):
    """Object point whose chief ray lands at ``target_xy`` on the sensor.

    The tolerance is far below a pixel so kernels of mirrored field points
    stay registered to the same sub-sample phase.
    """
    z_obj = prescription.object_z_mm
    obj = np.asarray(target_xy, dtype=float) / magnification
    for _ in range(20):
        hit = np.array(chief_ray_center(
            prescription, (obj[0], obj[1], z_obj), wavelength_nm))
        err = hit - target_xy
        if np.linalg.norm(err) <= tol_mm:
            break
        obj -= err / magnification
    return (float(obj[0]), float(obj[1]), z_obj)


def _chief_magnification(prescription, wavelength_nm) -> float:
    probe_y = prescription.object_distance_mm * 1e-3
    hit = chief_ray_center(prescription, (0.0, probe_y, prescription.object_z_mm),
                           wavelength_nm)
    return hit[1] / probe_y


def _field_windows(prescription, object_point, wavelengths, center_ref,
                   pitch_mm, pupil_samples_n, oversample, max_kernel_px):
    """Size the pupil and image sampling windows from probe raytraces."""
    center_ref = np.asarray(center_ref, dtype=float)
    lo = np.array([np.inf, np.inf])
    hi = -np.array([np.inf, np.inf])
    spot_lo = np.array([np.inf, np.inf])
    spot_hi = -np.array([np.inf, np.inf])
    one_sided = np.zeros(2)
    for wl in wavelengths:
        pr = probe_beam(prescription, object_point, wl, n_fan=13)
        lo = np.minimum(lo, pr["pupil"].min(axis=0))
        hi = np.maximum(hi, pr["pupil"].max(axis=0))
        spot_lo = np.minimum(spot_lo, pr["image"].min(axis=0))
        spot_hi = np.maximum(spot_hi, pr["image"].max(axis=0))
        one_sided = np.maximum(one_sided, np.abs(pr["image"] - center_ref).max(axis=0))

    window_px = tuple(
        _odd_window_px(spot_hi[a] - spot_lo[a], one_sided[a], pitch_mm,
                       cap=max_kernel_px)
        for a in range(2)
    )
    grid = ImageGridSpec(
        range_x=window_px[0] * pitch_mm, range_y=window_px[1] * pitch_mm,
        interval=pitch_mm / oversample,
        center=(float(center_ref[0]), float(center_ref[1])),
    )
    span = np.maximum(hi - lo, 1e-6) * 1.02
    pupil = PupilGridSpec(
        range_x=float(span[0]), range_y=float(span[1]),
        interval=float(max(span) / pupil_samples_n),
        center=(float((lo[0] + hi[0]) / 2), float((lo[1] + hi[1]) / 2)),
    )
    return pupil, grid, window_px


def _field_psfs(prescription, object_point, wavelengths, center_ref, pitch_mm,
                pupil_samples_n, oversample, policy, max_kernel_px):
    """All monochromatic PSFs for one field point on a common pixel-aligned
    grid centered at the reference-wavelength chief intersection."""
    pupil, grid, window_px = _field_windows(
        prescription, object_point, wavelengths, center_ref, pitch_mm,
        pupil_samples_n, oversample, max_kernel_px)
    monos = [
        psf_monochromatic(prescription, object_point, wl, pupil, grid,
                          policy=policy)
        for wl in wavelengths
    ]
    return monos, grid, window_px


def strehl_ladder(prescription: LensPrescription, fovs,
                  wavelength_nm: float = 550.0, pupil_samples_n: int = 64,
                  policy="classic") -> list:
    """Strehl ratio at normalized field positions along the +x meridian."""
    pitch = prescription.sensor.pitch_mm
    half_diag = prescription.sensor.half_diagonal_mm
    mag = _chief_magnification(prescription, wavelength_nm)
    values = []
    for fov in fovs:
        target = np.array([fov * half_diag, 0.0])
        obj = _conjugate_object_point(prescription, target, wavelength_nm, mag)
        center = chief_ray_center(prescription, obj, wavelength_nm)
        pupil, grid, _ = _field_windows(
            prescription, obj, [wavelength_nm], center, pitch,
            pupil_samples_n, 10, 129)
        samples = pupil_samples(prescription, obj, wavelength_nm, pupil)
        psf = psf_from_samples(samples, grid, prescription.image_plane_z_mm, policy)
        ref = reference_from_samples(samples, grid, prescription.image_plane_z_mm,
                                     policy)
        values.append(strehl(psf, ref))
    return values


def compute_psf_grid(prescription: LensPrescription, sensor: SensorSpec,
                     field_grid, wavelengths=None, pupil_samples_n=128,
                     oversample=10, policy="classic", max_kernel_px=129,
                     keep_energy=0.999, reference_wavelength=550.0,
                     progress=None, cells=None) -> PsfGrid:
    """Compute the full field grid of per-channel convolution kernels.

    ``field_grid`` is (rows, cols); the sensor resolution must tile evenly
    into that many square patches.  Kernels are computed at a fine interval
    of ``pitch / oversample``, box-binned to the pixel pitch, cropped to the
    minimal odd window holding ``keep_energy`` of their energy, and unit
    normalized.  Illumination weights fall back to raw transmitted energy
    relative to the on-axis field point when the sensor has no calibrated
    table.

    ``cells`` (flat row-major indices) restricts computation to a subset;
    the remaining cells hold unit delta kernels.  Used for spot checks.
    """
    rows, cols = field_grid
    H, W = sensor.resolution
    if H % rows or W % cols or (H // rows) != (W // cols):
        raise ValueError(
            f"field grid {rows}x{cols} does not tile {H}x{W} into square patches"
        )
    patch = H // rows
    pitch = sensor.pitch_mm
    model = SpectralModel.from_sensor(sensor)
    wavelengths = (
        [float(w) for w in sensor.wavelengths_nm]
        if wavelengths is None else [float(w) for w in wavelengths]
    )
    if list(wavelengths) != [float(w) for w in sensor.wavelengths_nm]:
        raise ValueError("wavelengths must match the sensor spectral sampling")
    ref_wl = min(wavelengths, key=lambda w: abs(w - reference_wavelength))
    mag = _chief_magnification(prescription, ref_wl)
    half_diag = sensor.half_diagonal_mm
    use_table = sensor.relative_illumination is not None

    def field_kernels(target_xy, fov, reference=None):
        obj = _conjugate_object_point(prescription, np.asarray(target_xy),
                                      ref_wl, mag)
        center = chief_ray_center(prescription, obj, ref_wl)
        monos, grid, window_px = _field_psfs(
            prescription, obj, wavelengths, center, pitch,
            pupil_samples_n, oversample, policy, max_kernel_px)
        # Without a calibrated shading table, weight each wavelength by its
        # raw transmitted energy; the on-axis ratio then reduces to
        # (T * sum I) / (T0 * sum I0) per channel.
        raw_sums = np.array([m.intensity.sum() for m in monos])
        override = None if use_table else raw_sums
        fine, weights, sums = assemble_channel_kernels(
            monos, model, fov,
            reference_sums=None if reference is None else reference["sums"],
            illumination_override=override,
        )
        binned = {ch: bin_to_pixels(fine[ch], oversample) for ch in CHANNELS}
        # Common odd crop window across channels, then renormalize.
        half_y = half_x = 0
        for ch in CHANNELS:
            hy, hx = crop_window(binned[ch], keep_energy, max_kernel_px)
            half_y, half_x = max(half_y, hy), max(half_x, hx)
        ny, nx = binned[CHANNELS[0]].shape
        sy = slice(ny // 2 - half_y, ny // 2 + half_y + 1)
        sx = slice(nx // 2 - half_x, nx // 2 + half_x + 1)
        stack = np.stack([binned[ch][sy, sx] for ch in CHANNELS])
        stack /= stack.sum(axis=(1, 2), keepdims=True)
        return {
            "kernel": stack,
            "weights": np.array([weights[ch] for ch in CHANNELS]),
            "sums": sums,
        }

    reference = field_kernels((0.0, 0.0), 0.0)

    selected = None if cells is None else set(int(i) for i in cells)
    placeholder = np.zeros((len(CHANNELS), 1, 1))
    placeholder[:, 0, 0] = 1.0
    kernels = [[None] * cols for _ in range(rows)]
    weights = np.ones((rows, cols, len(CHANNELS)), dtype=np.float32)
    for r in range(rows):
        for c in range(cols):
            if selected is not None and r * cols + c not in selected:
                kernels[r][c] = placeholder.copy()
                continue
            # +y is down the rows, +x along the columns.
            y = (((r + 0.5) * patch - 0.5) - (H - 1) / 2) * pitch
            x = (((c + 0.5) * patch - 0.5) - (W - 1) / 2) * pitch
            fov = min(math.hypot(x, y) / half_diag, 1.0)
            cellres = field_kernels((x, y), fov, reference)
            kernels[r][c] = cellres["kernel"]
            weights[r, c] = np.minimum(cellres["weights"], 1.0)
            if progress is not None:
                progress(r, c)
    return PsfGrid(rows=rows, cols=cols, patch_px=patch,
                   kernels=kernels, weights=weights)
