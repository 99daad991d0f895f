"""Batch generation of aligned degraded/clean training pairs.

A manifest names a clean-image corpus, a lens/sensor prescription, a PSF
cache, and an output directory.  Every corpus image is resampled to the
sensor resolution (center-crop to aspect, bilinear resize), stored as the
ground truth, and rendered through the imaging pipeline as the degraded
input.  A two-channel FOV map holding each pixel's normalized sensor
coordinates in [-1, 1] is stored as 16-bit fixed point.  Regeneration from
the same manifest is bit-identical.

Output layout::

    out/
      gt/NNNN.png      8-bit ground truth at sensor resolution
      input/NNNN.png   8-bit degraded render
      fov/NNNN.png     16-bit, channels (x, y, 0) fixed-point in [-1, 1]
      manifest.json    echo of the generation parameters and per-image seeds
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import isp
from .lens import LensPrescription, load_prescription
from .psf import PsfGrid, compute_psf_grid
from .psf_io import PsfCacheError, dump_psf_grid, load_psf_grid

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


@dataclass(frozen=True)
class DatasetManifest:
    """Everything needed to (re)generate one dataset deterministically."""

    corpus_dir: str
    prescription_path: str
    psf_cache_path: str
    output_dir: str
    field_grid: tuple            # (rows, cols)
    seed: int = 0
    crop_px: int = 256           # training crop size consumed by the trainer
    pupil_samples: int = 64
    color_temps: tuple | None = None
    shot_range: tuple = (1e-4, 1e-2)
    read_range: tuple = (1e-6, 1e-4)
    zero_noise: bool = False
    demosaic_method: str = "malvar2004"


def load_manifest(path) -> DatasetManifest:
    with open(path) as fh:
        doc = json.load(fh)
    try:
        return DatasetManifest(
            corpus_dir=doc["corpus_dir"],
            prescription_path=doc["prescription_path"],
            psf_cache_path=doc["psf_cache_path"],
            output_dir=doc["output_dir"],
            field_grid=tuple(doc["field_grid"]),
            seed=int(doc.get("seed", 0)),
            crop_px=int(doc.get("crop_px", 256)),
            pupil_samples=int(doc.get("pupil_samples", 64)),
            color_temps=tuple(doc["color_temps"]) if doc.get("color_temps") else None,
            shot_range=tuple(doc.get("shot_range", (1e-4, 1e-2))),
            read_range=tuple(doc.get("read_range", (1e-6, 1e-4))),
            zero_noise=bool(doc.get("zero_noise", False)),
            demosaic_method=doc.get("demosaic_method", "malvar2004"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"manifest malformed: {exc}") from exc


def build_fov_map(height: int, width: int) -> np.ndarray:
    """(H, W, 2) map of normalized (x, y) sensor coordinates in [-1, 1]."""
    if height < 1 or width < 1:
        raise ValueError("dimensions must be positive")
    x = 2.0 * np.arange(width) / (width - 1) - 1.0 if width > 1 else np.zeros(1)
    y = 2.0 * np.arange(height) / (height - 1) - 1.0 if height > 1 else np.zeros(1)
    return np.stack(np.meshgrid(x, y, indexing="xy"), axis=-1)


def encode_fov(fov_map: np.ndarray) -> np.ndarray:
    """[-1, 1] floats -> u16 fixed point."""
    return np.round((np.clip(fov_map, -1.0, 1.0) + 1.0) / 2.0 * 65535.0).astype(np.uint16)


def decode_fov(encoded: np.ndarray) -> np.ndarray:
    return encoded.astype(np.float64) * (2.0 / 65535.0) - 1.0


def prepare_frame(image: np.ndarray, resolution, upsample: float = 1.0) -> np.ndarray:
    """Center-crop to the sensor aspect and resize to sensor resolution.

    ``upsample`` > 1 crops tighter first, band-limiting the result (useful
    when corpus images are not much larger than the sensor).
    """
    import cv2

    H, W = resolution
    img = np.asarray(image, dtype=float)
    if img.ndim == 2:
        img = img[:, :, None].repeat(3, axis=2)
    ch, cw = max(int(round(H / upsample)), 8), max(int(round(W / upsample)), 8)
    h0, w0 = img.shape[:2]
    scale = max(ch / h0, cw / w0)
    if scale > 1.0:
        img = cv2.resize(img, (int(np.ceil(w0 * scale)), int(np.ceil(h0 * scale))),
                         interpolation=cv2.INTER_LINEAR)
        h0, w0 = img.shape[:2]
    y0, x0 = (h0 - ch) // 2, (w0 - cw) // 2
    crop = img[y0:y0 + ch, x0:x0 + cw]
    out = cv2.resize(crop, (W, H), interpolation=cv2.INTER_LINEAR)
    return np.clip(out, 0.0, 1.0)


def ensure_psf_cache(manifest: DatasetManifest,
                     prescription: LensPrescription | None = None) -> PsfGrid:
    """Load the named cache, building it first when absent."""
    if prescription is None:
        prescription = load_prescription(manifest.prescription_path)
    path = Path(manifest.psf_cache_path)
    if not path.exists():
        grid = compute_psf_grid(prescription, prescription.sensor,
                                manifest.field_grid,
                                pupil_samples_n=manifest.pupil_samples)
        path.parent.mkdir(parents=True, exist_ok=True)
        dump_psf_grid(grid, path)
        return grid
    grid = load_psf_grid(path)
    rows, cols = manifest.field_grid
    if (grid.rows, grid.cols) != (rows, cols):
        raise PsfCacheError(
            f"cache is {grid.rows}x{grid.cols}, manifest wants {rows}x{cols}")
    return grid


def _corpus_files(corpus_dir) -> list:
    files = sorted(
        p for p in Path(corpus_dir).iterdir()
        if p.suffix.lower() in IMAGE_EXTENSIONS
    )
    if not files:
        raise ValueError(f"corpus {corpus_dir} holds no images")
    return files


def generate_dataset(manifest: DatasetManifest, progress=None) -> dict:
    """Render the corpus into aligned (gt, input, fov) triples on disk."""
    prescription = load_prescription(manifest.prescription_path)
    sensor = prescription.sensor
    H, W = sensor.resolution
    if manifest.crop_px > min(H, W):
        raise ValueError("training crop exceeds the sensor resolution")
    grid = ensure_psf_cache(manifest, prescription)
    files = _corpus_files(manifest.corpus_dir)

    out = Path(manifest.output_dir)
    for sub in ("gt", "input", "fov"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    fov_encoded = encode_fov(build_fov_map(H, W))
    fov_png = np.concatenate(
        [fov_encoded, np.zeros((H, W, 1), dtype=np.uint16)], axis=2)

    records = []
    for i, path in enumerate(files):
        image = isp.read_image_srgb(path)
        gt = prepare_frame(image, (H, W))
        seed = manifest.seed + i
        config = isp.SimulationConfig(
            seed=seed,
            color_temps=manifest.color_temps,
            shot_range=manifest.shot_range,
            read_range=manifest.read_range,
            noise=isp.NoiseParams(0.0, 0.0) if manifest.zero_noise else None,
            demosaic_method=manifest.demosaic_method,
        )
        degraded = isp.simulate_image(gt, grid, sensor, config)
        name = f"{i:04d}.png"
        isp.write_image_srgb(out / "gt" / name, gt, bits=8)
        isp.write_image_srgb(out / "input" / name, degraded, bits=8)
        _write_png_u16(out / "fov" / name, fov_png)
        records.append({"name": name, "source": str(path), "seed": seed})
        if progress is not None:
            progress(i, len(files))

    summary = {
        "manifest": asdict(manifest),
        "sensor_resolution": [H, W],
        "crop_px": manifest.crop_px,
        "images": records,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(summary, fh, indent=1)
    return summary


def _write_png_u16(path, data: np.ndarray) -> None:
    import cv2

    bgr = data[:, :, ::-1] if data.ndim == 3 else data
    if not cv2.imwrite(str(path), bgr):
        raise IOError(f"cannot write {path}")


def read_fov_png(path) -> np.ndarray:
    """Decode a stored FOV map back to (H, W, 2) floats in [-1, 1]."""
    import cv2

    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None or data.dtype != np.uint16:
        raise IOError(f"cannot read 16-bit FOV map {path}")
    rgb = data[:, :, ::-1]
    return decode_fov(rgb[:, :, :2])


# ---------------------------------------------------------------------------
# PSF cache build / verify entry points


def build_psf_cache(prescription: LensPrescription, field_grid, path,
                    pupil_samples: int = 64, progress=None) -> PsfGrid:
    grid = compute_psf_grid(prescription, prescription.sensor, field_grid,
                            pupil_samples_n=pupil_samples, progress=progress)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    dump_psf_grid(grid, path)
    return grid


def verify_psf_cache(path, prescription: LensPrescription,
                     pupil_samples: int = 64, fraction: float = 0.01,
                     tolerance: float = 1e-6) -> dict:
    """Checksum-validate a cache and recompute a deterministic cell sample.

    Raises ``PsfCacheError`` on checksum/version mismatch or when any
    recomputed kernel deviates by more than ``tolerance``.
    """
    grid = load_psf_grid(path)
    n_cells = grid.rows * grid.cols
    n_check = max(1, int(round(fraction * n_cells)))
    step = max(1, n_cells // n_check)
    picks = list(range(0, n_cells, step))[:n_check]

    reference = compute_psf_grid(
        prescription, prescription.sensor, (grid.rows, grid.cols),
        pupil_samples_n=pupil_samples, cells=picks)
    worst = 0.0
    for idx in picks:
        r, c = divmod(idx, grid.cols)
        got_k, got_w = grid.cell(r, c)
        want_k, want_w = reference.cell(r, c)
        if got_k.shape != want_k.shape:
            raise PsfCacheError(f"cell ({r}, {c}) kernel shape mismatch")
        worst = max(
            worst,
            float(np.abs(got_k.astype(np.float64)
                         - want_k.astype(np.float32).astype(np.float64)).max()),
            float(np.abs(got_w.astype(np.float64) - want_w).max()),
        )
    if worst > tolerance:
        raise PsfCacheError(f"cache deviates by {worst:.3g} (> {tolerance:g})")
    return {"cells_checked": picks, "max_deviation": worst}
