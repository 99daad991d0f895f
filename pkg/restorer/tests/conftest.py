import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

REPO = Path(__file__).resolve().parents[2]
PRESCRIPTION = REPO / "src" / "lenstrace" / "data" / "cooke_triplet_f50.json"


def _write_png(path, array_u8):
    import cv2

    ok = cv2.imwrite(str(path), array_u8[:, :, ::-1])
    assert ok, f"cannot write {path}"


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """12 aligned pairs built through the simulator's public interfaces:
    the prescription JSON schema, the CLI, and the dataset layout."""
    from scipy import ndimage

    root = tmp_path_factory.mktemp("toy")
    corpus = root / "corpus"
    corpus.mkdir()
    rng = np.random.default_rng(1234)
    for i in range(12):
        smooth = ndimage.gaussian_filter(rng.uniform(0, 1, (90, 120, 3)),
                                         (4, 4, 0))
        smooth = (smooth - smooth.min()) / (np.ptp(smooth) + 1e-9)
        _write_png(corpus / f"{i:02d}.png",
                   np.round(smooth * 255).astype(np.uint8))

    # Reuse the shipped example lens but on a small sensor crop.
    doc = json.loads(PRESCRIPTION.read_text())
    doc["sensor"]["resolution"] = [60, 80]
    lens_path = root / "lens.json"
    lens_path.write_text(json.dumps(doc))

    cache = root / "grid.psfg"
    subprocess.run(
        [sys.executable, "-m", "lenstrace.cli", "psf", "build",
         "--config", str(lens_path), "--grid", "3x4",
         "--pupil-samples", "24", "--out", str(cache)],
        check=True, capture_output=True)

    manifest = root / "manifest.json"
    manifest.write_text(json.dumps({
        "corpus_dir": str(corpus),
        "prescription_path": str(lens_path),
        "psf_cache_path": str(cache),
        "output_dir": str(root / "pairs"),
        "field_grid": [3, 4],
        "seed": 9,
        "crop_px": 48,
        "zero_noise": True,
    }))
    subprocess.run(
        [sys.executable, "-m", "lenstrace.cli", "dataset", str(manifest)],
        check=True, capture_output=True)
    return root / "pairs"
