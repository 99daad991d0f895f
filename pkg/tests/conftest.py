import copy
import json
import time
from pathlib import Path

import numpy as np
import pytest

from lenstrace import lens, psf

DATA = Path(__file__).resolve().parents[1] / "src" / "lenstrace" / "data"
TRIPLET = DATA / "cooke_triplet_f50.json"


@pytest.fixture(scope="session")
def triplet():
    return lens.load_prescription(TRIPLET)


@pytest.fixture(scope="session")
def triplet_doc():
    with open(TRIPLET) as fh:
        return json.load(fh)


def make_flat_window(object_distance=10.0, thickness=2.0, gap=10.0, n=1.5):
    """Plane-parallel glass window with the stop on the first face."""
    doc = {
        "surfaces": [
            {"curvature": 0.0, "semi_diameter": 5.0, "thickness": thickness,
             "material": "glass", "is_stop": True},
            {"curvature": 0.0, "semi_diameter": 5.0, "thickness": gap,
             "material": "air"},
            {"curvature": 0.0, "semi_diameter": 8.0, "thickness": 0.0,
             "material": "air"},
        ],
        "materials": {"glass": {"table": [[400.0, n], [700.0, n]]}},
        "object_distance_mm": object_distance,
        "exit_pupil_z_mm": thickness + gap / 2,
        "image_plane_z_mm": thickness + gap,
        "full_fov_deg": 10.0,
        "sensor": {
            "pitch_um": 10.0, "resolution": [16, 16], "bayer": "RGGB",
            "wavelengths_nm": [550.0],
            "spectral_response": {"r": [1.0], "g": [1.0], "b": [1.0]},
            "wb": {"5500": [1.0, 1.0, 1.0]},
            "ccm": [[1, 0, 0], [0, 1, 0], [0, 0, 1]],
        },
    }
    return lens.prescription_from_dict(doc)


@pytest.fixture()
def flat_window():
    return make_flat_window()


@pytest.fixture(scope="session")
def tiny_triplet(triplet_doc):
    """The example lens with a small sensor crop: cheap PSF grids."""
    doc = copy.deepcopy(triplet_doc)
    doc["sensor"]["resolution"] = [60, 80]
    return lens.prescription_from_dict(doc)


@pytest.fixture(scope="session", autouse=True)
def jit_warmup():
    """Compile the superposition kernel before anything is timed."""
    samples, z_f = psf.synthetic_pupil(4.0, 550.0, pupil_radius_mm=0.5,
                                       n_samples=8)
    grid = psf.ImageGridSpec(range_x=4e-4, range_y=4e-4, interval=1e-4,
                             center=(0.0, 0.0))
    psf.psf_from_samples(samples, grid, z_f)
    psf.superpose_field(samples, grid, z_f, psf.wave_number(550.0),
                        policy="literal")


@pytest.fixture(scope="session")
def triplet_grid(triplet):
    """The desk-scale 6x8-cell, 7-wavelength grid (timed; shared)."""
    t0 = time.time()
    grid = psf.compute_psf_grid(triplet, triplet.sensor, (6, 8),
                                pupil_samples_n=64)
    elapsed = time.time() - t0
    return grid, elapsed


def natural_images(resolution, count=5):
    """Band-limited natural test frames at the sensor resolution."""
    from skimage import data

    from lenstrace.dataset import prepare_frame

    names = ["astronaut", "chelsea", "coffee", "cat", "rocket"][:count]
    H, W = resolution
    return {
        name: prepare_frame(np.asarray(getattr(data, name)(), float) / 255.0,
                            (H, W), upsample=2.5)
        for name in names
    }
