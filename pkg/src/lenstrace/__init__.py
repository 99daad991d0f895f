"""Lens-to-sensor imaging simulation toolkit.

Computes spatially and spectrally variant point spread functions from a
lens prescription (sequential raytracing plus coherent wavelet
superposition), renders aberrated images through a modeled ISP chain, and
emits paired datasets for training restoration networks.
"""

from .lens import (
    LensPrescription,
    Material,
    PrescriptionError,
    SensorSpec,
    Surface,
    load_prescription,
    paraxial_focal_length,
    save_prescription,
    surface_sag,
)
from .raytrace import (
    Ray,
    TraceResult,
    Vignetted,
    chief_ray_center,
    intersect,
    refract,
    trace,
)

__version__ = "0.1.0"
