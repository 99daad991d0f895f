"""Optical system description: surfaces, materials, sensor/ISP calibration.

The prescription file is a JSON document with the layout::

    {
      "surfaces": [
        {"curvature": 0.042, "coeffs": {"4": -1.2e-6}, "semi_diameter": 9.0,
         "thickness": 4.8, "material": "glass_a", "is_stop": false},
        ...
      ],
      "materials": {"glass_a": {"table": [[400.0, 1.532], [410.0, 1.530], ...]}},
      "object_distance_mm": 1750.0,
      "exit_pupil_z_mm": 62.0,
      "image_plane_z_mm": 102.0,
      "full_fov_deg": 27.0,
      "sensor": {
        "pitch_um": 15.0, "resolution": [960, 1280], "bayer": "RGGB",
        "wavelengths_nm": [430, ...],
        "spectral_response": {"r": [...], "g": [...], "b": [...]},
        "wb": {"5500": [2.0, 1.0, 1.6], ...},
        "ccm": [[...], [...], [...]],
        "relative_illumination": {"fov": [0.0, ...], "table": [[...], ...]}  # optional
      }
    }

Axial coordinates are global: the first surface vertex sits at z = 0, the
object plane at z = -object_distance_mm, and exit_pupil_z_mm /
image_plane_z_mm are measured in the same frame.  Units are millimeters and
nanometers throughout.

All types are immutable after load and safe to share across workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

BAYER_PATTERNS = ("RGGB", "BGGR", "GRBG", "GBRG")
CHANNELS = ("r", "g", "b")

# Even deformation orders accepted in prescription files.
DEFORMATION_ORDERS = tuple(range(2, 17, 2))

# Paper-anchored production configurations (sensor cell grids, wavelength
# sets, and object distances used for the two reference cameras).
DSLR_CONFIG = {
    "field_grid": (400, 600),
    "wavelengths_nm": tuple(range(400, 701, 10)),  # 31 samples
    "object_distance_mm": 1750.0,
    "patch_px": 10,
}
PHONE_CONFIG = {
    "field_grid": (300, 400),
    "wavelengths_nm": tuple(range(400, 731, 10)),  # 34 samples
    "object_distance_mm": 600.0,
    "patch_px": 10,
}


class PrescriptionError(ValueError):
    """Raised when a prescription file violates the schema or an invariant."""


@dataclass(frozen=True)
class Material:
    """Tabulated refractive index, linearly interpolated in wavelength.

    Queries outside the tabulated range raise ``PrescriptionError``; the
    table is the validity range.
    """

    name: str
    wavelengths_nm: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        wl = np.asarray(self.wavelengths_nm, dtype=float)
        n = np.asarray(self.indices, dtype=float)
        if wl.ndim != 1 or wl.shape != n.shape or wl.size < 1:
            raise PrescriptionError(f"material {self.name!r}: malformed index table")
        if wl.size > 1 and not np.all(np.diff(wl) > 0):
            raise PrescriptionError(f"material {self.name!r}: wavelengths must increase")
        if np.any(n < 1.0):
            raise PrescriptionError(f"material {self.name!r}: index below 1")
        object.__setattr__(self, "wavelengths_nm", wl)
        object.__setattr__(self, "indices", n)

    def index(self, wavelength_nm: float) -> float:
        wl = self.wavelengths_nm
        if wavelength_nm < wl[0] - 1e-9 or wavelength_nm > wl[-1] + 1e-9:
            raise PrescriptionError(
                f"material {self.name!r}: {wavelength_nm} nm outside "
                f"validity range [{wl[0]}, {wl[-1]}]"
            )
        if wl.size == 1:
            return float(self.indices[0])
        return float(np.interp(wavelength_nm, wl, self.indices))


#: Implicit surround medium; covers every wavelength with n = 1.
AIR = Material("air", np.array([0.0, 1e7]), np.array([1.0, 1.0]))


@dataclass(frozen=True)
class Surface:
    """One optical interface: sphere plus even-order deformation terms.

    ``coeffs`` maps even powers (2..16) to deformation coefficients; the sag
    is ``c*rho^2 / (1 + sqrt(1 - c^2 rho^2)) + sum_j A_j rho^j``.
    ``material`` names the medium *after* the surface.
    """

    curvature: float
    semi_diameter: float
    thickness: float
    material: str
    coeffs: dict = field(default_factory=dict)
    is_stop: bool = False

    def __post_init__(self):
        if not (self.semi_diameter > 0):
            raise PrescriptionError("semi_diameter must be > 0")
        if not np.isfinite(self.thickness):
            raise PrescriptionError("thickness must be finite")
        for order in self.coeffs:
            if order not in DEFORMATION_ORDERS:
                raise PrescriptionError(
                    f"deformation order {order} unsupported (even 2..16 only)"
                )
        c2r2 = (self.curvature * self.semi_diameter) ** 2
        if c2r2 > 1.0:
            raise PrescriptionError(
                "sag undefined on clear aperture (c^2 rho^2 > 1 at semi-diameter)"
            )
        object.__setattr__(self, "coeffs", dict(sorted(self.coeffs.items())))

    def sag(self, x, y):
        """Surface height z at (x, y); inputs may be scalars or arrays."""
        rho2 = np.asarray(x, dtype=float) ** 2 + np.asarray(y, dtype=float) ** 2
        s = 1.0 - self.curvature**2 * rho2
        if np.any(s < 0):
            raise PrescriptionError("sag evaluated where c^2 rho^2 > 1")
        z = self.curvature * rho2 / (1.0 + np.sqrt(s))
        for order, a in self.coeffs.items():
            z = z + a * rho2 ** (order / 2)
        return z if z.ndim else float(z)

    def sag_gradient(self, x, y):
        """(df/dx, df/dy) of the sag; shares the radial factor g(rho^2)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        rho2 = x**2 + y**2
        s = np.sqrt(np.maximum(1.0 - self.curvature**2 * rho2, 1e-300))
        g = self.curvature / s
        for order, a in self.coeffs.items():
            g = g + order * a * rho2 ** ((order - 2) / 2)
        return x * g, y * g


def surface_sag(surface: Surface, x: float, y: float) -> float:
    """Sag of ``surface`` at (x, y) in mm; errors outside the clear aperture."""
    rho = np.hypot(x, y)
    if np.any(rho > surface.semi_diameter + 1e-12):
        raise PrescriptionError(
            f"sag requested at rho={np.max(rho):.6g} outside semi-diameter "
            f"{surface.semi_diameter:.6g}"
        )
    return surface.sag(x, y)


@dataclass(frozen=True)
class RelativeIllumination:
    """Calibrated lens-shading table: C_ill(fov, wavelength), = 1 on axis."""

    fov: np.ndarray          # ascending, starts at 0
    table: np.ndarray        # (n_fov, n_wavelengths)
    wavelengths_nm: np.ndarray

    def value(self, fov: float, wavelength_nm: float) -> float:
        col = np.array(
            [np.interp(wavelength_nm, self.wavelengths_nm, row) for row in self.table]
        )
        return float(np.interp(fov, self.fov, col))


@dataclass(frozen=True)
class SensorSpec:
    """Sensor geometry plus the ISP calibration data used by the simulator."""

    pitch_um: float
    resolution: tuple          # (H, W) pixels
    bayer: str
    wavelengths_nm: np.ndarray
    spectral_response: dict    # channel -> array over wavelengths_nm
    wb: dict                   # color temperature (int K) -> 3 gains (r, g, b)
    ccm: np.ndarray            # 3x3, invertible
    relative_illumination: RelativeIllumination | None = None

    @property
    def pitch_mm(self) -> float:
        return self.pitch_um * 1e-3

    @property
    def half_diagonal_mm(self) -> float:
        h, w = self.resolution
        return 0.5 * self.pitch_mm * float(np.hypot(h, w))


@dataclass(frozen=True)
class LensPrescription:
    """Ordered surfaces (object to image space) plus system geometry.

    ``surface_z`` holds each vertex position; the final listed surface is
    conventionally a plane at the image location kept as a reference.
    """

    surfaces: tuple
    materials: dict
    object_distance_mm: float
    exit_pupil_z_mm: float
    image_plane_z_mm: float
    full_fov_deg: float
    sensor: SensorSpec
    surface_z: np.ndarray = field(init=False)

    def __post_init__(self):
        z = np.concatenate([[0.0], np.cumsum([s.thickness for s in self.surfaces])])[:-1]
        object.__setattr__(self, "surface_z", z)
        stops = [i for i, s in enumerate(self.surfaces) if s.is_stop]
        if len(stops) != 1:
            raise PrescriptionError(f"exactly one stop required, found {len(stops)}")
        if any(s.thickness < 0 for s in self.surfaces):
            raise PrescriptionError("negative propagation between surfaces")
        last_refr = self.last_refracting_z()
        if self.exit_pupil_z_mm <= last_refr or self.image_plane_z_mm <= last_refr:
            raise PrescriptionError(
                "exit pupil and image plane must lie after the last refracting surface"
            )

    @property
    def stop_index(self) -> int:
        return next(i for i, s in enumerate(self.surfaces) if s.is_stop)

    @property
    def object_z_mm(self) -> float:
        return -self.object_distance_mm

    def medium_before(self, i: int) -> Material:
        if i == 0:
            return self.materials.get("air", AIR)
        return self.materials[self.surfaces[i - 1].material]

    def medium_after(self, i: int) -> Material:
        return self.materials[self.surfaces[i].material]

    def refracts(self, i: int) -> bool:
        """Whether surface i separates distinct media (up to table identity)."""
        a, b = self.medium_before(i), self.medium_after(i)
        return not (
            np.array_equal(a.wavelengths_nm, b.wavelengths_nm)
            and np.array_equal(a.indices, b.indices)
        )

    def last_refracting_z(self) -> float:
        zs = [self.surface_z[i] for i in range(len(self.surfaces)) if self.refracts(i)]
        return max(zs) if zs else 0.0

    def to_dict(self) -> dict:
        """Plain-python document matching the file schema (for serialization)."""
        doc = {
            "surfaces": [
                {
                    "curvature": s.curvature,
                    "coeffs": {str(k): v for k, v in s.coeffs.items()},
                    "semi_diameter": s.semi_diameter,
                    "thickness": s.thickness,
                    "material": s.material,
                    "is_stop": s.is_stop,
                }
                for s in self.surfaces
            ],
            "materials": {
                name: {"table": np.column_stack([m.wavelengths_nm, m.indices]).tolist()}
                for name, m in self.materials.items()
            },
            "object_distance_mm": self.object_distance_mm,
            "exit_pupil_z_mm": self.exit_pupil_z_mm,
            "image_plane_z_mm": self.image_plane_z_mm,
            "full_fov_deg": self.full_fov_deg,
            "sensor": {
                "pitch_um": self.sensor.pitch_um,
                "resolution": list(self.sensor.resolution),
                "bayer": self.sensor.bayer,
                "wavelengths_nm": self.sensor.wavelengths_nm.tolist(),
                "spectral_response": {
                    ch: self.sensor.spectral_response[ch].tolist() for ch in CHANNELS
                },
                "wb": {str(t): g.tolist() for t, g in self.sensor.wb.items()},
                "ccm": self.sensor.ccm.tolist(),
            },
        }
        ri = self.sensor.relative_illumination
        if ri is not None:
            doc["sensor"]["relative_illumination"] = {
                "fov": ri.fov.tolist(),
                "table": ri.table.tolist(),
            }
        return doc


def _parse_sensor(doc: dict, wavelengths: np.ndarray) -> SensorSpec:
    try:
        pitch = float(doc["pitch_um"])
        resolution = tuple(int(v) for v in doc["resolution"])
        bayer = str(doc["bayer"]).upper()
        response = {
            ch: np.asarray(doc["spectral_response"][ch], dtype=float) for ch in CHANNELS
        }
        wb = {int(t): np.asarray(g, dtype=float) for t, g in doc["wb"].items()}
        ccm = np.asarray(doc["ccm"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise PrescriptionError(f"sensor block malformed: {exc}") from exc

    if pitch <= 0 or len(resolution) != 2 or min(resolution) < 1:
        raise PrescriptionError("sensor pitch/resolution invalid")
    if bayer not in BAYER_PATTERNS:
        raise PrescriptionError(f"bayer pattern {bayer!r} not one of {BAYER_PATTERNS}")
    for ch, curve in response.items():
        if curve.shape != wavelengths.shape:
            raise PrescriptionError(f"spectral response {ch!r} length mismatch")
        if np.any(curve < 0) or np.any(curve > 1):
            raise PrescriptionError(f"spectral response {ch!r} outside [0, 1]")
        if curve.sum() <= 0:
            raise PrescriptionError(f"spectral response {ch!r} has zero total")
    for temp, gains in wb.items():
        if gains.shape != (3,) or np.any(gains <= 0):
            raise PrescriptionError(f"white balance gains for {temp} K invalid")
    if ccm.shape != (3, 3) or np.linalg.cond(ccm) > 1e12:
        raise PrescriptionError("color correction matrix must be invertible 3x3")

    ri = None
    if "relative_illumination" in doc and doc["relative_illumination"] is not None:
        block = doc["relative_illumination"]
        fov = np.asarray(block["fov"], dtype=float)
        table = np.asarray(block["table"], dtype=float)
        if fov.ndim != 1 or table.shape != (fov.size, wavelengths.size):
            raise PrescriptionError("relative illumination table shape mismatch")
        if fov[0] != 0.0 or not np.allclose(table[0], 1.0):
            raise PrescriptionError("relative illumination must be 1 on axis")
        ri = RelativeIllumination(fov, table, wavelengths)

    return SensorSpec(pitch, resolution, bayer, wavelengths, response, wb, ccm, ri)


def load_prescription(path) -> LensPrescription:
    """Load and validate a lens + sensor prescription from a JSON file."""
    with open(path) as fh:
        doc = json.load(fh)
    return prescription_from_dict(doc)


def prescription_from_dict(doc: dict) -> LensPrescription:
    try:
        surf_docs = doc["surfaces"]
        mat_docs = doc["materials"]
        object_distance = float(doc["object_distance_mm"])
        exit_pupil_z = float(doc["exit_pupil_z_mm"])
        image_plane_z = float(doc["image_plane_z_mm"])
        full_fov = float(doc["full_fov_deg"])
        sensor_doc = doc["sensor"]
    except (KeyError, TypeError, ValueError) as exc:
        raise PrescriptionError(f"prescription malformed: {exc}") from exc

    materials = {}
    for name, block in mat_docs.items():
        table = np.asarray(block["table"], dtype=float)
        if table.ndim != 2 or table.shape[1] != 2:
            raise PrescriptionError(f"material {name!r}: table must be [[nm, n], ...]")
        materials[name] = Material(name, table[:, 0], table[:, 1])
    materials.setdefault("air", AIR)

    surfaces = []
    for i, block in enumerate(surf_docs):
        try:
            coeffs = {int(k): float(v) for k, v in block.get("coeffs", {}).items()}
            surfaces.append(
                Surface(
                    curvature=float(block["curvature"]),
                    semi_diameter=float(block["semi_diameter"]),
                    thickness=float(block["thickness"]),
                    material=str(block["material"]),
                    coeffs=coeffs,
                    is_stop=bool(block.get("is_stop", False)),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise PrescriptionError(f"surface {i}: {exc}") from exc
        if surfaces[-1].material not in materials:
            raise PrescriptionError(f"surface {i}: unknown material {surfaces[-1].material!r}")

    wavelengths = np.asarray(sensor_doc.get("wavelengths_nm", []), dtype=float)
    if wavelengths.size < 1 or (wavelengths.size > 1 and not np.all(np.diff(wavelengths) > 0)):
        raise PrescriptionError("sensor wavelengths_nm must be ascending and nonempty")
    sensor = _parse_sensor(sensor_doc, wavelengths)

    prescription = LensPrescription(
        surfaces=tuple(surfaces),
        materials=materials,
        object_distance_mm=object_distance,
        exit_pupil_z_mm=exit_pupil_z,
        image_plane_z_mm=image_plane_z,
        full_fov_deg=full_fov,
        sensor=sensor,
    )

    # Every medium actually used must cover the configured wavelength set.
    for i in range(len(surfaces)):
        for mat in (prescription.medium_before(i), prescription.medium_after(i)):
            for wl in wavelengths:
                mat.index(float(wl))
    return prescription


def save_prescription(prescription: LensPrescription, path) -> None:
    with open(path, "w") as fh:
        json.dump(prescription.to_dict(), fh, indent=1)


# ---------------------------------------------------------------------------
# Paraxial helpers


def paraxial_focal_length(prescription: LensPrescription, wavelength_nm: float) -> float:
    """Effective focal length from a paraxial marginal ray (y=1 from infinity)."""
    y, u = 1.0, 0.0
    n_in = prescription.medium_before(0).index(wavelength_nm)
    for i, surf in enumerate(prescription.surfaces):
        n_out = prescription.medium_after(i).index(wavelength_nm)
        u = (n_in * u - y * surf.curvature * (n_out - n_in)) / n_out
        y = y + surf.thickness * u
        n_in = n_out
    if u == 0:
        raise PrescriptionError("system is afocal; no focal length")
    # y at the last vertex has already been advanced by its thickness; undo
    # is unnecessary for EFL, which only needs the exit angle.
    return -1.0 / u


def estimate_exit_pupil_z(prescription: LensPrescription, wavelength_nm: float) -> float:
    """Paraxial image of the stop center through the rear group (helper only).

    The designer-supplied ``exit_pupil_z_mm`` is authoritative; this estimate
    can land inside the lens for some designs, where a sampling plane just
    behind the last vertex is the practical choice.
    """
    k = prescription.stop_index
    y, u = 0.0, 1.0
    n_in = prescription.medium_before(k).index(wavelength_nm)
    for i in range(k, len(prescription.surfaces)):
        surf = prescription.surfaces[i]
        n_out = prescription.medium_after(i).index(wavelength_nm)
        u = (n_in * u - y * surf.curvature * (n_out - n_in)) / n_out
        if i < len(prescription.surfaces) - 1:
            y = y + surf.thickness * u
        n_in = n_out
    if u == 0:
        raise PrescriptionError("stop images to infinity")
    z_last = float(prescription.surface_z[-1])
    return z_last - y / u
