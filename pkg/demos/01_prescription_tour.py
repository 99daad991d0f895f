"""Tour of the example lens prescription.

Loads the bundled 50 mm triplet, prints its geometry, checks the paraxial
focal length, and plots the surface sag profiles.

Run:  python demos/01_prescription_tour.py
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from lenstrace import lens

HERE = Path(__file__).parent
OUT = HERE / "output"
OUT.mkdir(exist_ok=True)

prescription = lens.load_prescription(
    Path(lens.__file__).parent / "data" / "cooke_triplet_f50.json")

print("surfaces (vertex z, curvature, semi-diameter, medium after):")
for i, s in enumerate(prescription.surfaces):
    print(f"  {i}: z = {prescription.surface_z[i]:8.3f} mm   "
          f"c = {s.curvature:+.6f} 1/mm   sd = {s.semi_diameter:5.2f} mm   "
          f"{s.material}{'   <- stop' if s.is_stop else ''}")

print(f"\nobject plane     : z = {prescription.object_z_mm:.1f} mm")
print(f"pupil sampling   : z = {prescription.exit_pupil_z_mm:.3f} mm")
print(f"image plane      : z = {prescription.image_plane_z_mm:.4f} mm")
print(f"full field," f" diagonal: {prescription.full_fov_deg:.2f} deg")

for wl in (430.0, 550.0, 670.0):
    f = lens.paraxial_focal_length(prescription, wl)
    print(f"EFL({wl:.0f} nm) = {f:.4f} mm")

# Sag profiles of the six refracting surfaces.
fig, ax = plt.subplots(figsize=(7, 4))
for i, s in enumerate(prescription.surfaces[:-1]):
    y = np.linspace(-s.semi_diameter, s.semi_diameter, 200)
    z = prescription.surface_z[i] + s.sag(np.zeros_like(y), y)
    ax.plot(z, y, label=f"S{i + 1}")
ax.axvline(prescription.image_plane_z_mm, color="k", ls=":", lw=0.8)
ax.set(xlabel="z (mm)", ylabel="y (mm)", title="Surface cross sections")
ax.legend(fontsize=7)
fig.savefig(OUT / "prescription_layout.png", dpi=150, bbox_inches="tight")
print(f"\nlayout figure -> {OUT / 'prescription_layout.png'}")
