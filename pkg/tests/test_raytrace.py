import numpy as np
import pytest

from lenstrace import lens, raytrace
from lenstrace.raytrace import (
    NoIntersection,
    Ray,
    TotalInternalReflection,
    Vignetted,
    chief_ray_center,
    intersect,
    refract,
    trace,
    trace_batch,
    trace_pupil_points,
)

from conftest import make_flat_window


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def random_asphere(rng):
    c = rng.uniform(-0.08, 0.08)
    coeffs = {}
    if rng.uniform() < 0.7:
        coeffs[4] = rng.uniform(-1e-5, 1e-5)
    if rng.uniform() < 0.4:
        coeffs[6] = rng.uniform(-1e-8, 1e-8)
    return lens.Surface(curvature=c, semi_diameter=6.0, thickness=1.0,
                        material="air", coeffs=coeffs)


class TestIntersect:
    def test_plane(self):
        s = lens.Surface(curvature=0.0, semi_diameter=5.0, thickness=1.0,
                         material="air")
        P, n = intersect(Ray(np.array([0., 0., -1.]), np.array([0., 0., 1.]), 550.0), s)
        assert np.allclose(P, [0, 0, 0], atol=1e-12)
        assert abs(abs(n[2]) - 1.0) < 1e-12

    def test_sphere(self):
        s = lens.Surface(curvature=0.1, semi_diameter=3.0, thickness=1.0,
                         material="air")
        P, n = intersect(Ray(np.array([1., 0., -5.]), np.array([0., 0., 1.]), 550.0), s)
        assert P[0] == pytest.approx(1.0, abs=1e-12)
        assert P[2] == pytest.approx(0.0501256, abs=1e-7)

    def test_no_crossing(self):
        s = lens.Surface(curvature=0.0, semi_diameter=5.0, thickness=1.0,
                         material="air")
        ray = Ray(np.array([0., 0., -1.]), np.array([1., 0., 0.]), 550.0)
        with pytest.raises(NoIntersection):
            intersect(ray, s)

    def test_backward_hit_rejected(self):
        s = lens.Surface(curvature=0.0, semi_diameter=5.0, thickness=1.0,
                         material="air")
        ray = Ray(np.array([0., 0., 1.0]), np.array([0., 0., 1.]), 550.0)
        with pytest.raises(NoIntersection):
            intersect(ray, s, 0.0)

    def test_outside_aperture_vignettes(self):
        s = lens.Surface(curvature=0.0, semi_diameter=1.0, thickness=1.0,
                         material="air")
        ray = Ray(np.array([2., 0., -1.]), np.array([0., 0., 1.]), 550.0)
        with pytest.raises(Vignetted):
            intersect(ray, s)

    def test_residual_on_random_aspheres(self):
        rng = np.random.default_rng(42)
        worst = 0.0
        for _ in range(300):
            s = random_asphere(rng)
            O = np.array([rng.uniform(-2, 2), rng.uniform(-2, 2), -5.0])
            D = unit([rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), 1.0])
            try:
                P, _ = intersect(Ray(O, D, 550.0), s)
            except (NoIntersection, Vignetted):
                continue
            worst = max(worst, abs(P[2] - s.sag(P[0], P[1])))
        assert worst <= 1e-9

    def test_deep_asphere_terms(self):
        s = lens.Surface(curvature=0.02, semi_diameter=5.0, thickness=1.0,
                         material="air",
                         coeffs={2: 1e-3, 4: -2e-5, 8: 1e-8, 16: -1e-14})
        ray = Ray(np.array([2.5, -1.0, -4.0]), unit([0.05, 0.02, 1.0]), 550.0)
        P, n = intersect(ray, s)
        assert abs(P[2] - s.sag(P[0], P[1])) <= 1e-9
        gx, gy = s.sag_gradient(P[0], P[1])
        assert np.allclose(n, unit([-gx, -gy, 1.0]), atol=1e-12)


class TestRefract:
    def test_same_medium_identity(self):
        d = unit([0.3, -0.2, 1.0])
        out = refract(d, np.array([0., 0., 1.]), 1.5, 1.5)
        assert np.allclose(out, d, atol=1e-12)

    def test_normal_incidence(self):
        d = np.array([0., 0., 1.])
        out = refract(d, np.array([0., 0., 1.]), 1.0, 1.7)
        assert np.allclose(out, d, atol=1e-12)

    def test_snell_45_degrees(self):
        d = np.array([np.sin(np.pi / 4), 0.0, np.cos(np.pi / 4)])
        out = refract(d, np.array([0., 0., 1.]), 1.0, 1.5)
        theta_t = np.degrees(np.arcsin(out[0]))
        assert theta_t == pytest.approx(28.1255, abs=1e-3)

    def test_total_internal_reflection(self):
        d = np.array([np.sin(np.pi / 3), 0.0, np.cos(np.pi / 3)])
        with pytest.raises(TotalInternalReflection):
            refract(d, np.array([0., 0., 1.]), 1.5, 1.0)

    def test_snell_invariant_and_coplanarity(self):
        rng = np.random.default_rng(7)
        for _ in range(2000):
            d = unit(rng.normal(size=3))
            n = unit(rng.normal(size=3))
            e1, e2 = rng.uniform(1.0, 1.9, size=2)
            try:
                out = refract(d, n, e1, e2)
            except TotalInternalReflection:
                continue
            sin_i = np.linalg.norm(np.cross(d, n))
            sin_t = np.linalg.norm(np.cross(out, n))
            assert abs(e1 * sin_i - e2 * sin_t) <= 1e-12
            assert abs(np.linalg.norm(out) - 1.0) <= 1e-12
            # Coplanarity, measured stably: the component of the refracted
            # direction outside span(D, n) must vanish.  (The normalized
            # triple product amplifies rounding when D and D' are nearly
            # parallel.)
            basis = np.linalg.qr(np.stack([d, n], axis=1))[0]
            resid = out - basis @ (basis.T @ out)
            assert np.linalg.norm(resid) <= 1e-12


class TestTrace:
    def test_flat_window_path_length(self, flat_window):
        # 10 mm air + 2 mm glass (n=1.5) + 10 mm air = 23 mm at the image.
        res = trace_batch(flat_window, np.array([[0., 0., -10.]]),
                          np.array([[0., 0., 1.]]), 550.0)
        point, opl = raytrace.propagate_to_plane(
            res["position"], res["direction"], res["opl"],
            flat_window.image_plane_z_mm)
        assert opl[0] == pytest.approx(23.0, abs=1e-12)

    def test_vignetted_beyond_apertures(self, flat_window):
        with pytest.raises(Vignetted):
            trace(flat_window, (0.0, 0.0, -10.0), (20.0, 0.0), 550.0)

    def test_pupil_symmetry(self, triplet):
        targets = np.array([[1.2, 0.7], [-0.4, 1.9], [2.0, -2.0]])
        a = trace_pupil_points(triplet, (0., 0., triplet.object_z_mm),
                               targets, 550.0)
        b = trace_pupil_points(triplet, (0., 0., triplet.object_z_mm),
                               -targets, 550.0)
        both = a["alive"] & b["alive"]
        assert both.any()
        assert np.abs(a["opl"][both] - b["opl"][both]).max() <= 1e-9

    def test_trace_hits_requested_pupil_point(self, triplet):
        res = trace(triplet, (0., 0., triplet.object_z_mm), (1.0, -0.5), 550.0)
        assert res.pupil_xy[0] == pytest.approx(1.0, abs=1e-8)
        assert res.pupil_xy[1] == pytest.approx(-0.5, abs=1e-8)
        assert res.pupil_z_mm == triplet.exit_pupil_z_mm
        assert abs(np.linalg.norm(res.direction) - 1.0) < 1e-12
        # sanity lower bound: OPL exceeds line-of-sight / max index
        straight = np.linalg.norm(
            np.array([1.0, -0.5, triplet.exit_pupil_z_mm])
            - np.array([0, 0, triplet.object_z_mm]))
        assert res.path_length_mm > straight / 1.7

    def test_opl_monotone_surface_to_surface(self, triplet):
        targets = np.array([[0.5, 0.3], [1.5, -1.0]])
        aimed = trace_pupil_points(triplet, (0., 10., triplet.object_z_mm),
                                   targets, 550.0)
        from lenstrace.raytrace import _slope_to_direction
        dirs = _slope_to_direction(aimed["slopes"])
        res = trace_batch(triplet,
                          np.broadcast_to([0., 10., triplet.object_z_mm], (2, 3)),
                          dirs, 550.0, record_path=True)
        path = res["opl_path"][:, res["status"] == raytrace.ALIVE]
        assert np.all(np.diff(path, axis=0) > 0)

    def test_rotational_symmetry_90deg(self, triplet):
        targets = np.array([[1.5, 0.4], [0.8, -1.2]])
        rot = np.array([[-t[1], t[0]] for t in targets])  # 90 deg rotation
        a = trace_pupil_points(triplet, (0., 0., triplet.object_z_mm),
                               targets, 550.0)
        b = trace_pupil_points(triplet, (0., 0., triplet.object_z_mm),
                               rot, 550.0)
        both = a["alive"] & b["alive"]
        assert np.abs(a["opl"][both] - b["opl"][both]).max() <= 1e-9
        da, db = a["direction"][both], b["direction"][both]
        rotated = np.stack([-da[:, 1], da[:, 0], da[:, 2]], axis=1)
        assert np.abs(rotated - db).max() <= 1e-9


class TestChiefRay:
    def test_on_axis(self, triplet):
        x, y = chief_ray_center(triplet, (0., 0., triplet.object_z_mm), 550.0)
        assert abs(x) < 1e-9 and abs(y) < 1e-9

    def test_meridional_symmetry(self, triplet):
        x, y = chief_ray_center(triplet, (0., 120., triplet.object_z_mm), 550.0)
        assert abs(x) <= 1e-9
        assert y < 0  # inverted image

    def test_matches_paraxial_magnification(self, triplet):
        # Paraxial oracle: finite-conjugate magnification u0/u1 from a y-nu
        # trace of the axial ray (Lagrange invariant, both spaces in air).
        wl = 550.0
        u0 = 1e-5
        y, u, n_in = u0 * triplet.object_distance_mm, u0, 1.0
        for i, s in enumerate(triplet.surfaces):
            n_out = triplet.medium_after(i).index(wl)
            u = (n_in * u - y * s.curvature * (n_out - n_in)) / n_out
            if i < len(triplet.surfaces) - 1:
                y = y + s.thickness * u
            n_in = n_out
        m_oracle = u0 / u
        _, y_img = chief_ray_center(triplet, (0., 2.0, triplet.object_z_mm), wl)
        assert y_img / 2.0 == pytest.approx(m_oracle, rel=0.02)

    def test_outside_fov_fails(self, triplet):
        with pytest.raises(raytrace.RayTraceError):
            chief_ray_center(triplet, (0.0, 5000.0, triplet.object_z_mm), 550.0)


def test_ray_validation():
    with pytest.raises(ValueError):
        Ray(np.zeros(3), np.array([0., 0., 2.]), 550.0)
    with pytest.raises(ValueError):
        Ray(np.zeros(3), np.array([0., 0., 1.]), 550.0, path_length_mm=-1.0)
