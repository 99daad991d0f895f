"""Sequential skew-ray tracing through a lens prescription.

Rays march from the object point through every surface in order.  Each
surface intersection solves the line/sag system with Newton iteration seeded
by the plane or sphere closed form; refraction follows the vector Snell
form.  Optical path length accumulates as geometric length times the index
of the medium traversed.

Everything here is a pure function of immutable inputs; batched entry points
operate on (N, 3) arrays and report per-ray status instead of raising.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lens import LensPrescription, Surface

# Per-ray status codes used by the batched tracer.
ALIVE = 0
NO_INTERSECTION = 1
VIGNETTED = 2
TIR = 3

NEWTON_TOL_MM = 1e-10
NEWTON_MAX_ITER = 50
CHIEF_TOL_MM = 1e-9
AIM_TOL_MM = 1e-10


class RayTraceError(Exception):
    pass


class NoIntersection(RayTraceError):
    pass


class Vignetted(RayTraceError):
    pass


class TotalInternalReflection(RayTraceError):
    pass


@dataclass(frozen=True)
class Ray:
    """A ray: origin (mm), unit direction, wavelength (nm), accumulated OPL."""

    origin: np.ndarray
    direction: np.ndarray
    wavelength_nm: float
    path_length_mm: float = 0.0

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise ValueError("ray direction must be unit length")
        if self.path_length_mm < 0:
            raise ValueError("accumulated path length must be nonnegative")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class TraceResult:
    """State of a traced ray at the pupil sampling plane."""

    pupil_xy: tuple          # (x', y') mm on the plane z = exit_pupil_z
    direction: np.ndarray    # exit direction cosines
    path_length_mm: float    # total OPL from the source to (x', y', z')
    pupil_z_mm: float = 0.0  # axial position of the sampling plane


def _sag_and_grad(surface: Surface, x, y):
    """Vectorized sag, gradient and domain validity (no raising)."""
    rho2 = x * x + y * y
    s2 = 1.0 - surface.curvature**2 * rho2
    valid = s2 > 0.0
    s = np.sqrt(np.where(valid, s2, 1.0))
    z = surface.curvature * rho2 / (1.0 + s)
    g = surface.curvature / s
    for order, a in surface.coeffs.items():
        z = z + a * rho2 ** (order / 2)
        g = g + order * a * rho2 ** ((order - 2) / 2)
    return z, x * g, y * g, valid


def _intersect_batch(surface, z_vertex, O, D, alive):
    """Newton intersection of rays with one surface (vertex at z_vertex).

    Returns (t, P, normal, ok, in_aperture).  ``ok`` excludes rays whose
    iteration failed, diverged, ran outside the sag domain, or hit t < 0.
    """
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        dz = D[:, 2]
        safe_dz = np.where(np.abs(dz) > 1e-15, dz, np.nan)
        t = (z_vertex - O[:, 2]) / safe_dz

        if surface.curvature != 0.0:
            # Seed from the spherical part: |O + tD - C|^2 = R^2.
            R = 1.0 / surface.curvature
            oc = O - np.array([0.0, 0.0, z_vertex + R])
            b = np.einsum("ij,ij->i", oc, D)
            cq = np.einsum("ij,ij->i", oc, oc) - R * R
            disc = b * b - cq
            root = np.sqrt(np.where(disc >= 0, disc, np.nan))
            t1, t2 = -b - root, -b + root
            t_plane = np.where(np.isfinite(t), t, 0.0)
            pick = np.abs(t1 - t_plane) <= np.abs(t2 - t_plane)
            t_sph = np.where(pick, t1, t2)
            t = np.where(np.isfinite(t_sph), t_sph, t)

        t = np.where(np.isfinite(t), t, 0.0)
        ok = alive.copy()
        converged = np.zeros_like(ok)
        for _ in range(NEWTON_MAX_ITER):
            x = O[:, 0] + t * D[:, 0]
            y = O[:, 1] + t * D[:, 1]
            z = O[:, 2] + t * D[:, 2]
            f, fx, fy, valid = _sag_and_grad(surface, x, y)
            g = z - z_vertex - f
            converged = np.abs(g) <= NEWTON_TOL_MM
            ok &= valid
            if np.all(converged | ~ok):
                break
            gp = D[:, 2] - (fx * D[:, 0] + fy * D[:, 1])
            step = np.where(np.abs(gp) > 1e-15, g / np.where(gp == 0, 1.0, gp), np.nan)
            t = np.where(converged | ~ok, t, t - step)
            ok &= np.isfinite(t)

        ok &= converged & (t >= -1e-12)
        x = O[:, 0] + t * D[:, 0]
        y = O[:, 1] + t * D[:, 1]
        z = O[:, 2] + t * D[:, 2]
        _, fx, fy, valid = _sag_and_grad(surface, x, y)
        ok &= valid
        P = np.stack([x, y, z], axis=1)
        n = np.stack([-fx, -fy, np.ones_like(fx)], axis=1)
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        in_aperture = x * x + y * y <= surface.semi_diameter**2 + 1e-12
    return t, P, n, ok, in_aperture


def _refract_batch(D, normal, mu):
    """Vector Snell refraction; returns (D', tir_mask).

    ``mu = eta1/eta2`` may be a scalar or one value per ray.
    """
    mu = np.asarray(mu, dtype=float)
    mu_col = mu[:, None] if mu.ndim else mu
    with np.errstate(invalid="ignore"):
        cosi = np.einsum("ij,ij->i", normal, D)
        # Re-orient the normal along the propagation direction.
        sign = np.where(cosi >= 0, 1.0, -1.0)
        n = normal * sign[:, None]
        cosi = cosi * sign
        sin2t = mu * mu * (1.0 - cosi * cosi)
        tir = sin2t > 1.0
        cost = np.sqrt(np.where(tir, 0.0, 1.0 - sin2t))
        Dp = mu_col * D + (cost - mu * cosi)[:, None] * n
        Dp /= np.linalg.norm(Dp, axis=1, keepdims=True)
    return Dp, tir


def trace_batch(prescription, origins, directions, wavelength_nm,
                clip=True, record_surface=None, record_path=False):
    """Trace N rays through every surface of the prescription.

    Parameters
    ----------
    origins, directions : (N, 3) arrays
        Launch states; directions must be unit vectors.
    clip : bool
        When False, aperture bounds do not kill rays (used while aiming);
        sag-domain violations, misses and TIR still do.
    record_surface : int or None
        Surface index whose intersection (x, y) should be returned.
    record_path : bool
        Also return the accumulated OPL at every surface (n_surf, N).

    Returns
    -------
    dict with arrays ``position`` (N, 3) on the last surface, ``direction``
    (N, 3), ``opl`` (N,), ``status`` (N,), and optionally ``hit`` (N, 2)
    and ``opl_path`` (n_surf, N).
    """
    O = np.array(origins, dtype=float, copy=True)
    D = np.array(directions, dtype=float, copy=True)
    n_rays = O.shape[0]
    opl = np.zeros(n_rays)
    status = np.full(n_rays, ALIVE, dtype=np.uint8)
    hit = None
    opl_path = [] if record_path else None

    for i, surface in enumerate(prescription.surfaces):
        alive = status == ALIVE
        if not alive.any():
            if record_path:
                opl_path.append(opl.copy())
            continue
        z_vertex = float(prescription.surface_z[i])
        n1 = prescription.medium_before(i).index(wavelength_nm)
        n2 = prescription.medium_after(i).index(wavelength_nm)

        t, P, normal, ok, in_aperture = _intersect_batch(surface, z_vertex, O, D, alive)
        status = np.where(alive & ~ok, NO_INTERSECTION, status)
        if clip:
            status = np.where(alive & ok & ~in_aperture, VIGNETTED, status)
        alive = status == ALIVE

        opl = np.where(alive, opl + n1 * t, opl)
        O = np.where(alive[:, None], P, O)
        if record_surface == i:
            hit = O[:, :2].copy()
        if record_path:
            opl_path.append(opl.copy())

        Dp, tir = _refract_batch(D, normal, n1 / n2)
        status = np.where(alive & tir, TIR, status)
        alive = status == ALIVE
        D = np.where(alive[:, None], Dp, D)

    out = {"position": O, "direction": D, "opl": opl, "status": status}
    if record_surface is not None:
        out["hit"] = hit if hit is not None else np.full((n_rays, 2), np.nan)
    if record_path:
        out["opl_path"] = np.array(opl_path)
    return out


def propagate_to_plane(position, direction, opl, z_plane, index=1.0):
    """Free-space transfer to the plane z = z_plane (signed distance allowed)."""
    t = (z_plane - position[:, 2]) / direction[:, 2]
    point = position + t[:, None] * direction
    return point, opl + index * t


# ---------------------------------------------------------------------------
# Scalar operations (single-ray API used directly in tests and small tools)


def intersect(ray: Ray, surface: Surface, axial_offset_mm: float = 0.0):
    """Intersection point and unit normal of a ray with one surface.

    Raises ``NoIntersection`` when the iteration fails or marches backward,
    ``Vignetted`` when the hit lies outside the clear semi-diameter.
    """
    O = ray.origin[None, :]
    D = ray.direction[None, :]
    alive = np.array([True])
    t, P, n, ok, in_ap = _intersect_batch(surface, axial_offset_mm, O, D, alive)
    if not ok[0]:
        raise NoIntersection("ray does not reach the surface")
    if not in_ap[0]:
        raise Vignetted("intersection outside the clear aperture")
    return P[0], n[0]


def refract(direction, surface_normal, eta1: float, eta2: float):
    """Refract a unit direction about a unit surface normal (vector Snell).

    Raises ``TotalInternalReflection`` when the transmitted angle does not
    exist; callers treat such rays as vignetted.
    """
    D = np.asarray(direction, dtype=float)[None, :]
    n = np.asarray(surface_normal, dtype=float)[None, :]
    Dp, tir = _refract_batch(D, n, eta1 / eta2)
    if tir[0]:
        raise TotalInternalReflection(
            f"sin^2(theta_t) > 1 for eta1={eta1}, eta2={eta2}"
        )
    return Dp[0]


# ---------------------------------------------------------------------------
# Aiming: launching rays that hit prescribed targets


def _slope_to_direction(slopes):
    d = np.concatenate([slopes, np.ones((slopes.shape[0], 1))], axis=1)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _aim(prescription, object_point, targets, wavelength_nm, *, plane, tol,
         max_iter=40, slopes0=None, jacobian0=None):
    """Quasi-Newton aim of launch slopes so rays hit ``targets``.

    ``plane`` is either ("surface", index) targeting intersection (x, y) on
    that surface, or ("z", z_mm) targeting the crossing of an axial plane.
    Aperture clipping is disabled while iterating; the caller re-traces the
    converged slopes with clipping to settle vignetting.

    Returns (slopes, residual_norm, converged_mask).
    """
    origin = np.asarray(object_point, dtype=float)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    m = targets.shape[0]

    def evaluate(slopes):
        dirs = _slope_to_direction(slopes)
        origins = np.broadcast_to(origin, (slopes.shape[0], 3))
        if plane[0] == "surface":
            res = trace_batch(prescription, origins, dirs, wavelength_nm,
                              clip=False, record_surface=plane[1])
            return res["hit"], res["status"] == ALIVE
        res = trace_batch(prescription, origins, dirs, wavelength_nm, clip=False)
        ok = res["status"] == ALIVE
        with np.errstate(invalid="ignore", divide="ignore"):
            point, _ = propagate_to_plane(res["position"], res["direction"], res["opl"], plane[1])
        return point[:, :2], ok

    if plane[0] == "surface":
        z_t = float(prescription.surface_z[plane[1]])
    else:
        z_t = plane[1]
    if slopes0 is None:
        # Aim straight at the target plane as a first guess.
        slopes = (targets - origin[None, :2]) / (z_t - origin[2])
    else:
        slopes = np.array(slopes0, dtype=float, copy=True)

    f, ok = evaluate(slopes)
    resid = f - targets

    if jacobian0 is None:
        # Shared Jacobian from central differences about the target-window
        # center.  Central differencing at the symmetric center keeps the
        # iteration paths of mirrored field points bit-mirrored, which is
        # what makes mirrored PSF cells agree far below the tolerances.
        delta = 1e-6
        center_t = (targets.min(axis=0) + targets.max(axis=0)) / 2.0
        base = (center_t - origin[:2]) / (z_t - origin[2])
        J = np.empty((2, 2))
        for k in range(2):
            probe_hi, probe_lo = base.copy(), base.copy()
            probe_hi[k] += delta
            probe_lo[k] -= delta
            f_hi, ok_hi = evaluate(probe_hi[None, :])
            f_lo, ok_lo = evaluate(probe_lo[None, :])
            if ok_hi[0] and ok_lo[0]:
                J[:, k] = (f_hi[0] - f_lo[0]) / (2 * delta)
            else:
                # Probe rays lost; fall back to straight-line transfer.
                J[:, k] = 0.0
                J[k, k] = z_t - origin[2]
        jac = np.broadcast_to(J, (m, 2, 2)).copy()
    else:
        jac = np.broadcast_to(np.asarray(jacobian0, dtype=float), (m, 2, 2)).copy()

    converged = np.zeros(m, dtype=bool)
    for _ in range(max_iter):
        err = np.linalg.norm(np.where(ok[:, None], resid, np.inf), axis=1)
        converged = ok & (err <= tol)
        active = ok & ~converged
        if not active.any():
            break
        with np.errstate(invalid="ignore"):
            step = np.linalg.solve(jac[active], resid[active][..., None])[..., 0]
        bad = ~np.isfinite(step).all(axis=1)
        step[bad] = 0.0
        new_slopes = slopes.copy()
        new_slopes[active] -= step
        new_f, new_ok = evaluate(new_slopes)
        ds = new_slopes - slopes
        df = new_f - f
        # Broyden rank-1 update of the per-sample Jacobians.
        upd = active & new_ok & (np.einsum("ij,ij->i", ds, ds) > 0)
        num = df[upd] - np.einsum("ijk,ik->ij", jac[upd], ds[upd])
        denom = np.einsum("ij,ij->i", ds[upd], ds[upd])
        jac[upd] += num[:, :, None] * ds[upd][:, None, :] / denom[:, None, None]
        slopes, f = new_slopes, new_f
        ok = new_ok
        resid = f - targets

    err = np.linalg.norm(np.where(ok[:, None], resid, np.inf), axis=1)
    converged = ok & (err <= tol)
    return slopes, err, converged


def chief_ray_center(prescription, object_point, wavelength_nm):
    """Image-plane intersection of the ray through the stop center.

    Solved by quasi-Newton iteration on the launch direction until the
    stop-surface hit meets ``CHIEF_TOL_MM`` (well inside the 1e-6 mm
    contract; the tight setting keeps mirrored field points registered).
    """
    slopes, info = _chief_state(prescription, object_point, wavelength_nm)
    return info["image_xy"]


def _chief_state(prescription, object_point, wavelength_nm):
    origin = np.asarray(object_point, dtype=float)
    stop = prescription.stop_index
    slopes, err, conv = _aim(
        prescription, origin, np.zeros((1, 2)), wavelength_nm,
        plane=("surface", stop), tol=CHIEF_TOL_MM,
    )
    if not conv[0]:
        raise RayTraceError(
            f"no chief ray found for object point {tuple(origin)} "
            f"(residual {err[0]:.3g} mm)"
        )
    dirs = _slope_to_direction(slopes)
    res = trace_batch(prescription, origin[None, :], dirs, wavelength_nm, clip=False)
    img, _ = propagate_to_plane(res["position"], res["direction"], res["opl"],
                                prescription.image_plane_z_mm)
    pup, _ = propagate_to_plane(res["position"], res["direction"], res["opl"],
                                prescription.exit_pupil_z_mm)
    return slopes, {
        "image_xy": (float(img[0, 0]), float(img[0, 1])),
        "pupil_xy": (float(pup[0, 0]), float(pup[0, 1])),
        "direction": res["direction"][0],
    }


def trace(prescription, object_point, pupil_xy, wavelength_nm) -> TraceResult:
    """Trace from the object point to one pupil-plane coordinate.

    The launch direction is solved so the ray crosses the exit-pupil plane
    at ``pupil_xy``; rays clipped by any aperture (or lost to TIR) raise
    ``Vignetted``.
    """
    res = trace_pupil_points(
        prescription, object_point, np.atleast_2d(pupil_xy), wavelength_nm
    )
    if not res["alive"][0]:
        raise Vignetted(f"pupil coordinate {tuple(pupil_xy)} is not reachable")
    return TraceResult(
        pupil_xy=(float(res["pupil"][0, 0]), float(res["pupil"][0, 1])),
        direction=res["direction"][0],
        path_length_mm=float(res["opl"][0]),
        pupil_z_mm=prescription.exit_pupil_z_mm,
    )


def trace_pupil_points(prescription, object_point, targets, wavelength_nm,
                       slopes0=None, jacobian0=None):
    """Aim rays at pupil-plane targets (M, 2); return their exit states.

    Result arrays: ``pupil`` (M, 2) actual crossings, ``direction`` (M, 3),
    ``opl`` (M,) to the pupil plane, ``alive`` (M,) with aperture clipping
    applied, ``image`` (M, 2) geometric continuation to the image plane.
    """
    origin = np.asarray(object_point, dtype=float)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    z_pupil = prescription.exit_pupil_z_mm
    slopes, err, conv = _aim(
        prescription, origin, targets, wavelength_nm,
        plane=("z", z_pupil), tol=AIM_TOL_MM,
        slopes0=slopes0, jacobian0=jacobian0,
    )
    dirs = _slope_to_direction(slopes)
    origins = np.broadcast_to(origin, (targets.shape[0], 3))
    res = trace_batch(prescription, origins, dirs, wavelength_nm, clip=True)
    alive = (res["status"] == ALIVE) & conv
    with np.errstate(invalid="ignore", divide="ignore"):
        pupil, opl = propagate_to_plane(res["position"], res["direction"], res["opl"], z_pupil)
        image, _ = propagate_to_plane(res["position"], res["direction"], res["opl"],
                                      prescription.image_plane_z_mm)
    return {
        "pupil": pupil[:, :2],
        "direction": res["direction"],
        "opl": opl,
        "alive": alive,
        "image": image[:, :2],
        "slopes": slopes,
    }


def probe_beam(prescription, object_point, wavelength_nm, n_fan=21):
    """Survey the transmitted beam for one object point.

    Launches a fan of rays spread over the stop aperture (aimed loosely at
    the stop surface) and returns the surviving footprint on the pupil plane
    and the geometric spot on the image plane.  Used to size sampling
    windows before the coherent PSF computation.
    """
    origin = np.asarray(object_point, dtype=float)
    stop = prescription.stop_index
    r = prescription.surfaces[stop].semi_diameter
    u = np.linspace(-1.0, 1.0, n_fan)
    gx, gy = np.meshgrid(u, u, indexing="ij")
    inside = gx**2 + gy**2 <= 1.0
    targets = np.stack([gx[inside], gy[inside]], axis=1) * r

    slopes, err, conv = _aim(
        prescription, origin, targets, wavelength_nm,
        plane=("surface", stop), tol=1e-6, max_iter=25,
    )
    dirs = _slope_to_direction(slopes)
    origins = np.broadcast_to(origin, (targets.shape[0], 3))
    res = trace_batch(prescription, origins, dirs, wavelength_nm, clip=True)
    alive = (res["status"] == ALIVE) & conv
    if not alive.any():
        raise Vignetted(f"object point {tuple(origin)} sees no open aperture")
    with np.errstate(invalid="ignore", divide="ignore"):
        pupil, _ = propagate_to_plane(res["position"], res["direction"], res["opl"],
                                      prescription.exit_pupil_z_mm)
        image, _ = propagate_to_plane(res["position"], res["direction"], res["opl"],
                                      prescription.image_plane_z_mm)
    return {
        "pupil": pupil[alive, :2],
        "image": image[alive, :2],
        "alive_fraction": float(alive.mean()),
    }
