"""Synthetic wrist-sensor readings for a probe pressed against a surface.

The probe pushes with a constant force ``f_d`` along its own axis.  Contact is
rigid and (by default) frictionless, so the surface answers with a reaction
``f_d * cos(gamma) * n`` along its normal ``n``, where ``gamma`` is the
misalignment between the probe axis and the normal.  Expressed in the probe
frame this gives ``fz = f_d cos^2 gamma`` and a tangential part of magnitude
``f_d cos gamma sin gamma`` that vanishes only at alignment.

Rotation convention: the probe axis is ``Rx(alpha_out) @ Ry(alpha_in) @ (0, 0, -1)``
in the surface-local frame.  Out-plane rotation turns about the array
direction (x), in-plane rotation about the elevation direction (y).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mesh import BVH, NoContactError, TriangleMesh, build_bvh, normal_at, raycast
from .objective import ForceReading

Z_UP = np.array([0.0, 0.0, 1.0])
DOWN = np.array([0.0, 0.0, -1.0])

LINEAR = "linear"
CONVEX = "convex"


@dataclass(frozen=True)
class ProbePose:
    """Probe orientation in degrees plus the (fixed) contact point in metres."""

    alpha_out: float = 0.0
    alpha_in: float = 0.0
    contact_point: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "contact_point", tuple(float(c) for c in self.contact_point))
        if not (math.isfinite(self.alpha_out) and math.isfinite(self.alpha_in)):
            raise ValueError("rotations must be finite")


def rot_x(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def probe_frame(p: ProbePose) -> np.ndarray:
    """Columns are the probe x (array), y (elevation) and z (away from skin) axes."""
    return rot_x(p.alpha_out) @ rot_y(p.alpha_in)


def probe_axis(p: ProbePose) -> np.ndarray:
    """Unit vector pointing from the probe into the surface."""
    d = probe_frame(p) @ DOWN
    return d / np.linalg.norm(d)


def normal_to_angles(n) -> tuple:
    """``(alpha_out, alpha_in)`` in degrees whose probe axis is exactly ``-n``."""
    n = np.asarray(n, dtype=float)
    n = n / np.linalg.norm(n)
    alpha_in = math.degrees(math.asin(max(-1.0, min(1.0, n[0]))))
    alpha_out = math.degrees(math.atan2(-n[1], n[2]))
    return alpha_out, alpha_in


@dataclass(frozen=True)
class ProbeTip:
    """Linear tip of face length ``size`` or convex tip of radius ``size`` (metres).

    ``depth`` is the linear face's extent across the array; convex tips ignore it.
    """

    kind: str = LINEAR
    size: float = 0.040
    depth: float = 0.010

    def __post_init__(self):
        if self.kind not in (LINEAR, CONVEX):
            raise ValueError(f"unknown probe tip {self.kind!r}")
        if not (self.size > 0 and self.depth > 0):
            raise ValueError("tip dimensions must be > 0")

    @classmethod
    def linear(cls, width: float = 0.040, depth: float = 0.010) -> "ProbeTip":
        return cls(LINEAR, width, depth)

    @classmethod
    def convex(cls, radius: float = 0.010) -> "ProbeTip":
        return cls(CONVEX, radius)


@dataclass(frozen=True)
class ContactModelConfig:
    desired_force: float = 5.0
    friction_coeff: float = 0.0

    def __post_init__(self):
        if not self.desired_force > 0:
            raise ValueError("desired_force must be > 0")
        if self.friction_coeff < 0:
            raise ValueError("friction_coeff must be >= 0")


@dataclass(frozen=True, kw_only=True)
class ContactSurface:
    """Base class for surfaces; subclasses supply the normal fields."""

    probe_tip: ProbeTip = field(default_factory=ProbeTip)
    sensor_noise_sigma: float = 0.05
    rng_seed: int = 0
    contact_point: tuple = (0.0, 0.0, 0.0)

    kind = "abstract"

    def __post_init__(self):
        if self.sensor_noise_sigma < 0:
            raise ValueError("sensor_noise_sigma must be >= 0")
        object.__setattr__(self, "contact_point", tuple(float(c) for c in self.contact_point))

    def true_normal(self, at) -> np.ndarray:
        raise NotImplementedError

    def force_normal(self, p: ProbePose) -> np.ndarray:
        """Normal the contact model sees for pose ``p``."""
        return self.true_normal(p.contact_point)

    def pose(self, alpha_out: float = 0.0, alpha_in: float = 0.0) -> ProbePose:
        return ProbePose(alpha_out, alpha_in, self.contact_point)


@dataclass(frozen=True, kw_only=True)
class PlanarSurface(ContactSurface):
    kind = "planar"

    def true_normal(self, at) -> np.ndarray:
        return Z_UP.copy()


_TILT_AXES = {"x": rot_x, "y": rot_y}


@dataclass(frozen=True, kw_only=True)
class TiltedSurface(ContactSurface):
    """Plane tilted by ``tilt_deg`` about the local x or y axis."""

    tilt_axis: str = "x"
    tilt_deg: float = 3.0

    kind = "tilted"

    def __post_init__(self):
        super().__post_init__()
        if self.tilt_axis not in _TILT_AXES:
            raise ValueError("tilt_axis must be 'x' or 'y'")
        if not -45.0 < self.tilt_deg < 45.0:
            raise ValueError("tilt angle must lie in (-45, 45) degrees")

    def true_normal(self, at) -> np.ndarray:
        return _TILT_AXES[self.tilt_axis](self.tilt_deg) @ Z_UP


def _sinusoids(rng, n, wavelength_range):
    theta = rng.uniform(0.0, 2.0 * math.pi, n)
    lam = rng.uniform(*wavelength_range, n)
    k = (2.0 * math.pi / lam)[:, None] * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    phase = rng.uniform(0.0, 2.0 * math.pi, n)
    return k, phase


@dataclass(frozen=True, kw_only=True)
class RoughSurface(ContactSurface):
    """Plane whose normal is perturbed by a seeded smooth field.

    The macro field (eight sinusoids, wavelengths 150-400 mm) defines the true
    normal and never deflects it by more than ``max_deflection_deg``.  A
    fine texture (eight sinusoids, wavelengths 3-8 mm, at most
    ``texture_deg``) only affects the force seen through the tip footprint.
    """

    max_deflection_deg: float = 5.0
    texture_deg: float = 2.0
    macro_wavelength: tuple = (0.150, 0.400)
    texture_wavelength: tuple = (0.003, 0.008)
    macro: tuple = field(init=False, repr=False, compare=False)
    texture: tuple = field(init=False, repr=False, compare=False)

    kind = "rough"

    def __post_init__(self):
        super().__post_init__()
        if not 0.0 <= self.max_deflection_deg <= 10.0:
            raise ValueError("max_deflection_deg must lie in [0, 10]")
        if not 0.0 <= self.texture_deg <= 10.0:
            raise ValueError("texture_deg must lie in [0, 10]")
        rng = np.random.default_rng(self.rng_seed)
        object.__setattr__(self, "macro", _sinusoids(rng, 8, self.macro_wavelength))
        object.__setattr__(self, "texture", _sinusoids(rng, 8, self.texture_wavelength))

    @staticmethod
    def _deflection(xy, waves, max_deg):
        # each slope component is a mean of four unit sinusoids scaled so the
        # combined tilt stays below max_deg
        k, phase = waves
        amp = math.tan(math.radians(max_deg) / math.sqrt(2.0))
        s = np.sin(xy @ k.T + phase)
        return amp * np.stack([s[:, :4].mean(axis=1), s[:, 4:].mean(axis=1)], axis=1)

    def _normals(self, xy, with_texture: bool) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=float))[:, :2]
        slope = self._deflection(xy, self.macro, self.max_deflection_deg)
        if with_texture and self.texture_deg > 0:
            slope = slope + self._deflection(xy, self.texture, self.texture_deg)
        n = np.concatenate([-slope, np.ones((len(xy), 1))], axis=1)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def true_normal(self, at) -> np.ndarray:
        return self._normals(at, with_texture=False)[0]

    def footprint(self, p: ProbePose) -> np.ndarray:
        """Sample points (x, y) of the tip footprint for pose ``p``."""
        frame = probe_frame(p)
        d = frame @ DOWN
        tilt = -d[:2]
        centre = np.asarray(p.contact_point[:2], dtype=float)
        tip = self.probe_tip
        if tip.kind == LINEAR:
            # a flat face rocks onto whichever edge the tilt favours
            arr, elev = frame[:2, 0], frame[:2, 1]
            arr = arr / np.linalg.norm(arr)
            elev = elev / np.linalg.norm(elev)
            edge = math.sin(math.radians(2.0))
            mid = (
                centre
                + 0.25 * tip.size * math.tanh(float(tilt @ arr) / edge) * arr
                + 0.25 * tip.depth * math.tanh(float(tilt @ elev) / edge) * elev
            )
            s = np.linspace(-0.5, 0.5, 17) * tip.size
            return mid + s[:, None] * arr
        mid = centre + tip.size * tilt
        pts = [mid]
        for frac, n_ring in ((0.5, 6), (1.0, 12)):
            ang = np.arange(n_ring) * (2.0 * math.pi / n_ring)
            ring = frac * tip.size * np.stack([np.cos(ang), np.sin(ang)], axis=1)
            pts.extend(mid + ring)
        return np.array(pts)

    def force_normal(self, p: ProbePose) -> np.ndarray:
        n = self._normals(self.footprint(p), with_texture=True).mean(axis=0)
        return n / np.linalg.norm(n)


@dataclass(frozen=True, kw_only=True, eq=False)
class MeshSurface(ContactSurface):
    """Rigid triangle mesh; normals are face normals under the probe ray."""

    mesh: TriangleMesh
    bvh: BVH = None
    standoff: float = 1e-3

    kind = "mesh"

    def __post_init__(self):
        super().__post_init__()
        if self.bvh is None:
            object.__setattr__(self, "bvh", build_bvh(self.mesh))

    @classmethod
    def over(
        cls, mesh: TriangleMesh, x: float, y: float, bvh=None, snap: bool = True, **kw
    ) -> "MeshSurface":
        """Place the contact point where a vertical ray at ``(x, y)`` meets the mesh.

        With ``snap`` the point moves to the centroid of the triangle that was
        hit.  A point on a shared edge has two candidate face normals, and a
        probe ray tilted by a fraction of a millimetre flips between them.
        """
        bvh = bvh or build_bvh(mesh)
        top = float(mesh.vertices[:, 2].max()) + 1.0
        hit = raycast(bvh, mesh, (x, y, top), DOWN)
        if hit is None:
            raise NoContactError(f"no mesh surface below ({x}, {y})")
        point = hit.point
        if snap:
            point = mesh.vertices[mesh.triangles[hit.triangle]].mean(axis=0)
        return cls(mesh=mesh, bvh=bvh, contact_point=tuple(point), **kw)

    def true_normal(self, at) -> np.ndarray:
        at = np.asarray(at, dtype=float)
        return normal_at(self.bvh, self.mesh, at + self.standoff * Z_UP, DOWN)

    def force_normal(self, p: ProbePose) -> np.ndarray:
        d = probe_axis(p)
        origin = np.asarray(p.contact_point, dtype=float) - self.standoff * d
        return normal_at(self.bvh, self.mesh, origin, d)


def true_normal(s: ContactSurface, at=None) -> np.ndarray:
    return s.true_normal(s.contact_point if at is None else at)


def _world_reaction(p: ProbePose, s: ContactSurface, cfg: ContactModelConfig):
    d = probe_axis(p)
    n = s.force_normal(p)
    cos_g = float(-(d @ n))
    # 90 degrees in floating point leaves cos ~ 1e-17
    if cos_g <= 1e-12:
        raise NoContactError(
            f"probe axis at {math.degrees(math.acos(max(-1.0, min(1.0, cos_g)))):.2f} deg "
            "from the normal: no contact"
        )
    fd = cfg.desired_force
    normal_force = fd * cos_g
    reaction = normal_force * n
    tangential = fd * (d + cos_g * n)
    t_mag = float(np.linalg.norm(tangential))
    if cfg.friction_coeff > 0 and t_mag > 0:
        reaction = reaction - tangential * min(1.0, cfg.friction_coeff * normal_force / t_mag)
    return d, n, reaction


def sense_force(
    p: ProbePose,
    s: ContactSurface,
    cfg: ContactModelConfig | None = None,
    rng: np.random.Generator | None = None,
) -> ForceReading:
    """Probe-frame reaction reading, with per-axis Gaussian sensor noise.

    Raises
    ------
    NoContactError
        When the probe axis is 90 degrees or more away from the normal.
    """
    cfg = cfg or ContactModelConfig()
    _, _, reaction = _world_reaction(p, s, cfg)
    reading = probe_frame(p).T @ reaction
    if s.sensor_noise_sigma > 0:
        if rng is None:
            raise ValueError("a noisy surface needs an rng for sensor noise")
        reading = reading + rng.normal(0.0, s.sensor_noise_sigma, 3)
    return ForceReading.from_array(reading)


def contact_residual(
    p: ProbePose, s: ContactSurface, cfg: ContactModelConfig | None = None
) -> np.ndarray:
    """World-frame sum of the applied force and the (noise-free) reaction.

    Its normal component is always zero; what remains is the tangential load
    friction could not hold, which the position-controlled axes absorb.
    """
    cfg = cfg or ContactModelConfig()
    d, _, reaction = _world_reaction(p, s, cfg)
    return cfg.desired_force * d + reaction


def angular_error(p: ProbePose, s: ContactSurface) -> float:
    """Angle in degrees between the reversed probe axis and the true normal."""
    c = float(-(probe_axis(p) @ s.true_normal(p.contact_point)))
    return math.degrees(math.acos(max(-1.0, min(1.0, c))))
