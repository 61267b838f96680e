import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from probenorm.contact import (
    ContactModelConfig,
    MeshSurface,
    PlanarSurface,
    ProbePose,
    ProbeTip,
    RoughSurface,
    TiltedSurface,
    angular_error,
    contact_residual,
    normal_to_angles,
    probe_axis,
    probe_frame,
    sense_force,
    true_normal,
)
from probenorm.mesh import NoContactError, bundled_mesh_path, load_mesh
from probenorm.objective import ObjectiveConfig, objective

QUIET = dict(sensor_noise_sigma=0.0)


class TestProbeAxis:
    def test_identity(self):
        assert np.allclose(probe_axis(ProbePose(0, 0)), [0, 0, -1], atol=1e-15)

    def test_quarter_turn_out_plane(self):
        d = probe_axis(ProbePose(90, 0))
        assert abs(d[2]) < 1e-12 and abs(abs(d[1]) - 1) < 1e-12

    @given(st.floats(-89, 89), st.floats(-89, 89))
    def test_unit_length(self, a, b):
        assert abs(np.linalg.norm(probe_axis(ProbePose(a, b))) - 1) < 1e-12

    @settings(max_examples=200)
    @given(st.floats(-80, 80), st.floats(-80, 80))
    def test_matches_quaternion_composition(self, a, b):
        # out-plane about x, then in-plane about the rotated y
        q = Rotation.from_euler("x", a, degrees=True) * Rotation.from_euler("y", b, degrees=True)
        ref = q.apply([0.0, 0.0, -1.0])
        d = probe_axis(ProbePose(a, b))
        assert np.allclose(d, ref, atol=1e-12)
        angle = math.degrees(math.acos(np.clip(-d[2], -1, 1)))
        # the composed turn moves the axis by arccos(cos a cos b)
        expect = math.degrees(math.acos(math.cos(math.radians(a)) * math.cos(math.radians(b))))
        assert abs(angle - expect) < 1e-6

    def test_frame_is_rotation(self):
        r = probe_frame(ProbePose(12.0, -7.0))
        assert np.allclose(r.T @ r, np.eye(3), atol=1e-14)
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-14)


class TestNormals:
    def test_planar(self):
        s = PlanarSurface(**QUIET)
        for at in [(0, 0, 0), (3.0, -2.0, 0.0)]:
            assert true_normal(s, at).tolist() == [0, 0, 1]

    def test_tilted_about_x(self):
        n = true_normal(TiltedSurface(tilt_axis="x", tilt_deg=10.0, **QUIET))
        assert np.allclose(n, [0, -0.17364817766693033, 0.984807753012208], atol=1e-12)

    def test_tilt_range(self):
        with pytest.raises(ValueError):
            TiltedSurface(tilt_deg=45.0)

    def test_rough_is_seeded(self):
        a = RoughSurface(rng_seed=4, **QUIET)
        b = RoughSurface(rng_seed=4, **QUIET)
        at = (0.03, -0.01, 0.0)
        assert true_normal(a, at).tobytes() == true_normal(b, at).tobytes()
        assert not np.allclose(true_normal(a, at), true_normal(RoughSurface(rng_seed=5), at))

    @given(st.integers(0, 1000), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
    def test_rough_deflection_bounded(self, seed, x, y):
        s = RoughSurface(rng_seed=seed, max_deflection_deg=5.0, **QUIET)
        n = true_normal(s, (x, y, 0.0))
        assert math.degrees(math.acos(n[2])) <= 5.0 + 1e-9

    def test_rough_limit(self):
        with pytest.raises(ValueError):
            RoughSurface(max_deflection_deg=12.0)

    @given(st.floats(-30, 30), st.floats(-30, 30))
    def test_normal_to_angles_inverts_axis(self, a, b):
        n = -probe_axis(ProbePose(a, b))
        assert np.allclose(normal_to_angles(n), (a, b), atol=1e-9)


class TestForce:
    cfg = ContactModelConfig(desired_force=5.0)

    def test_aligned(self):
        f = sense_force(ProbePose(0, 0), PlanarSurface(**QUIET), self.cfg)
        assert np.allclose(f.as_array(), [0, 0, 5], atol=1e-12)

    def test_forty_five_in_plane(self):
        f = sense_force(ProbePose(0, 45), PlanarSurface(**QUIET), self.cfg)
        assert f.fz == pytest.approx(2.5, abs=1e-12)
        assert abs(f.fx) == pytest.approx(2.5, abs=1e-12)
        assert abs(f.fy) < 1e-12

    def test_magnitude_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            a, b = rng.uniform(-60, 60, 2)
            s = TiltedSurface(tilt_axis="xy"[rng.integers(2)], tilt_deg=rng.uniform(-20, 20), **QUIET)
            p = ProbePose(a, b)
            cos_g = math.cos(math.radians(angular_error(p, s)))
            if cos_g <= 0:
                continue
            f = sense_force(p, s, self.cfg)
            assert np.linalg.norm(f.as_array()) == pytest.approx(5.0 * cos_g, abs=1e-12)
            assert f.fz == pytest.approx(5.0 * cos_g**2, abs=1e-12)

    def test_no_contact(self):
        with pytest.raises(NoContactError):
            sense_force(ProbePose(0, 90), PlanarSurface(**QUIET), self.cfg)

    def test_noise_needs_rng(self):
        with pytest.raises(ValueError):
            sense_force(ProbePose(0, 0), PlanarSurface(sensor_noise_sigma=0.05))

    def test_noise_is_seeded(self):
        s = PlanarSurface(sensor_noise_sigma=0.05)
        poses = [ProbePose(a, -a) for a in range(-5, 6)]
        run = lambda: [sense_force(p, s, rng=r).as_array() for r in [np.random.default_rng(9)] for p in poses]
        assert np.array_equal(np.array(run()), np.array(run()))

    def test_noise_spread(self):
        s = PlanarSurface(sensor_noise_sigma=0.05)
        rng = np.random.default_rng(1)
        r = np.array([sense_force(ProbePose(0, 0), s, rng=rng).as_array() for _ in range(4000)])
        assert np.allclose(r.std(axis=0), 0.05, rtol=0.05)
        assert np.allclose(r.mean(axis=0), [0, 0, 5], atol=0.005)


class TestFrameBalance:
    @settings(max_examples=200)
    @given(st.floats(-40, 40), st.floats(-40, 40), st.floats(-20, 20))
    def test_frictionless_residual_is_tangential(self, a, b, tilt):
        s = TiltedSurface(tilt_axis="y", tilt_deg=tilt, **QUIET)
        cfg = ContactModelConfig(desired_force=5.0)
        p = ProbePose(a, b)
        reading = sense_force(p, s, cfg).as_array()
        world = probe_frame(p) @ reading
        n = true_normal(s)
        res = contact_residual(p, s, cfg)
        assert np.allclose(5.0 * probe_axis(p) + world, res, atol=1e-9)
        assert abs(res @ n) < 1e-9
        sin_g = np.linalg.norm(np.cross(probe_axis(p), n))
        assert np.linalg.norm(res) == pytest.approx(5.0 * sin_g, abs=1e-9)

    def test_friction_holds_small_tilt(self):
        s = PlanarSurface(**QUIET)
        cfg = ContactModelConfig(desired_force=5.0, friction_coeff=0.5)
        # tan(10 deg) < 0.5, so friction takes the whole tangential load
        assert np.allclose(contact_residual(ProbePose(10, 0), s, cfg), 0, atol=1e-9)


class TestAngularError:
    s = PlanarSurface(**QUIET)

    def test_aligned(self):
        assert angular_error(ProbePose(0, 0), self.s) == 0.0

    def test_single_axis(self):
        assert angular_error(ProbePose(10, 0), self.s) == pytest.approx(10.0, abs=1e-12)

    def test_two_axes(self):
        assert angular_error(ProbePose(10, 10), self.s) == pytest.approx(14.106, abs=5e-4)

    @given(st.floats(-179, 179), st.floats(-89, 89))
    def test_range(self, a, b):
        assert 0 <= angular_error(ProbePose(a, b), self.s) <= 180


def _sweep_argmax(s, mode, lo=-15.0, hi=15.0, n=61):
    hold = normal_to_angles(true_normal(s))
    grid = np.linspace(lo, hi, n)
    cfg = ObjectiveConfig(lam=0.3, epsilon=1.0)
    poses = [s.pose(a, hold[1]) if mode == "out" else s.pose(hold[0], a) for a in grid]
    vals = [objective(sense_force(p, s), cfg) for p in poses]
    errs = [angular_error(p, s) for p in poses]
    return grid[int(np.argmax(vals))], grid[int(np.argmin(errs))], grid[1] - grid[0]


def _meshes():
    out = []
    for name, pts in [("cube_bevel", [(0.08, 0.0), (0.0, 0.08)]), ("torso", [(0.12, 0.0), (0.0, 0.04)])]:
        m = load_mesh(bundled_mesh_path(name))
        out += [(f"{name}@{x},{y}", MeshSurface.over(m, x, y, **QUIET)) for x, y in pts]
    return out


@pytest.mark.parametrize(
    "label, surface",
    [
        ("planar", PlanarSurface(**QUIET)),
        ("tilted-x", TiltedSurface(tilt_axis="x", tilt_deg=6.0, **QUIET)),
        ("tilted-y", TiltedSurface(tilt_axis="y", tilt_deg=-4.0, **QUIET)),
        ("rough-untextured", RoughSurface(texture_deg=0.0, rng_seed=2, **QUIET)),
    ]
    + _meshes(),
)
@pytest.mark.parametrize("mode", ["out", "in"])
def test_noise_free_optimum_is_aligned(label, surface, mode):
    best, aligned, cell = _sweep_argmax(surface, mode)
    assert abs(best - aligned) <= cell + 1e-9


@pytest.mark.parametrize("seed", range(6))
def test_convex_tip_reads_smoother(seed):
    def roughness(tip):
        s = RoughSurface(rng_seed=seed, probe_tip=tip, **QUIET)
        resid = []
        for a in np.arange(-5.0, 5.0 + 1e-9, 0.05):
            p = s.pose(0.0, a)
            g = math.radians(angular_error(p, s))
            resid.append(sense_force(p, s).fz - 5.0 * math.cos(g) ** 2)
        return np.std(np.diff(resid))

    assert roughness(ProbeTip.convex()) < roughness(ProbeTip.linear())


def test_probe_tip_validation():
    with pytest.raises(ValueError):
        ProbeTip("paddle", 0.01)
    with pytest.raises(ValueError):
        ProbeTip.linear(width=0.0)


def test_mesh_contact_sits_on_surface():
    m = load_mesh(bundled_mesh_path("cube_bevel"))
    s = MeshSurface.over(m, 0.08, 0.0, **QUIET)
    n = true_normal(s)
    assert n == pytest.approx([math.sin(math.radians(8)), 0, math.cos(math.radians(8))], abs=1e-9)
    with pytest.raises(NoContactError):
        MeshSurface.over(m, 5.0, 5.0, **QUIET)
