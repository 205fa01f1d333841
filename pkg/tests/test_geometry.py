import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import cumulative_trapezoid

import curves
from helpers import edge_crack, unit_square
from viscofrac.domain import DomainSpec
from viscofrac.geometry import (CrackPath, LengthProfile, build_tip_motion,
                                extend_path, extension_constants, find_self_intersection,
                                sliding_motion, turn_path, validate_path, validate_profile)

MU, M = 0.45, 1000.0
WIDE = DomainSpec.rectangle(-5, -5, 6, 5)


def sinusoid(A, w, r, ds, length=1.0):
    """``x -> (x, A sin(w x))`` resampled at uniform arc length, plus the x of each sample."""
    x = np.linspace(0, length, 400_001)
    s = cumulative_trapezoid(np.sqrt(1 + (A * w * np.cos(w * x)) ** 2), x, initial=0)
    n = int(s[-1] / ds)
    arcs = ds * np.arange(n + 1)
    xs = np.interp(arcs, s, x)
    pts = np.column_stack([xs, A * np.sin(w * xs)])
    return CrackPath(arcs - arcs[n // 2], pts, r, 1e12), xs


def disk_oracle(A, w, r, ds, xs, pts) -> bool:
    """Pairwise sample-to-disk distances with analytic normals."""
    t = np.column_stack([np.ones_like(xs), A * w * np.cos(w * xs)])
    t /= np.linalg.norm(t, axis=1)[:, None]
    nrm = np.column_stack([-t[:, 1], t[:, 0]])
    for sign in (1, -1):
        c = pts + sign * r * nrm
        d = np.linalg.norm(c[:, None, :] - pts[None, :, :], axis=2)
        if np.max(r - d) > ds * ds / r:
            return False
    return True


class TestValidatePath:
    def test_straight_segment_to_centre_passes(self):
        path = CrackPath.straight((0, 0.5), (1, 0), -0.25, 0.25, 0.05, 1.0)
        rep = validate_path(path, unit_square())
        assert rep.passed, rep.summary()

    def test_arc_of_radius_half_r_fails_disks(self):
        r = 0.05
        path = CrackPath.from_curvature((0, 0), (1, 0), -0.05, 0.05, r, 1e6, lambda s: 2 / r)
        rep = validate_path(path, WIDE, check_transversal=False)
        assert not rep.checks["tangent_disks"].passed

    def test_sinusoids_agree_with_pairwise_distance_oracle(self):
        rng = np.random.default_rng(0)
        r = 0.1
        verdicts = []
        for _ in range(50):
            A = rng.uniform(0.01, 0.1)
            w = math.sqrt(rng.uniform(5, 20) / A)
            path, xs = sinusoid(A, w, r, r / 32)
            got = validate_path(path, WIDE, check_transversal=False).checks["tangent_disks"].passed
            assert got == disk_oracle(A, w, r, r / 32, xs, path.points)
            verdicts.append(got)
        assert 0 < sum(verdicts) < 50  # both sides of the boundary were exercised

    def test_resolution_invariance_near_boundary(self):
        rng = np.random.default_rng(1)
        r, agree = 0.1, 0
        for _ in range(20):
            A = rng.uniform(0.01, 0.1)
            w = math.sqrt(rng.uniform(8, 12) / A)
            coarse = validate_path(sinusoid(A, w, r, r / 32)[0], WIDE, check_transversal=False)
            fine = validate_path(sinusoid(A, w, r, r / 64)[0], WIDE, check_transversal=False)
            agree += coarse.checks["tangent_disks"].passed == fine.checks["tangent_disks"].passed
        assert agree >= 19

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError):
            CrackPath(np.arange(3.0), np.zeros((3, 2)), 0.1, 1.0)

    def test_self_intersection_reported(self):
        t = np.linspace(0, 1.9 * np.pi, 200)
        loop = np.column_stack([np.cos(t) - t / 4, np.sin(2 * t) / 2])
        assert find_self_intersection(loop) is not None
        path = CrackPath(np.linspace(-0.5, 1.0, 200), loop, 0.01, 1e9)
        rep = validate_path(path, WIDE, check_transversal=False)
        assert not rep.checks["simple"].passed
        assert "intersect" in rep.checks["simple"].detail

    def test_initial_curve_agreement(self):
        init = edge_crack()
        grown = turn_path(init, 0.0, math.radians(10), 0.2, 0.09)
        assert validate_path(grown, unit_square(), initial=init).checks["initial"].passed
        shifted = CrackPath(grown.arcs, grown.points + [0.0, 1e-4], grown.r, grown.L)
        assert not validate_path(shifted, unit_square(), initial=init).checks["initial"].passed

    def test_transversality(self):
        ok = edge_crack(0.1)
        assert validate_path(ok, unit_square()).checks["transversal"].passed
        grazing = CrackPath.straight((0, 0.5), (0.2, 1.0), -0.3, 0.0, 0.1, 1e4)
        assert not validate_path(grazing, unit_square()).checks["transversal"].passed

    @pytest.mark.parametrize("condition", curves.CONDITIONS)
    def test_single_violation_flagged_alone(self, condition):
        rng = np.random.default_rng(7)
        for _ in range(3):
            rep = validate_path(curves.violating(condition, rng), unit_square())
            assert rep.failed == [condition], rep.summary()

    def test_prefixes_are_nested(self):
        path = turn_path(edge_crack(), 0.0, math.radians(10), 0.3, 0.09)
        short, long_ = path.truncate(0.1), path.truncate(0.2)
        n = len(short.arcs)
        np.testing.assert_array_equal(long_.points[:n], short.points)


class TestExtendPath:
    def test_straight_extension(self):
        path = CrackPath.straight((0, 0.5), (1, 0), -0.3, 0.1, 0.1, 1e4)
        ext = extend_path(path, unit_square())
        r_hat, _ = extension_constants(path.r, path.L)
        assert ext.b == pytest.approx(path.b + r_hat, abs=1e-15)
        tail = ext.arcs > path.b
        np.testing.assert_allclose(ext.points[tail, 1], 0.5, atol=1e-12)
        np.testing.assert_allclose(ext.points[tail, 0], ext.arcs[tail] + 0.3, atol=1e-12)

    def test_end_parameter_exact(self):
        path = curves.admissible(np.random.default_rng(3))[0]
        ext = extend_path(path)
        assert ext.b == path.b + extension_constants(path.r, path.L)[0]

    def test_constant_curvature_extension_within_relaxed_budget(self):
        r = 0.05
        path = CrackPath.from_curvature((0, 0), (1, 0), -0.1, 0.1, r, 1e4, lambda s: 1 / (2 * r))
        ext = extend_path(path)
        r_hat, L_hat = extension_constants(r, path.L)
        assert (ext.r, ext.L) == (r_hat, L_hat)
        assert np.max(np.abs(ext.curvature)) <= 1 / r_hat
        rep = validate_path(ext, WIDE, check_transversal=False)
        assert rep.checks["tangent_disks"].passed and rep.checks["third_derivative"].passed

    def test_extension_into_boundary_rejected(self):
        path = CrackPath.straight((0, 0.5), (1, 0), -0.3, 0.65, 0.05, 1e4)
        with pytest.raises(ValueError, match="clearance"):
            extend_path(path, unit_square())


class TestTurnPath:
    @pytest.mark.parametrize("deg", [-15, -5, 0, 10, 15])
    def test_kinked_continuation_is_admissible(self, deg):
        init = edge_crack()
        path = turn_path(init, 0.0, math.radians(deg), 0.2, 0.09)
        assert validate_path(path, unit_square(), initial=init).passed
        t = path.tangent(path.b)
        assert math.atan2(t[1], t[0]) == pytest.approx(math.radians(deg), abs=1e-6)


class TestValidateProfile:
    def test_constant_passes(self):
        assert validate_profile(LengthProfile.constant(0.0, 0.0, 1.0, MU, M)).passed

    def test_speed_above_bound_fails(self):
        rep = validate_profile(LengthProfile.linear(0.0, 1.01 * MU, 0.0, 1.0, MU, M))
        assert rep.failed == ["speed"]

    def test_smoothstep_bounds_match_finite_differences(self):
        T0, T1 = 0.0, 0.5
        prof = LengthProfile.ramp(0.1, MU * (T1 - T0) / 2, T0, T1, MU, M)
        t = np.linspace(T0, T1, 1000)
        h = 1e-4
        s = lambda x: prof(np.clip(x, T0, T1))  # noqa: E731
        v = (s(t + h) - s(t - h)) / (2 * h)
        acc = (s(t + h) - 2 * s(t) + s(t - h)) / h**2
        inner = t[(t > T0 + 2 * h) & (t < T1 - 2 * h)]
        jerk = (s(inner + 2 * h) - 2 * s(inner + h) + 2 * s(inner - h) - s(inner - 2 * h)) / (2 * h**3)
        b = prof.pieces[0].bounds()
        assert np.max(v) == pytest.approx(b["max_speed"], rel=1e-4)
        assert np.max(np.abs(acc)) == pytest.approx(b["acc"], rel=1e-3)
        # the jerk peaks at the window ends, which centred stencils only approach
        assert np.max(np.abs(jerk)) <= b["jerk"] * (1 + 1e-6)
        assert np.max(np.abs(jerk)) == pytest.approx(b["jerk"], rel=1e-2)
        assert np.min(v) >= -1e-9
        fd_ok = (np.max(v) <= MU and np.max(np.abs(acc)) <= M and np.max(np.abs(jerk)) <= M)
        assert validate_profile(prof).passed == fd_ok

    def test_jerk_bound_enforced(self):
        prof = LengthProfile.ramp(0.0, 0.09, 0.0, 0.4, MU, M)
        assert validate_profile(prof).failed == ["jerk_lip"]

    def test_empty_window_rejected(self):
        with pytest.raises(ValueError):
            LengthProfile.constant(0.0, 1.0, 1.0, MU, M)

    def test_junctions_and_restriction(self):
        a = LengthProfile.linear(0.0, 0.2, 0.0, 0.5, MU, M)
        prof = a.then(LengthProfile.linear(0.1, 0.2, 0.5, 1.0, MU, M))
        assert prof.sing() == (0.0, 0.5, 1.0)
        assert prof.sing(jumps_only=True) == (0.0, 1.0)
        kinked = a.then(LengthProfile.constant(0.1, 0.5, 1.0, MU, M))
        assert kinked.sing(jumps_only=True) == (0.0, 0.5, 1.0)
        part = prof.restrict(0.25, 0.75)
        assert part.T0 == 0.25 and part.T1 == 0.75
        assert part(0.6) == pytest.approx(prof(0.6))
        with pytest.raises(ValueError):
            a.then(LengthProfile.constant(0.2, 0.5, 1.0, MU, M))

    @settings(max_examples=50, deadline=None)
    @given(speed=st.floats(0.0, MU), t=st.floats(0.0, 1.0), dt=st.floats(0.0, 1.0))
    def test_linear_profiles_are_monotone(self, speed, t, dt):
        prof = LengthProfile.linear(0.0, speed, 0.0, 2.0, MU, M)
        assert prof(t + dt) >= prof(t)


@pytest.fixture(scope="module")
def motion():
    path, _, _ = curves.admissible(np.random.default_rng(11))
    path = path.truncate(0.1)
    rho = 0.012
    s0 = float(path.arcs[path.grid_index(0.05)])
    # a slide of rho / 5 keeps the Jacobian inside 1 +- 0.3
    T = rho / (5 * MU)
    prof = LengthProfile.linear(s0, MU, 0.0, T, MU, M)
    return build_tip_motion(path, prof, 0.0, T, rho, epsilon=0.3, domain=unit_square())


class TestTipMotion:

    def test_identity_at_start(self, motion):
        y = motion.sample_points(500, seed=1)
        np.testing.assert_array_equal(motion.forward(motion.t0, y), y)

    def test_fixed_outside_ball(self, motion):
        rng = np.random.default_rng(2)
        y = rng.uniform(0, 1, size=(2000, 2))
        far = np.linalg.norm(y - motion.center, axis=1) > 2 * motion.rho
        np.testing.assert_array_equal(motion.forward(motion.t1, y[far]), y[far])

    def test_jacobian_within_tolerance(self, motion):
        y = motion.sample_points(1000, seed=3)
        for t in np.linspace(motion.t0, motion.t1, 5):
            det = motion.jacobian_det(t, y)
            assert np.all(det >= 1 - motion.epsilon) and np.all(det <= 1 + motion.epsilon)

    def test_inverse_recovers_points(self, motion):
        y = motion.sample_points(500, seed=4)
        x = motion.forward(motion.t1, y)
        np.testing.assert_allclose(motion.inverse(motion.t1, x), y, atol=1e-10)

    def test_speed_bound(self, motion):
        y = motion.sample_points(300, seed=5)
        t = 0.5 * (motion.t0 + motion.t1)
        speed = np.linalg.norm(motion.velocity(t, y), axis=1)
        assert np.max(speed) <= MU * (1 + motion.epsilon)

    def test_tip_lands_on_curve(self, motion):
        tip = motion.forward(motion.t1, motion.center[None, :])[0]
        np.testing.assert_allclose(tip, motion.path.point(motion.profile(motion.t1)), atol=1e-12)

    def test_window_too_long_rejected(self):
        path = edge_crack(0.2)
        prof = LengthProfile.linear(0.0, MU, 0.0, 1.0, MU, M)
        with pytest.raises(ValueError, match="window"):
            build_tip_motion(path, prof, 0.0, 1.0, 0.02)

    def test_excessive_slide_rejected(self):
        path = extend_path(edge_crack(0.2))
        prof = LengthProfile.linear(0.0, MU, 0.0, 0.2, MU, M)
        with pytest.raises(ValueError, match="determinant"):
            sliding_motion(path, prof, 0.0, 0.0, 0.2, 0.02, 0.3)
