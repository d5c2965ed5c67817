import numpy as np
import pytest

from cuboidnav.trajectory import (
    BoundaryState,
    Limits,
    PolyTrajectory,
    WaypointTrajectory,
    basis_matrices,
    basis_matrix,
    evaluate,
    limit_penalty,
    sample_table,
    save_table,
    second_difference_matrix,
    smoothness_cost,
    stomp_samples,
    waypoint_accelerations,
    waypoint_velocities,
)


def line_poly(start, velocity, duration, degree=5):
    start = np.asarray(start, dtype=float)
    velocity = np.asarray(velocity, dtype=float)
    coeffs = np.zeros((degree + 1, 3))
    coeffs[0] = start
    coeffs[1] = velocity * duration  # normalized-time slope
    return PolyTrajectory(coeffs[:, 0], coeffs[:, 1], coeffs[:, 2], duration=duration, degree=degree)


class TestBasis:
    def test_row_at_zero(self):
        p, _, _ = basis_matrices([0.0], degree=4, duration=2.0)
        np.testing.assert_array_equal(p[0], [1.0, 0.0, 0.0, 0.0, 0.0])

    def test_velocity_matches_finite_difference(self):
        degree, duration = 6, 3.0
        h = 1e-5
        times = np.linspace(0.3, 2.7, 9)
        _, pd, _ = basis_matrices(times, degree, duration)
        p_plus = basis_matrix(times + h, degree, duration)
        p_minus = basis_matrix(times - h, degree, duration)
        np.testing.assert_allclose(pd, (p_plus - p_minus) / (2 * h), atol=1e-6)

    def test_acceleration_matches_finite_difference(self):
        degree, duration = 6, 3.0
        h = 1e-4
        times = np.linspace(0.3, 2.7, 9)
        _, _, pdd = basis_matrices(times, degree, duration)
        stencil = (
            basis_matrix(times + h, degree, duration)
            - 2 * basis_matrix(times, degree, duration)
            + basis_matrix(times - h, degree, duration)
        ) / h**2
        np.testing.assert_allclose(pdd, stencil, atol=1e-5)

    def test_constant_polynomial_derivatives_vanish(self):
        coeffs = np.zeros(6)
        coeffs[0] = 4.2
        _, pd, pdd = basis_matrices(np.linspace(0, 2, 7), degree=5, duration=2.0)
        np.testing.assert_array_equal(pd @ coeffs, np.zeros(7))
        np.testing.assert_array_equal(pdd @ coeffs, np.zeros(7))

    def test_rejects_low_degree(self):
        with pytest.raises(ValueError):
            basis_matrix([0.0], degree=2, duration=1.0)


class TestEvaluate:
    def test_straight_line(self):
        traj = line_poly([1.0, 2.0, 3.0], [0.5, -1.0, 0.0], duration=4.0)
        s = evaluate(traj, np.linspace(0, 4, 11))
        np.testing.assert_allclose(s.velocities, np.tile([0.5, -1.0, 0.0], (11, 1)), atol=1e-12)
        np.testing.assert_allclose(s.accelerations, np.zeros((11, 3)), atol=1e-12)
        np.testing.assert_allclose(s.positions[0], [1, 2, 3], atol=1e-12)
        np.testing.assert_allclose(s.positions[-1], [3, -2, 3], atol=1e-12)

    def test_duplicated_times(self):
        traj = line_poly([0, 0, 0], [1, 0, 0], duration=2.0)
        s = evaluate(traj, [1.0, 1.0])
        np.testing.assert_array_equal(s.positions[0], s.positions[1])

    def test_matches_horner_oracle(self):
        rng = np.random.default_rng(3)
        degree, duration = 7, 5.0
        coeffs = rng.uniform(-2, 2, (degree + 1, 3))
        traj = PolyTrajectory(coeffs[:, 0], coeffs[:, 1], coeffs[:, 2], duration, degree)
        times = rng.uniform(0, duration, 20)
        s = evaluate(traj, times)
        for r, t in enumerate(times):
            u = t / duration
            for axis in range(3):
                acc = 0.0
                for c in reversed(coeffs[:, axis]):
                    acc = acc * u + c
                assert s.positions[r, axis] == pytest.approx(acc, abs=1e-12)


class TestSmoothness:
    def test_line_is_zero_polynomial(self):
        traj = line_poly([0, 0, 0], [2.0, 1.0, -1.0], duration=3.0)
        assert smoothness_cost(traj) == 0.0

    def test_line_is_zero_waypoints(self):
        points = np.outer(np.arange(6), [1.0, 0.5, 0.0])
        assert smoothness_cost(WaypointTrajectory(points, dt=0.5)) == 0.0

    def test_cubic_closed_form(self):
        # x(t) = t^3 on [0,1]: jerk = 6, integral of 36 over unit time
        traj = PolyTrajectory([0, 0, 0, 1], [0, 0, 0, 0], [0, 0, 0, 0], duration=1.0, degree=3)
        assert smoothness_cost(traj) == pytest.approx(36.0, abs=1e-12)

    def test_gram_matches_numerical_quadrature(self):
        rng = np.random.default_rng(5)
        degree, duration = 7, 2.5
        coeffs = rng.uniform(-1, 1, (degree + 1, 3))
        traj = PolyTrajectory(coeffs[:, 0], coeffs[:, 1], coeffs[:, 2], duration, degree)
        times = np.linspace(0, duration, 10_001)
        jerks = evaluate(traj, times).jerks
        quad = np.trapezoid(np.sum(jerks**2, axis=1), times)
        assert smoothness_cost(traj) == pytest.approx(quad, rel=1e-6)

    def test_waypoint_variant_units(self):
        # constant acceleration a on one axis: cost = sum a^2 dt over interior
        dt, n, a = 0.5, 8, 2.0
        t = np.arange(n) * dt
        points = np.zeros((n, 3))
        points[:, 0] = 0.5 * a * t**2
        cost = smoothness_cost(WaypointTrajectory(points, dt))
        assert cost == pytest.approx((n - 2) * a**2 * dt, rel=1e-9)


class TestLimitPenalty:
    def test_within_limits(self):
        traj = line_poly([0, 0, 0], [1.0, 0.0, 0.0], duration=2.0)
        assert limit_penalty(traj, Limits(v_max=2.0, a_max=1.0), np.linspace(0, 2, 9)) == 0.0

    def test_constant_overspeed(self):
        limits = Limits(v_max=2.0, a_max=5.0)
        traj = line_poly([0, 0, 0], [3.0, 0.0, 0.0], duration=2.0)
        times = np.linspace(0, 2, 7)
        assert limit_penalty(traj, limits, times) == pytest.approx(len(times) * 1.0, abs=1e-9)

    def test_monotone_in_tightening(self):
        traj = line_poly([0, 0, 0], [3.0, 1.0, 0.0], duration=2.0)
        times = np.linspace(0, 2, 9)
        penalties = [limit_penalty(traj, Limits(v, 5.0), times) for v in (4.0, 3.0, 2.0, 1.0)]
        assert all(b >= a for a, b in zip(penalties, penalties[1:]))


class TestStomp:
    def base(self, n=10, dt=0.5):
        points = np.linspace([0, 0, 2], [9, 3, 2], n)
        return WaypointTrajectory(points, dt)

    def test_zero_scale(self):
        base = self.base()
        for s in stomp_samples(base, 5, scale=0.0, rng_seed=1):
            np.testing.assert_array_equal(s.points, base.points)

    def test_endpoints_fixed(self):
        base = self.base()
        for s in stomp_samples(base, 20, scale=1.5, rng_seed=2):
            np.testing.assert_array_equal(s.points[0], base.points[0])
            np.testing.assert_array_equal(s.points[-1], base.points[-1])

    def test_determinism(self):
        base = self.base()
        a = stomp_samples(base, 4, scale=1.0, rng_seed=7)
        b = stomp_samples(base, 4, scale=1.0, rng_seed=7)
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.points, sb.points)

    def test_rejects_short(self):
        with pytest.raises(ValueError):
            WaypointTrajectory(np.zeros((3, 3)), dt=0.5)

    def test_covariance_matches_inverse_gram(self):
        n, dt, scale, draws = 8, 0.5, 0.7, 10_000
        base = self.base(n=n, dt=dt)
        samples = stomp_samples(base, draws, scale=scale, rng_seed=11)
        noise = np.stack([s.points[1:-1, 0] - base.points[1:-1, 0] for s in samples])
        emp = noise.T @ noise / draws
        a_int = second_difference_matrix(n, dt)[:, 1:-1]
        want = scale**2 * np.linalg.inv(a_int.T @ a_int)
        np.testing.assert_allclose(emp, want, rtol=0.10, atol=0.10 * np.abs(want).max())

    def test_expected_second_difference_energy(self):
        n, dt, scale, draws = 10, 0.4, 1.2, 10_000
        base = self.base(n=n, dt=dt)
        a_op = second_difference_matrix(n, dt)
        base_energy_rows = a_op @ base.points  # subtracted out below
        total = 0.0
        for s in stomp_samples(base, draws, scale=scale, rng_seed=13):
            eps_second_diff = a_op @ s.points - base_energy_rows
            total += np.sum(eps_second_diff**2)
        expected = scale**2 * (n - 2) * 3
        assert total / draws == pytest.approx(expected, rel=0.10)


class TestFiniteDifferenceHelpers:
    def test_velocity_of_line(self):
        points = np.outer(np.arange(6), [2.0, -1.0, 0.5])
        v = waypoint_velocities(points, dt=1.0)
        np.testing.assert_allclose(v, np.tile([2.0, -1.0, 0.5], (6, 1)), atol=1e-12)

    def test_acceleration_of_parabola(self):
        t = np.arange(7) * 0.5
        points = np.zeros((7, 3))
        points[:, 1] = 3.0 * t**2
        a = waypoint_accelerations(points, dt=0.5)
        np.testing.assert_allclose(a[:, 1], np.full(7, 6.0), atol=1e-9)


class TestExport:
    def test_header_and_shape(self, tmp_path):
        traj = line_poly([0, 0, 1], [1.0, 0.0, 0.0], duration=2.0)
        path = tmp_path / "traj.csv"
        save_table(traj, path, dt=0.5)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "t,x,y,z,vx,vy,vz,ax,ay,az"
        assert len(lines) == 1 + 5  # t = 0, 0.5, ..., 2.0
        first = [float(v) for v in lines[1].split(",")]
        assert first == pytest.approx([0, 0, 0, 1, 1, 0, 0, 0, 0, 0], abs=1e-9)

    def test_waypoint_table(self):
        points = np.outer(np.arange(5), [1.0, 0.0, 0.0])
        table = sample_table(WaypointTrajectory(points, dt=0.25))
        assert table.shape == (5, 10)
        np.testing.assert_allclose(table[:, 0], np.arange(5) * 0.25)
        np.testing.assert_allclose(table[:, 4], np.full(5, 4.0), atol=1e-12)


class TestBoundaryState:
    def test_at_rest(self):
        b = BoundaryState.at_rest([1, 2, 3])
        np.testing.assert_array_equal(b.velocity, np.zeros(3))

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            BoundaryState(np.array([np.nan, 0, 0]), np.zeros(3), np.zeros(3))
