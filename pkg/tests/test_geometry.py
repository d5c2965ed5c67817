import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cuboidnav.geometry import (
    Cuboid,
    CuboidSize,
    GroundPose2D,
    local_transform,
    sdf,
    sdf_batch,
    wrap_angle,
)


def random_cuboid(rng, max_extent=30.0):
    size = CuboidSize(
        length=rng.uniform(0.5, max_extent),
        height=rng.uniform(0.5, max_extent),
        thickness=rng.uniform(0.1, max_extent / 3),
    )
    pose = GroundPose2D(origin=rng.uniform(-40, 40, 2), yaw=rng.uniform(-math.pi, math.pi))
    return Cuboid(pose=pose, size=size)


def face_sampling_distance(cuboid, q, n=200):
    """Min distance from q to a dense sampling of the 6 faces; 0 if q is inside.

    An overestimate of the true surface distance by at most half a sample
    cell diagonal.
    """
    t = local_transform(cuboid)
    body = t.apply(q)
    h = cuboid.size.half_extents
    if np.all(np.abs(body) <= h):
        return 0.0
    u = np.linspace(-1.0, 1.0, n)
    uu, vv = np.meshgrid(u, u, indexing="ij")
    best = np.inf
    for axis in range(3):
        a, b = (axis + 1) % 3, (axis + 2) % 3
        for sign in (-1.0, 1.0):
            pts = np.empty((n * n, 3))
            pts[:, axis] = sign * h[axis]
            pts[:, a] = uu.ravel() * h[a]
            pts[:, b] = vv.ravel() * h[b]
            d = np.linalg.norm(pts - body, axis=1).min()
            best = min(best, d)
    return best


class TestWrapAngle:
    def test_identity_in_range(self):
        assert wrap_angle(0.5) == pytest.approx(0.5, abs=1e-15)

    def test_wraps_over_pi(self):
        assert wrap_angle(math.pi + 0.3) == pytest.approx(-math.pi + 0.3, abs=1e-12)

    def test_pi_maps_to_pi(self):
        assert wrap_angle(math.pi) == pytest.approx(math.pi)
        assert wrap_angle(-math.pi) == pytest.approx(math.pi)

    @given(st.floats(-50, 50))
    def test_range_and_equivalence(self, angle):
        w = wrap_angle(angle)
        assert -math.pi < w <= math.pi
        assert math.cos(w) == pytest.approx(math.cos(angle), abs=1e-9)
        assert math.sin(w) == pytest.approx(math.sin(angle), abs=1e-9)


class TestLocalTransform:
    def test_zero_yaw_identity(self):
        cub = Cuboid(GroundPose2D(origin=(0, 0), yaw=0.0), CuboidSize(length=4, height=2, thickness=1))
        t = local_transform(cub)
        np.testing.assert_allclose(t.rotation, np.eye(3), atol=1e-15)
        np.testing.assert_allclose(t.translation, [0, 0, -1], atol=1e-15)

    def test_quarter_turn_maps_normal_to_body_x(self):
        # at yaw=pi/2 the facade normal is world +y; it must land on body +x
        cub = Cuboid(GroundPose2D(origin=(0, 0), yaw=math.pi / 2), CuboidSize(length=4, height=2, thickness=1))
        t = local_transform(cub)
        np.testing.assert_allclose(t.rotation @ np.array([0.0, 1.0, 0.0]), [1, 0, 0], atol=1e-12)
        np.testing.assert_allclose(t.rotation, np.array([[0, 1, 0], [-1, 0, 0], [0, 0, 1.0]]), atol=1e-12)

    def test_center_maps_to_origin(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            cub = random_cuboid(rng)
            t = local_transform(cub)
            np.testing.assert_allclose(t.apply(cub.center), np.zeros(3), atol=1e-9)

    def test_rotation_orthonormal(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            t = local_transform(random_cuboid(rng))
            np.testing.assert_allclose(t.rotation @ t.rotation.T, np.eye(3), atol=1e-9)
            assert np.linalg.det(t.rotation) == pytest.approx(1.0, abs=1e-9)

    def test_compose_with_inverse_is_identity(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            t = local_transform(random_cuboid(rng))
            inv = t.inverse()
            np.testing.assert_allclose(inv.rotation @ t.rotation, np.eye(3), atol=1e-12)
            np.testing.assert_allclose(inv.apply(t.apply(np.array([1.0, -2.0, 3.0]))), [1, -2, 3], atol=1e-12)


class TestSdf:
    def test_center_is_inside(self):
        cub = Cuboid(GroundPose2D(origin=(2, -1), yaw=0.7), CuboidSize(length=5, height=3, thickness=1))
        assert sdf(cub, cub.center) == 0.0

    def test_face_normal_offset(self):
        # axis-aligned box with half extents (1,1,1): q=(3,0,1) sits 2 m off the +x face
        cub = Cuboid(GroundPose2D(origin=(0, 0), yaw=0.0), CuboidSize(length=2, height=2, thickness=2))
        assert sdf(cub, (3.0, 0.0, 1.0)) == pytest.approx(2.0, abs=1e-12)

    def test_interior_points_are_zero(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            cub = random_cuboid(rng)
            body = rng.uniform(-1, 1, 3) * cub.size.half_extents * 0.999
            t = local_transform(cub)
            world = t.inverse().apply(body)
            assert sdf(cub, world) == 0.0

    def test_face_sampling_oracle(self):
        rng = np.random.default_rng(12)
        for _ in range(200):
            cub = random_cuboid(rng)
            q = rng.uniform(-60, 60, 3)
            got = sdf(cub, q)
            oracle = face_sampling_distance(cub, q)
            spacing = max(cub.size.length, cub.size.height, cub.size.thickness) / 199.0
            # oracle only ever overestimates the true surface distance
            assert got <= oracle + 1e-9
            assert got >= oracle - 2.0 * spacing

    def test_lipschitz(self):
        rng = np.random.default_rng(13)
        for _ in range(1000):
            cub = random_cuboid(rng)
            q1 = rng.uniform(-60, 60, 3)
            q2 = q1 + rng.uniform(-5, 5, 3)
            assert abs(sdf(cub, q1) - sdf(cub, q2)) <= np.linalg.norm(q1 - q2) + 1e-9

    def test_rigid_invariance(self):
        rng = np.random.default_rng(14)
        for _ in range(1000):
            cub = random_cuboid(rng)
            q = rng.uniform(-60, 60, 3)
            theta = rng.uniform(-math.pi, math.pi)
            shift = rng.uniform(-20, 20, 2)
            c, s = math.cos(theta), math.sin(theta)
            rot2 = np.array([[c, -s], [s, c]])
            moved = Cuboid(
                GroundPose2D(origin=rot2 @ cub.pose.origin + shift, yaw=cub.pose.yaw + theta),
                cub.size,
            )
            q_moved = np.array([*(rot2 @ q[:2] + shift), q[2]])
            assert sdf(moved, q_moved) == pytest.approx(sdf(cub, q), abs=1e-9)

    @settings(max_examples=50)
    @given(st.floats(-100, 100), st.floats(-100, 100), st.floats(0, 100))
    def test_nonnegative(self, x, y, z):
        cub = Cuboid(GroundPose2D(origin=(1, 2), yaw=0.3), CuboidSize(length=6, height=9, thickness=2))
        assert sdf(cub, (x, y, z)) >= 0.0


class TestSdfBatch:
    def test_degenerate_batch(self):
        cub = Cuboid(GroundPose2D(origin=(0, 0), yaw=0.2), CuboidSize(length=3, height=2, thickness=1))
        out = sdf_batch([cub], [(4.0, 1.0, 0.5)])
        assert out.shape == (1, 1)
        assert out[0, 0] == sdf(cub, (4.0, 1.0, 0.5))

    def test_matches_scalar_loop_bitwise(self):
        rng = np.random.default_rng(15)
        cubs = [random_cuboid(rng) for _ in range(5)]
        queries = rng.uniform(-50, 50, (10, 3))
        out = sdf_batch(cubs, queries)
        for i, cub in enumerate(cubs):
            for j, q in enumerate(queries):
                assert out[i, j] == sdf(cub, q)

    def test_column_permutation(self):
        rng = np.random.default_rng(16)
        cubs = [random_cuboid(rng) for _ in range(3)]
        queries = rng.uniform(-50, 50, (8, 3))
        perm = rng.permutation(8)
        np.testing.assert_array_equal(sdf_batch(cubs, queries)[:, perm], sdf_batch(cubs, queries[perm]))

    def test_rejects_empty(self):
        cub = Cuboid(GroundPose2D(origin=(0, 0), yaw=0.0), CuboidSize(length=1, height=1, thickness=1))
        with pytest.raises(ValueError):
            sdf_batch([], [(0.0, 0.0, 0.0)])
        with pytest.raises(ValueError):
            sdf_batch([cub], np.empty((0, 3)))


class TestValidation:
    def test_size_must_be_positive(self):
        with pytest.raises(ValueError):
            CuboidSize(length=0.0, height=1.0, thickness=1.0)
        with pytest.raises(ValueError):
            CuboidSize(length=1.0, height=-2.0, thickness=1.0)

    def test_yaw_normalized_on_construction(self):
        pose = GroundPose2D(origin=(0, 0), yaw=3 * math.pi)
        assert pose.yaw == pytest.approx(math.pi)
