"""Camera, cloud synthesis, RANSAC, and nominal-estimate inversion."""

import math

import numpy as np
import pytest

from cuboidnav.geometry import Cuboid, CuboidSize, GroundPose2D, wrap_angle
from cuboidnav.perception import (
    CameraModel,
    Face,
    LabeledCloud,
    PlaneFit,
    back_project_corners,
    estimate_nominal,
    face_rectangles,
    face_truth,
    look_at_camera,
    ransac_plane,
    synthesize_cloud,
    visible_faces,
)
from cuboidnav.uncertainty import calibrate_bank, zero_bank


def building(origin=(0.0, 0.0), yaw=0.0, length=10.0, height=12.0, thickness=4.0):
    return Cuboid(GroundPose2D(np.asarray(origin, dtype=float), yaw), CuboidSize(length, height, thickness))


def front_camera(distance=15.0, lateral=0.0, z=3.0, target=(0.0, 0.0, 4.0)):
    return look_at_camera(np.array([distance, lateral, z]), np.asarray(target, dtype=float))


class TestCameraModel:
    def test_rejects_lower_triangular_intrinsics(self):
        k = np.array([[400.0, 0.0, 320.0], [5.0, 400.0, 240.0], [0.0, 0.0, 1.0]])
        with pytest.raises(ValueError):
            CameraModel(intrinsics=k, rotation=np.eye(3), translation=np.zeros(3))

    def test_rejects_negative_focal(self):
        k = np.array([[-400.0, 0.0, 320.0], [0.0, 400.0, 240.0], [0.0, 0.0, 1.0]])
        with pytest.raises(ValueError):
            CameraModel(intrinsics=k, rotation=np.eye(3), translation=np.zeros(3))

    def test_rejects_non_orthonormal_rotation(self):
        with pytest.raises(ValueError):
            CameraModel(
                intrinsics=np.diag([400.0, 400.0, 1.0]),
                rotation=np.eye(3) * 1.1,
                translation=np.zeros(3),
            )

    def test_project_ray_roundtrip(self):
        cam = front_camera()
        rng = np.random.default_rng(0)
        pts = rng.uniform(-4.0, 4.0, size=(50, 3)) + np.array([0.0, 0.0, 4.0])
        pix, depths = cam.project(pts)
        assert np.all(depths > 0.0)
        back = depths[:, None] * cam.rays(pix)
        world = back @ cam.rotation.T + cam.translation
        assert np.allclose(world, pts, atol=1e-9)

    def test_look_at_principal_point(self):
        cam = look_at_camera(np.array([5.0, 1.0, 2.0]), np.array([-3.0, 2.0, 4.0]))
        pix, depth = cam.project(np.array([-3.0, 2.0, 4.0]))
        assert depth[0] == pytest.approx(np.linalg.norm([8.0, 1.0, 2.0]), abs=1e-9)
        assert np.allclose(pix[0], [320.0, 240.0], atol=1e-9)

    def test_dict_roundtrip(self):
        cam = front_camera()
        again = CameraModel.from_dict(cam.to_dict())
        assert np.array_equal(again.intrinsics, cam.intrinsics)
        assert np.array_equal(again.rotation, cam.rotation)
        assert np.array_equal(again.translation, cam.translation)


class TestFaces:
    def test_four_faces_with_vertex_corners(self):
        cub = building(origin=(3.0, -2.0), yaw=0.6)
        faces = face_rectangles(cub)
        assert len(faces) == 4
        verts = cub.vertices()
        for face in faces:
            for corner in face.corners():
                assert np.min(np.linalg.norm(verts - corner, axis=1)) < 1e-9

    def test_outward_normals_and_areas(self):
        cub = building(yaw=0.0)
        faces = face_rectangles(cub)
        normals = np.stack([f.outward for f in faces])
        assert np.allclose(normals, [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0]])
        assert faces[0].area == pytest.approx(10.0 * 12.0)
        assert faces[2].area == pytest.approx(4.0 * 12.0)

    def test_corners_on_plane(self):
        face = face_rectangles(building(yaw=-1.1))[3]
        n, d = face.plane()
        assert np.allclose(face.corners() @ n + d, 0.0, atol=1e-9)

    def test_visibility_from_front(self):
        cam = front_camera()
        vis = visible_faces([building()], cam)
        assert [(b, f) for b, f, _ in vis] == [(0, 0)]

    def test_max_range_filters(self):
        cam = front_camera(distance=200.0)
        assert visible_faces([building()], cam, max_range=50.0) == []


class TestSynthesizeCloud:
    def test_noiseless_points_on_face_plane(self):
        cub = building()
        cloud = synthesize_cloud([cub], front_camera(), noise=0.0, density=1.0, rng_seed=3)
        assert cloud.points.shape[0] > 50
        faces = face_rectangles(cub)
        for b_idx, f_idx in np.unique(cloud.labels, axis=0):
            n, d = faces[f_idx].plane()
            pts = cloud.points[np.all(cloud.labels == (b_idx, f_idx), axis=1)]
            assert np.max(np.abs(pts @ n + d)) < 1e-9

    def test_density_doubling(self):
        counts = np.empty((20, 2))
        for seed in range(20):
            counts[seed, 0] = synthesize_cloud([building()], front_camera(), 0.0, 1.0, seed).points.shape[0]
            counts[seed, 1] = synthesize_cloud([building()], front_camera(), 0.0, 2.0, 100 + seed).points.shape[0]
        ratio = counts[:, 1].mean() / counts[:, 0].mean()
        assert abs(ratio - 2.0) <= 0.2

    def test_fixed_seed_bit_identical(self):
        a = synthesize_cloud([building()], front_camera(), 0.3, 1.5, rng_seed=11)
        b = synthesize_cloud([building()], front_camera(), 0.3, 1.5, rng_seed=11)
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.labels, b.labels)

    def test_noise_moves_points_along_rays(self):
        cam = front_camera()
        cub = building()
        clean = synthesize_cloud([cub], cam, 0.0, 1.0, rng_seed=5)
        noisy = synthesize_cloud([cub], cam, 0.5, 1.0, rng_seed=5)
        delta = noisy.points - clean.points
        moved = np.linalg.norm(delta, axis=1) > 1e-12
        assert moved.mean() > 0.9
        rays = clean.points[moved] - cam.origin
        cos = np.abs(np.sum(delta[moved] * rays, axis=1)) / (
            np.linalg.norm(delta[moved], axis=1) * np.linalg.norm(rays, axis=1)
        )
        assert np.min(cos) > 1.0 - 1e-9

    def test_no_visible_face_rejected(self):
        cub = building()
        inside = CameraModel(
            intrinsics=np.diag([400.0, 400.0, 1.0]),
            rotation=np.eye(3),
            translation=np.array([0.0, 0.0, 3.0]),
        )
        with pytest.raises(ValueError):
            synthesize_cloud([cub], inside, 0.0, 1.0, 0)

    def test_rejects_bad_args(self):
        with pytest.raises(ValueError):
            synthesize_cloud([building()], front_camera(), 0.0, 0.0, 0)
        with pytest.raises(ValueError):
            synthesize_cloud([building()], front_camera(), -0.1, 1.0, 0)


class TestRansacPlane:
    def test_exact_coplanar(self):
        rng = np.random.default_rng(0)
        pts = np.concatenate([rng.uniform(0, 10, (50, 2)), np.full((50, 1), 3.0)], axis=1)
        fit = ransac_plane(pts, threshold=0.05, iterations=50, rng_seed=1)
        assert abs(abs(fit.normal[2]) - 1.0) < 1e-9
        assert fit.offset * fit.normal[2] == pytest.approx(-3.0, abs=1e-9)
        assert fit.inliers.size == 50
        assert fit.rms < 1e-9

    def test_three_points_exact(self):
        pts = np.array([[0.0, 0.0, 1.0], [2.0, 0.0, 1.0], [0.0, 3.0, 1.0]])
        fit = ransac_plane(pts, threshold=0.01, iterations=20, rng_seed=0)
        assert np.max(np.abs(pts @ fit.normal + fit.offset)) < 1e-12
        assert fit.inliers.size == 3

    def test_outlier_monte_carlo(self):
        hits = 0
        for seed in range(100):
            rng = np.random.default_rng(1000 + seed)
            plane = np.concatenate([rng.uniform(0, 10, (160, 2)), np.full((160, 1), 3.0)], axis=1)
            outliers = rng.uniform(0, 10, (40, 3))
            pts = np.concatenate([plane, outliers])
            fit = ransac_plane(pts, threshold=0.05, iterations=100, rng_seed=seed)
            angle = math.degrees(math.acos(min(abs(fit.normal[2]), 1.0)))
            hits += angle < 1.0
        assert hits >= 95

    def test_threshold_monotone_inliers(self):
        rng = np.random.default_rng(7)
        pts = np.concatenate([rng.uniform(0, 10, (100, 2)), rng.normal(3.0, 0.05, (100, 1))], axis=1)
        counts = [
            ransac_plane(pts, threshold=t, iterations=60, rng_seed=4).inliers.size
            for t in (0.02, 0.05, 0.1, 0.2)
        ]
        assert counts == sorted(counts)

    def test_normal_sign_toward_camera(self):
        rng = np.random.default_rng(2)
        pts = np.concatenate([rng.uniform(0, 10, (40, 2)), np.full((40, 1), 3.0)], axis=1)
        above = ransac_plane(pts, rng_seed=0, toward=np.array([5.0, 5.0, 50.0]))
        below = ransac_plane(pts, rng_seed=0, toward=np.array([5.0, 5.0, -50.0]))
        assert above.normal[2] > 0.99
        assert below.normal[2] < -0.99

    def test_rejects_degenerate_input(self):
        with pytest.raises(ValueError):
            ransac_plane(np.zeros((2, 3)))
        line = np.outer(np.arange(10.0), np.array([1.0, 2.0, 0.5]))
        with pytest.raises(ValueError):
            ransac_plane(line)


class TestBackProjection:
    def test_principal_ray_fronto_parallel(self):
        cam = CameraModel(
            intrinsics=np.array([[400.0, 0.0, 320.0], [0.0, 400.0, 240.0], [0.0, 0.0, 1.0]]),
            rotation=np.eye(3),
            translation=np.zeros(3),
        )
        fit = PlaneFit(normal=np.array([0.0, 0.0, 1.0]), offset=-5.0, inliers=np.arange(3), rms=0.0)
        corners = back_project_corners(fit, cam, np.tile([320.0, 240.0], (4, 1)))
        assert np.allclose(corners, [[0.0, 0.0, 5.0]] * 4, atol=1e-12)

    def test_corners_land_on_plane(self):
        cam = front_camera()
        normal = np.array([0.9, 0.3, 0.0])
        normal /= np.linalg.norm(normal)
        fit = PlaneFit(normal=normal, offset=-2.0, inliers=np.arange(3), rms=0.0)
        pix = np.array([[100.0, 80.0], [500.0, 70.0], [520.0, 400.0], [90.0, 380.0]])
        corners = back_project_corners(fit, cam, pix)
        assert np.max(np.abs(corners @ fit.normal + fit.offset)) <= 1e-6 * abs(fit.offset)

    def test_noiseless_corner_inversion(self):
        cub = building(origin=(1.0, -2.0), yaw=0.4)
        cam = look_at_camera(np.array([18.0, 2.0, 3.0]), np.append(cub.center[:2], 5.0))
        face = face_rectangles(cub)[0]
        n, d = face.plane()
        fit = PlaneFit(normal=n, offset=d, inliers=np.arange(4), rms=0.0)
        pix, _ = cam.project(face.corners())
        recovered = back_project_corners(fit, cam, pix)
        assert np.max(np.linalg.norm(recovered - face.corners(), axis=1)) < 1e-6

    def test_degenerate_ray_rejected(self):
        cam = CameraModel(
            intrinsics=np.array([[400.0, 0.0, 320.0], [0.0, 400.0, 240.0], [0.0, 0.0, 1.0]]),
            rotation=np.eye(3),
            translation=np.zeros(3),
        )
        fit = PlaneFit(normal=np.array([1.0, 0.0, 0.0]), offset=-5.0, inliers=np.arange(3), rms=0.0)
        with pytest.raises(ValueError):
            back_project_corners(fit, cam, np.tile([320.0, 240.0], (4, 1)))


class TestEstimateNominal:
    def run_noiseless(self, cub, cam):
        cloud = synthesize_cloud([cub], cam, noise=0.0, density=2.0, rng_seed=9)
        return estimate_nominal(cloud, cam, [cub], zero_bank(), sigma_px=0.0, rng_seed=1)

    def test_noiseless_inversion_matches_truth(self):
        # The yawed building shows two faces here; each estimate must
        # invert to its own face's ground truth.
        cub = building(origin=(2.0, -1.0), yaw=0.5)
        cam = front_camera(distance=18.0, lateral=1.0, target=(2.0, -1.0, 5.0))
        result = self.run_noiseless(cub, cam)
        assert (0, 0) in result.labels
        for (_, f_idx), est_cuboid in zip(result.labels, result.cuboids):
            est = est_cuboid.nominal
            truth = face_truth(cub, f_idx)
            assert np.max(np.abs(est.pose.origin - truth.pose.origin)) < 1e-6
            assert abs(wrap_angle(est.pose.yaw - truth.pose.yaw)) < 1e-6
            assert est.size.length == pytest.approx(truth.size.length, abs=1e-6)
            assert est.size.height == pytest.approx(truth.size.height, abs=1e-6)

    def test_yaw_equals_normal_heading_exactly(self):
        cub = building(yaw=-0.8)
        cam = front_camera(distance=20.0, target=(0.0, 0.0, 5.0))
        result = self.run_noiseless(cub, cam)
        fit = result.fits[0]
        expected = wrap_angle(math.atan2(fit.normal[1], fit.normal[0]))
        assert result.cuboids[0].nominal.pose.yaw == expected

    def test_vertical_facade_normal(self):
        result = self.run_noiseless(building(yaw=0.3), front_camera(target=(0.0, 0.0, 5.0)))
        assert abs(result.fits[0].normal[2]) < 1e-6

    def test_rigid_equivariance(self):
        cub = building(origin=(2.0, 1.0), yaw=0.2)
        cam = front_camera(distance=16.0, target=(2.0, 1.0, 5.0))
        base = self.run_noiseless(cub, cam).cuboids[0].nominal

        theta, shift = 0.7, np.array([3.0, -2.0])
        rot2 = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
        rot3 = np.eye(3)
        rot3[:2, :2] = rot2
        moved_cub = Cuboid(
            GroundPose2D(rot2 @ cub.pose.origin + shift, cub.pose.yaw + theta), cub.size
        )
        moved_cam = CameraModel(
            intrinsics=cam.intrinsics,
            rotation=rot3 @ cam.rotation,
            translation=rot3 @ cam.translation + np.append(shift, 0.0),
        )
        moved = self.run_noiseless(moved_cub, moved_cam).cuboids[0].nominal
        assert np.max(np.abs(moved.pose.origin - (rot2 @ base.pose.origin + shift))) < 1e-6
        assert abs(wrap_angle(moved.pose.yaw - base.pose.yaw - theta)) < 1e-6
        assert moved.size.length == pytest.approx(base.size.length, abs=1e-6)
        assert moved.size.height == pytest.approx(base.size.height, abs=1e-6)

    def test_sparse_label_skipped(self):
        cub = building()
        cam = front_camera()
        cloud = LabeledCloud(
            points=np.array([[2.0, 0.0, 1.0], [2.0, 1.0, 2.0]]), labels=np.array([[0, 0], [0, 0]])
        )
        result = estimate_nominal(cloud, cam, [cub], zero_bank(), rng_seed=0)
        assert result.cuboids == []
        assert result.skipped == [(0, 0)]

    def test_unknown_label_rejected(self):
        cloud = LabeledCloud(points=np.zeros((3, 3)), labels=np.array([[0, 7]] * 3))
        with pytest.raises(ValueError):
            estimate_nominal(cloud, front_camera(), [building()], zero_bank(), rng_seed=0)

    def test_noisy_pipeline_calibrates_nondegenerate_bank(self):
        cub = building()
        cam = front_camera(distance=16.0, target=(0.0, 0.0, 5.0))
        truth = face_truth(cub, 0)
        pairs = []
        for seed in range(100):
            cloud = synthesize_cloud([cub], cam, noise=0.05, density=1.0, rng_seed=seed)
            result = estimate_nominal(
                cloud, cam, [cub], zero_bank(), threshold=0.15, iterations=60, rng_seed=seed
            )
            if result.cuboids:
                pairs.append((result.cuboids[0].nominal, truth))
        assert len(pairs) >= 95
        bank = calibrate_bank(pairs)
        assert np.unique(bank.yaw_samples).size >= 2
        assert np.unique(bank.size_samples).size >= 2
        assert np.unique(bank.origin_samples).size >= 2
