"""
Test suite for the point-level annotation stages.

This file contains automated tests to verify:
1. Backprojection of depth frames (planes, empty frames, rendered boxes)
2. Closed-form rigid alignment, including degenerate configurations
3. ICP refinement, convergence and the no-overlap contract
4. Point accumulation, cropping and symmetry replication

Tests use pytest with descriptive error messages and docstrings.
Run with: pytest annotation/tests.py -v
"""

import math

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from posebench.exceptions import (
    DegenerateCorrespondencesError, EmptyPointSetError, NoOverlapError, NoPointsInBoxError, PoseBenchError,
)
from geometry.core import Box3, RigidTransform, TriangleMesh, get_category, rotation_error, translation_error
from geometry.primitives import sphere
from geometry.sampling import SpatialIndex, sample_surface
from annotation.pipeline import (
    DepthFrame, IcpParams, accumulate_points, backproject, icp_align, refine_box_poses, rigid_alignment,
)
from annotation.rendering import look_at, octant_cameras, pinhole_intrinsics, render_box_depth, render_cylinder_depth


def plane_frame(size=21, focal=100.0, depth=1.0, mask=None):
    return DepthFrame(np.full((size, size), depth), pinhole_intrinsics(focal, size, size), mask=mask)


def ellipsoid_points(count=3000, seed=0):
    base = sphere(radius=0.04)
    mesh = TriangleMesh(base.vertices * np.array([2.0, 1.25, 0.75]), base.faces)
    return sample_surface(mesh, count, seed).points


# =============================================================================
# DEPTH FRAME TESTS
# =============================================================================

class BackprojectionTests(SimpleTestCase):
    """Test lifting depth pixels to camera-frame points."""

    def test_plane_center_pixel(self):
        """Test the principal-point pixel of a plane at 1 m lands on (0, 0, 1)."""
        points = backproject(plane_frame(size=101)).points
        self.assertEqual(len(points), 101 * 101, msg="❌ Expected one point per pixel.")
        center = points[50 * 101 + 50]
        self.assertTrue(np.allclose(center, [0.0, 0.0, 1.0], atol=1e-12), msg=f"❌ Center pixel went to {center}.")
        self.assertTrue(np.allclose(points[:, 2], 1.0), msg="❌ Plane points left z = 1.")

    def test_empty_depth(self):
        """Test an all-zero depth map gives an empty point set."""
        self.assertEqual(len(backproject(plane_frame(depth=0.0))), 0, msg="❌ Zero depth produced points.")

    def test_mask_restricts_pixels(self):
        """Test only masked pixels are lifted."""
        mask = np.zeros((21, 21), dtype=bool)
        mask[3, 4] = True
        points = backproject(plane_frame(mask=mask)).points
        self.assertEqual(len(points), 1, msg="❌ Mask ignored.")
        self.assertTrue(np.allclose(points[0], [(4 - 10) / 100.0, (3 - 10) / 100.0, 1.0]),
            msg=f"❌ Masked pixel went to {points[0]}.")

    def test_rendered_cube_surface(self):
        """Test backprojected points of a rendered cube lie within 1 mm of its surface."""
        cube = Box3(np.zeros(3), [0.05, 0.05, 0.05])
        object_pose = RigidTransform.from_axis_angle([1, 1, 0], 30.0, [0.0, 0.0, 0.6])
        camera = RigidTransform.identity()
        intrinsics = pinhole_intrinsics(400.0, 120, 120)
        depth = render_box_depth(cube, object_pose, camera, intrinsics, (120, 120))
        points = object_pose.inverse().apply(backproject(DepthFrame(depth, intrinsics, camera)).points)
        self.assertGreater(len(points), 1000, msg="❌ The cube barely shows up in the image.")
        distance = np.abs(np.max(np.abs(points) - cube.half_extents, axis=1))
        self.assertLess(distance.max(), 1e-3, msg=f"❌ Points {distance.max()} m off the cube surface.")

    def test_invalid_frames(self):
        """Test negative depth and singular intrinsics are rejected."""
        with self.assertRaises(PoseBenchError, msg="❌ Negative depth accepted."):
            DepthFrame(np.full((4, 4), -1.0), np.eye(3))
        with self.assertRaises(PoseBenchError, msg="❌ Singular intrinsics accepted."):
            DepthFrame(np.ones((4, 4)), np.zeros((3, 3)))


# =============================================================================
# RIGID ALIGNMENT TESTS
# =============================================================================

class RigidAlignmentTests(SimpleTestCase):
    """Test the least-squares rigid transform between paired points."""

    def setUp(self):
        self.rng = np.random.default_rng(11)
        self.transform = RigidTransform.from_axis_angle([0.3, -1.0, 0.5], 37.0, [0.1, -0.2, 0.3])

    def test_exact_pairs(self):
        """Test exact correspondences recover the transform within 1e-9."""
        source = self.rng.uniform(-0.25, 0.25, (50, 3))
        estimate = rigid_alignment(source, self.transform.apply(source))
        self.assertTrue(estimate.almost_equal(self.transform, atol=1e-9), msg=f"❌ Recovered {estimate}.")

    def test_planar_pairs(self):
        """Test coplanar points still give the proper rotation, not a reflection."""
        source = np.array([[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.0, 0.1, 0.0], [0.1, 0.2, 0.0]])
        estimate = rigid_alignment(source, self.transform.apply(source))
        self.assertTrue(estimate.almost_equal(self.transform, atol=1e-9), msg="❌ Planar pairs not recovered.")

    def test_noisy_pairs(self):
        """Test 1 mm noise on 100 pairs keeps the estimate within 0.2° and 1 mm."""
        source = self.rng.uniform(-0.25, 0.25, (100, 3))
        target = self.transform.apply(source) + self.rng.normal(0.0, 0.001, (100, 3))
        estimate = rigid_alignment(source, target)
        self.assertLess(rotation_error(self.transform, estimate), 0.2, msg="❌ Rotation off by more than 0.2°.")
        self.assertLess(translation_error(self.transform, estimate), 0.001, msg="❌ Translation off by 1 mm.")

    def test_degenerate_pairs(self):
        """Test collinear, coincident and too few pairs are rejected."""
        collinear = np.array([[0.0, 0.0, 0.0], [0.1, 0.1, 0.1], [0.2, 0.2, 0.2]])
        coincident = np.ones((5, 3))
        for source in (collinear, coincident, collinear[:2]):
            with self.assertRaises(DegenerateCorrespondencesError, msg=f"❌ {len(source)} pairs accepted."):
                rigid_alignment(source, self.transform.apply(source))
        with self.assertRaises(DegenerateCorrespondencesError, msg="❌ Mismatched sizes accepted."):
            rigid_alignment(np.zeros((4, 3)), np.zeros((5, 3)))


# =============================================================================
# ICP TESTS
# =============================================================================

class IcpTests(SimpleTestCase):
    """Test iterative closest point alignment."""

    def setUp(self):
        self.target = ellipsoid_points()
        self.index = SpatialIndex(self.target)

    def test_recovers_perturbation(self):
        """Test a 5° / 2 cm perturbation is undone within 0.5° and 2 mm."""
        perturbation = RigidTransform.from_axis_angle([1, 2, 3], 5.0, [0.012, -0.01, 0.012])
        source = perturbation.apply(self.target)
        result = icp_align(source, self.index, RigidTransform.identity(), IcpParams(100, 0.05, 1e-9))
        expected = perturbation.inverse()
        self.assertLess(rotation_error(expected, result.transform), 0.5, msg="❌ Rotation not recovered.")
        self.assertLess(translation_error(expected, result.transform), 0.002, msg="❌ Translation not recovered.")
        self.assertLessEqual(result.residual, result.initial_residual, msg="❌ Residual grew during ICP.")

    def test_identity(self):
        """Test aligning a cloud with itself stays at identity within two iterations."""
        result = icp_align(self.target, self.index, RigidTransform.identity(), IcpParams())
        self.assertLessEqual(result.iterations, 2, msg=f"❌ Took {result.iterations} iterations.")
        self.assertTrue(result.converged, msg="❌ Identity alignment did not converge.")
        self.assertTrue(result.transform.almost_equal(RigidTransform.identity(), atol=1e-6),
            msg=f"❌ Drifted to {result.transform}.")
        self.assertEqual(result.inliers, len(self.target), msg="❌ Exact matches were rejected.")

    def test_no_overlap(self):
        """Test clouds 1 m apart with a 5 cm reject distance raise 'no overlap'."""
        with self.assertRaises(NoOverlapError, msg="❌ Disjoint clouds were aligned."):
            icp_align(self.target + [1.0, 0.0, 0.0], self.index, None, IcpParams(reject_distance=0.05))

    def test_empty_source(self):
        """Test an empty source is rejected."""
        with self.assertRaises(EmptyPointSetError, msg="❌ Empty source accepted."):
            icp_align(np.empty((0, 3)), self.index)


# =============================================================================
# ACCUMULATION TESTS
# =============================================================================

class AccumulationTests(SimpleTestCase):
    """Test cropping, accumulation and symmetry replication."""

    def setUp(self):
        self.frame = plane_frame()
        self.pose = RigidTransform.from_translation([0.0, 0.0, 1.0])
        self.box = Box3(np.zeros(3), [0.5, 0.5, 0.5])

    def test_single_frame_in_object_frame(self):
        """Test one frame inside the box gives the same points in the object frame."""
        points = accumulate_points([self.frame], [self.pose], self.box, get_category('laptop'), 3).points
        expected = backproject(self.frame).points - [0.0, 0.0, 1.0]
        self.assertTrue(np.allclose(points, expected), msg="❌ Points not moved into the object frame.")

    def test_crop_to_box(self):
        """Test points outside the box are dropped."""
        narrow = Box3(np.zeros(3), [0.055, 0.5, 0.5])
        points = accumulate_points([self.frame], [self.pose], narrow, get_category('mug'), 0)
        self.assertEqual(len(points), 11 * 21, msg=f"❌ Expected 231 cropped points, got {len(points)}.")

    def test_symmetric_replicas(self):
        """Test three replicas of a symmetric category give exactly 4x the points."""
        plain = accumulate_points([self.frame], [self.pose], self.box, get_category('can'), 0)
        replicated = accumulate_points([self.frame], [self.pose], self.box, get_category('can'), 3)
        self.assertEqual(len(replicated), 4 * len(plain), msg="❌ Replication count is wrong.")

    def test_half_cylinder_covers_circumference(self):
        """Test one view of a cylinder plus replicas leaves no azimuth gap of 10° or more."""
        camera = look_at([0.0, 0.0, -0.5], [0.0, 0.0, 0.0])
        intrinsics = pinhole_intrinsics(525.0, 160, 160)
        depth = render_cylinder_depth(0.03, 0.1, RigidTransform.identity(), camera, intrinsics, (160, 160))
        frame = DepthFrame(depth, intrinsics, camera)
        box = Box3(np.zeros(3), [0.035, 0.055, 0.035])

        def largest_gap(points):
            azimuth = np.sort(np.degrees(np.arctan2(points[:, 2], points[:, 0])))
            return max(np.diff(azimuth).max(), 360.0 + azimuth[0] - azimuth[-1])

        single = accumulate_points([frame], [camera], box, get_category('can'), 0).points
        replicated = accumulate_points([frame], [camera], box, get_category('can'), 3).points
        self.assertGreater(largest_gap(single), 90.0, msg="❌ A single view should see only half the cylinder.")
        self.assertLess(largest_gap(replicated), 10.0, msg="❌ Replicas leave a gap of 10° or more.")
        radii = np.hypot(replicated[:, 0], replicated[:, 2])
        self.assertLess(np.abs(radii - 0.03).max(), 1e-6, msg="❌ Replicas left the cylinder wall.")

    def test_no_points_in_box(self):
        """Test frames without valid pixels in the box raise 'no points in box'."""
        with self.assertRaises(NoPointsInBoxError, msg="❌ Empty accumulation accepted."):
            accumulate_points([plane_frame(depth=0.0)], [self.pose], self.box, get_category('mug'), 0)

    def test_one_pose_per_frame(self):
        """Test a missing box pose is a validation error."""
        with self.assertRaises(ValidationError, msg="❌ Frame without pose accepted."):
            accumulate_points([self.frame, self.frame], [self.pose], self.box, get_category('mug'), 0)


# =============================================================================
# BOX POSE REFINEMENT TESTS
# =============================================================================

class RefinementTests(SimpleTestCase):
    """Test leave-one-out refinement of seed box poses."""

    def setUp(self):
        self.cube = Box3(np.zeros(3), [0.03, 0.04, 0.05])
        self.object_pose = RigidTransform.from_axis_angle([0, 1, 0], 25.0, [0.0, 0.0, 0.0])
        self.intrinsics = pinhole_intrinsics(400.0, 120, 120)
        self.cameras = [look_at(0.45 * np.array([math.cos(angle), 0.4, math.sin(angle)]), [0.0, 0.0, 0.0])
                        for angle in np.radians([0.0, 90.0, 180.0, 270.0])]
        self.frames = [
            DepthFrame(render_box_depth(self.cube, self.object_pose, camera, self.intrinsics, (120, 120)),
                       self.intrinsics, camera, frame_id=str(index))
            for index, camera in enumerate(self.cameras)
        ]
        self.truth = [camera @ self.object_pose for camera in self.cameras]

    def test_exact_seeds_stay_put(self):
        """Test exact seed poses move by less than 1 mm and 0.5°."""
        refined, results = refine_box_poses(self.frames, self.truth, self.cube, IcpParams(), padding=0.01)
        self.assertTrue(all(result is not None for result in results), msg="❌ A frame was skipped.")
        for truth, pose in zip(self.truth, refined):
            self.assertLess(translation_error(truth, pose), 0.001, msg="❌ Exact seed drifted.")
            self.assertLess(rotation_error(truth, pose), 0.5, msg="❌ Exact seed rotated.")

    def test_perturbed_seed_is_recovered(self):
        """Test a 5° / 2 cm error in one frame's seed is undone by the other seven views of a cube."""
        cube = Box3(np.zeros(3), [0.03, 0.03, 0.03])
        seed_box = Box3(np.zeros(3), [0.05, 0.05, 0.05])
        object_pose = RigidTransform.from_axis_angle([0, 1, 0], 20.0, [0.05, 0.0, 0.02])
        intrinsics = pinhole_intrinsics(315.0, 120, 120)
        cameras = octant_cameras(object_pose.translation, 0.4)
        frames = [
            DepthFrame(render_box_depth(cube, object_pose, camera, intrinsics, (120, 120), background=2.0),
                       intrinsics, camera, frame_id=f"{index:04d}")
            for index, camera in enumerate(cameras)
        ]
        truth = [camera @ object_pose for camera in cameras]

        rng = np.random.default_rng(7)
        for trial in range(4):
            offset = rng.normal(size=3)
            translation = 0.02 * offset / np.linalg.norm(offset)
            perturbation = RigidTransform.from_axis_angle(rng.normal(size=3), 5.0, translation)
            seeds = [truth[0] @ perturbation] + truth[1:]
            self.assertAlmostEqual(rotation_error(truth[0], seeds[0]), 5.0, places=6, msg="❌ Seed not rotated by 5°.")

            params = IcpParams(100, 0.05, 1e-9)
            refined, results = refine_box_poses(frames, seeds, seed_box, params, padding=0.02)
            self.assertIsNotNone(results[0], msg=f"❌ Trial {trial}: perturbed frame was skipped.")
            self.assertLess(rotation_error(truth[0], refined[0]), 0.5,
                msg=f"❌ Trial {trial}: rotation error {rotation_error(truth[0], refined[0]):.3f}°.")
            self.assertLess(translation_error(truth[0], refined[0]), 0.002,
                msg=f"❌ Trial {trial}: translation error {translation_error(truth[0], refined[0]):.4f} m.")
            self.assertLess(results[0].residual, results[0].initial_residual,
                msg=f"❌ Trial {trial}: residual did not drop.")

    def test_frame_without_points_keeps_seed(self):
        """Test a frame with empty depth keeps its seed pose."""
        frames = list(self.frames)
        frames[0] = DepthFrame(np.zeros((120, 120)), self.intrinsics, self.cameras[0], frame_id='0')
        refined, results = refine_box_poses(frames, self.truth, self.cube, IcpParams(), padding=0.01)
        self.assertIsNone(results[0], msg="❌ Empty frame was refined.")
        self.assertIs(refined[0], self.truth[0], msg="❌ Empty frame lost its seed.")


# =============================================================================
# TEST EXECUTION NOTES
# =============================================================================
"""
To run these tests:

# Run all point-level annotation tests with verbose output
pytest annotation/tests.py -v

# Run only the ICP tests
pytest annotation/tests.py::IcpTests -v

These tests verify:
✅ Backprojection geometry and empty frames
✅ Exact, noisy and degenerate rigid alignment
✅ ICP recovery, identity convergence and no-overlap errors
✅ Cropping and exact (k + 1)x symmetry replication
✅ Leave-one-out refinement keeps exact seeds and undoes a 5° / 2 cm seed error
"""
