"""
Tests for polytope clipping, oriented-box IoU, IoU⁺ and the symmetric IoU.

The Monte-Carlo oracle below is only used here; the metric itself is exact.
Run with: pytest geometry/test_box_metrics.py -v
"""

import math

import numpy as np
from django.test import SimpleTestCase
from scipy.spatial.transform import Rotation

from posebench.exceptions import DegenerateBoxError, EmptyPointSetError, InvalidThresholdError
from geometry.box_metrics import (
    ConvexPolytope, Halfspace, aabb_of, clip_polytope, iou_aabb_plus, iou_obb, iou_obb_symmetric,
)
from geometry.core import Box3, Category, PointSet, RigidTransform, apply_transform
from geometry.primitives import box as box_mesh

UNIT_CUBE = Box3([0, 0, 0], [0.5, 0.5, 0.5])
IDENTITY = RigidTransform.identity()
CAN = Category('can', True, (0, 1, 0))
LAPTOP = Category('laptop', False)


def monte_carlo_iou(box_a, pose_a, box_b, pose_b, samples, rng):
    # Uniform samples inside box a estimate the fraction of a covered by b.
    local = rng.uniform(box_a.min_corner, box_a.max_corner, (samples, 3))
    inside = box_b.contains(pose_b.inverse().apply(pose_a.apply(local)))
    intersection = np.count_nonzero(inside) / samples * box_a.volume
    return intersection / (box_a.volume + box_b.volume - intersection)


def random_box_pair(rng):
    boxes = [Box3([0, 0, 0], rng.uniform(0.01, 0.15, 3)) for _ in range(2)]
    poses = [
        RigidTransform(Rotation.random(random_state=int(rng.integers(0, 2**31))).as_matrix(),
                       rng.uniform(-0.1, 0.1, 3))
        for _ in range(2)
    ]
    return boxes[0], poses[0], boxes[1], poses[1]


# =============================================================================
# AABB TESTS
# =============================================================================

class AabbTests(SimpleTestCase):
    """Test the tight axis-aligned box of point sets and meshes."""

    def test_two_points(self):
        """Test points (0,0,0) and (1,2,3) give center (0.5,1,1.5)."""
        box = aabb_of(PointSet([[0, 0, 0], [1, 2, 3]]))
        self.assertTrue(np.allclose(box.center, [0.5, 1.0, 1.5]), msg=f"❌ Wrong center {box.center}.")
        self.assertTrue(np.allclose(box.half_extents, [0.5, 1.0, 1.5]), msg=f"❌ Wrong half extents {box.half_extents}.")

    def test_unit_cube_mesh(self):
        """Test the unit cube mesh has half extents 0.5."""
        box = aabb_of(box_mesh((1.0, 1.0, 1.0)))
        self.assertTrue(np.allclose(box.half_extents, 0.5), msg=f"❌ Wrong half extents {box.half_extents}.")

    def test_degenerate_inputs(self):
        """Test a repeated single point and an empty set are rejected."""
        with self.assertRaises(DegenerateBoxError):
            aabb_of(PointSet([[1, 1, 1], [1, 1, 1]]))
        with self.assertRaises(EmptyPointSetError):
            aabb_of(PointSet.empty())


# =============================================================================
# CLIPPING TESTS
# =============================================================================

class ClipPolytopeTests(SimpleTestCase):
    """Test halfspace clipping of convex polytopes."""

    def setUp(self):
        self.cube = ConvexPolytope.from_box(UNIT_CUBE)

    def test_cube_volume(self):
        """Test the divergence-theorem volume of the unit cube."""
        self.assertAlmostEqual(self.cube.volume, 1.0, places=12, msg="❌ Unit cube volume is not 1.")
        self.assertTrue(self.cube.is_convex(), msg="❌ Unit cube is not convex.")

    def test_partial_clip(self):
        """Test clipping by x ≤ 0.25 leaves volume 0.75."""
        clipped = clip_polytope(self.cube, Halfspace([1, 0, 0], 0.25))
        self.assertAlmostEqual(clipped.volume, 0.75, places=12, msg=f"❌ Clipped volume {clipped.volume} != 0.75.")
        self.assertTrue(clipped.is_convex(), msg="❌ Clipped polytope is not convex.")

    def test_containing_and_excluding_halfspaces(self):
        """Test a containing halfspace keeps the polytope and an excluding one empties it."""
        kept = clip_polytope(self.cube, Halfspace([0, 0, 1], 2.0))
        self.assertAlmostEqual(kept.volume, self.cube.volume, delta=1e-12, msg="❌ Containing clip changed the volume.")
        gone = clip_polytope(self.cube, Halfspace([0, 0, 1], -0.5))
        self.assertTrue(gone.is_empty, msg="❌ Excluding clip did not give the empty polytope.")
        self.assertEqual(gone.volume, 0.0, msg="❌ Empty polytope must have volume 0.")

    def test_oblique_clip_through_corner(self):
        """Test cutting a corner off the cube removes the tetrahedron volume."""
        # Plane x + y + z <= 1 cuts off the corner (0.5, 0.5, 0.5) tetrahedron with legs 0.5.
        clipped = clip_polytope(self.cube, Halfspace([1, 1, 1], 1.0))
        self.assertAlmostEqual(clipped.volume, 1.0 - 0.5 ** 3 / 6.0, places=12,
            msg=f"❌ Corner cut volume {clipped.volume} is wrong.")
        self.assertTrue(clipped.is_convex(), msg="❌ Corner cut result is not convex.")

    def test_rotated_clip_stays_convex(self):
        """Test repeated clipping of rotated boxes keeps a convex polytope."""
        rng = np.random.default_rng(4)
        for _ in range(20):
            box_a, pose_a, box_b, pose_b = random_box_pair(rng)
            polytope = ConvexPolytope.from_box(box_b, pose_a.inverse() @ pose_b)
            for normal in np.eye(3):
                polytope = clip_polytope(polytope, Halfspace(normal, 0.02))
            self.assertTrue(polytope.is_empty or polytope.is_convex(), msg="❌ Clipping produced a non-convex polytope.")


# =============================================================================
# ORIENTED BOX IOU TESTS
# =============================================================================

class IouObbTests(SimpleTestCase):
    """Test the exact oriented-bounding-box IoU."""

    def test_identical_boxes(self):
        """Test identical box and pose give 1.0."""
        pose = RigidTransform.from_axis_angle([1, 2, 3], 40.0, [0.3, 0.1, 0.9])
        box = Box3([0.01, 0, 0], [0.05, 0.1, 0.03])
        self.assertAlmostEqual(iou_obb(box, pose, box, pose), 1.0, places=12, msg="❌ Identical boxes must give IoU 1.")

    def test_half_offset_cubes(self):
        """Test unit cubes offset by 0.5 in x give 1/3."""
        shifted = RigidTransform.from_translation([0.5, 0, 0])
        self.assertAlmostEqual(iou_obb(UNIT_CUBE, IDENTITY, UNIT_CUBE, shifted), 1.0 / 3.0, places=12,
            msg="❌ Half-offset cubes should give IoU 1/3.")

    def test_cube_rotated_45_degrees(self):
        """Test a cube rotated 45° about z gives IoU 1/√2."""
        turned = RigidTransform.from_axis_angle([0, 0, 1], 45.0)
        self.assertAlmostEqual(iou_obb(UNIT_CUBE, IDENTITY, UNIT_CUBE, turned), 1.0 / math.sqrt(2.0), delta=1e-6,
            msg="❌ 45° rotated cube should give IoU 1/√2.")

    def test_disjoint_boxes(self):
        """Test disjoint boxes give 0."""
        far = RigidTransform.from_translation([3.0, 0, 0])
        self.assertEqual(iou_obb(UNIT_CUBE, IDENTITY, UNIT_CUBE, far), 0.0, msg="❌ Disjoint boxes must give 0.")

    def test_symmetry_and_rigid_invariance(self):
        """Test IoU is symmetric and invariant under a common rigid transform."""
        rng = np.random.default_rng(5)
        common = RigidTransform.from_axis_angle([0.3, -1, 0.2], 71.0, [0.5, 0.2, -0.4])
        for _ in range(30):
            box_a, pose_a, box_b, pose_b = random_box_pair(rng)
            value = iou_obb(box_a, pose_a, box_b, pose_b)
            self.assertGreaterEqual(value, 0.0, msg="❌ IoU below 0.")
            self.assertLessEqual(value, 1.0, msg="❌ IoU above 1.")
            self.assertAlmostEqual(value, iou_obb(box_b, pose_b, box_a, pose_a), delta=1e-9,
                msg="❌ IoU is not symmetric in its arguments.")
            self.assertAlmostEqual(value, iou_obb(box_a, common @ pose_a, box_b, common @ pose_b), delta=1e-9,
                msg="❌ IoU changed under a common rigid transform.")

    def test_monte_carlo_oracle(self):
        """Test agreement with a 10⁶-sample Monte-Carlo estimate on 100 random pairs."""
        rng = np.random.default_rng(6)
        for case in range(100):
            box_a, pose_a, box_b, pose_b = random_box_pair(rng)
            exact = iou_obb(box_a, pose_a, box_b, pose_b)
            estimate = monte_carlo_iou(box_a, pose_a, box_b, pose_b, 1_000_000, rng)
            self.assertLess(abs(exact - estimate), 5e-3,
                msg=f"❌ Case {case}: exact IoU {exact:.5f} vs Monte-Carlo {estimate:.5f}.")


# =============================================================================
# IOU⁺ TESTS
# =============================================================================

class IouAabbPlusTests(SimpleTestCase):
    """Test the axis-aligned IoU⁺ of posed shapes."""

    def test_identical_and_offset(self):
        """Test identical inputs give 1 and half-offset cubes give 1/3."""
        cube = box_mesh((1.0, 1.0, 1.0))
        self.assertAlmostEqual(iou_aabb_plus(cube, cube), 1.0, places=12, msg="❌ Identical inputs must give 1.")
        shifted = apply_transform(RigidTransform.from_translation([0.5, 0, 0]), cube)
        self.assertAlmostEqual(iou_aabb_plus(cube, shifted), 1.0 / 3.0, places=12,
            msg="❌ Half-offset cubes should give IoU⁺ 1/3.")

    def test_rotated_cube_differs_from_true_iou(self):
        """Test IoU⁺ of a 45° rotated cube differs from the true IoU."""
        cube = box_mesh((1.0, 1.0, 1.0))
        turned = RigidTransform.from_axis_angle([0, 0, 1], 45.0)
        plus = iou_aabb_plus(cube, apply_transform(turned, cube))
        true = iou_obb(UNIT_CUBE, IDENTITY, UNIT_CUBE, turned)
        self.assertAlmostEqual(plus, 0.5, places=9, msg=f"❌ IoU⁺ of the rotated cube is {plus}, expected 1/2.")
        self.assertNotAlmostEqual(plus, true, places=3, msg="❌ IoU⁺ should differ from the true IoU.")

    def test_matches_iou_for_identity_poses(self):
        """Test IoU⁺ equals the true IoU when both poses are identity."""
        rng = np.random.default_rng(7)
        for _ in range(20):
            box_a = Box3(rng.uniform(-0.05, 0.05, 3), rng.uniform(0.01, 0.1, 3))
            box_b = Box3(rng.uniform(-0.05, 0.05, 3), rng.uniform(0.01, 0.1, 3))
            self.assertAlmostEqual(iou_aabb_plus(box_a.corners(), box_b.corners()),
                                   iou_obb(box_a, IDENTITY, box_b, IDENTITY), delta=1e-9,
                msg="❌ IoU⁺ and IoU differ for axis-aligned boxes.")

    def test_empty_input_rejected(self):
        """Test an empty input raises."""
        with self.assertRaises(EmptyPointSetError):
            iou_aabb_plus(PointSet.empty(), PointSet([[0, 0, 0], [1, 1, 1]]))


# =============================================================================
# SYMMETRIC IOU TESTS
# =============================================================================

class SymmetricIouTests(SimpleTestCase):
    """Test the azimuth-searched IoU of symmetric categories."""

    def setUp(self):
        self.box = Box3([0, 0, 0], [0.04, 0.06, 0.02])
        self.pose = RigidTransform.from_axis_angle([0.1, 0.3, 1.0], 20.0, [0.05, 0.0, 0.7])

    def test_quarter_turn_about_axis(self):
        """Test a 90° spin about the symmetry axis is undone with 360 steps."""
        spun = self.pose @ RigidTransform.from_axis_angle([0, 1, 0], 90.0)
        self.assertGreaterEqual(iou_obb_symmetric(self.box, self.pose, self.box, spun, CAN, steps=360), 0.999,
            msg="❌ Symmetric IoU did not undo a quarter turn.")

    def test_square_cross_section_45_degrees(self):
        """Test a square cross-section box rotated 45° is ~1.0 symmetric vs ~0.707 plain."""
        square = Box3([0, 0, 0], [0.05, 0.08, 0.05])
        spun = self.pose @ RigidTransform.from_axis_angle([0, 1, 0], 45.0)
        symmetric = iou_obb_symmetric(square, self.pose, square, spun, CAN)
        plain = iou_obb(square, self.pose, square, spun)
        self.assertAlmostEqual(symmetric, 1.0, delta=1e-6, msg=f"❌ Symmetric IoU {symmetric} should be ~1.")
        self.assertAlmostEqual(plain, 1.0 / math.sqrt(2.0), delta=1e-6, msg=f"❌ Plain IoU {plain} should be ~0.707.")

    def test_arbitrary_spin_is_undone(self):
        """Test spins that are not multiples of the step are still recovered."""
        for angle in (37.3, 101.9, 212.45, 358.6):
            spun = self.pose @ RigidTransform.from_axis_angle([0, 1, 0], angle)
            value = iou_obb_symmetric(self.box, self.pose, self.box, spun, CAN)
            self.assertGreaterEqual(value, 0.999, msg=f"❌ Spin of {angle}° gave symmetric IoU {value}.")

    def test_never_below_plain_iou(self):
        """Test the symmetric IoU is never below the plain IoU."""
        rng = np.random.default_rng(8)
        for _ in range(10):
            box_a, pose_a, box_b, pose_b = random_box_pair(rng)
            self.assertGreaterEqual(iou_obb_symmetric(box_a, pose_a, box_b, pose_b, CAN, steps=24),
                                    iou_obb(box_a, pose_a, box_b, pose_b),
                msg="❌ Symmetric IoU fell below the plain IoU.")

    def test_non_symmetric_delegates(self):
        """Test non-symmetric categories give exactly iou_obb."""
        spun = self.pose @ RigidTransform.from_axis_angle([0, 1, 0], 30.0)
        self.assertEqual(iou_obb_symmetric(self.box, self.pose, self.box, spun, LAPTOP),
                         iou_obb(self.box, self.pose, self.box, spun),
            msg="❌ Non-symmetric category did not delegate to iou_obb.")

    def test_invalid_steps(self):
        """Test steps below 1 raise."""
        with self.assertRaises(InvalidThresholdError):
            iou_obb_symmetric(self.box, self.pose, self.box, self.pose, CAN, steps=0)
