"""
Test suite for the geometry app core types, pose errors and surface sampling.

This file contains automated tests to verify:
1. RigidTransform algebra and apply_transform on every shape type
2. Translation, rotation and symmetry-aware rotation errors
3. Area-weighted surface sampling and the exact nearest-neighbour index
4. The sample-count convergence study and the procedural meshes

Tests use pytest with descriptive error messages and docstrings.
Run with: pytest geometry/tests.py -v
"""

import math

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase
from scipy.spatial.transform import Rotation

from posebench.exceptions import DegenerateBoxError, DegenerateMeshError, EmptyPointSetError, InvalidTransformError
from geometry.core import (
    Box3, Category, OrientedBox, PointSet, RigidTransform, TriangleMesh, apply_transform,
    get_category, rotation_error, rotation_error_symmetric, translation_error,
)
from geometry.primitives import builtin_mesh, cylinder, mug
from geometry.sampling import SpatialIndex, convergence_study, nearest_distance, sample_surface


def random_transform(rng, max_translation=0.2):
    rotation = Rotation.random(random_state=int(rng.integers(0, 2**31))).as_matrix()
    return RigidTransform(rotation, rng.uniform(-max_translation, max_translation, 3))


UNIT_SQUARE = TriangleMesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2], [0, 2, 3]])


# =============================================================================
# TRANSFORM TESTS
# =============================================================================
# RigidTransform construction, composition and application to shapes.
# =============================================================================

class RigidTransformTests(SimpleTestCase):
    """Test transform construction, validation and algebra."""

    def test_identity_leaves_points_unchanged(self):
        """Test the identity transform maps a point set onto itself."""
        points = PointSet(np.random.default_rng(0).normal(size=(50, 3)))
        moved = apply_transform(RigidTransform.identity(), points)
        self.assertTrue(np.array_equal(moved.points, points.points),
            msg="❌ Identity transform changed the point set.")

    def test_translation_moves_origin(self):
        """Test translation (0,0,1) maps the origin to (0,0,1)."""
        moved = apply_transform(RigidTransform.from_translation([0, 0, 1]), PointSet([[0, 0, 0]]))
        self.assertTrue(np.allclose(moved.points[0], [0, 0, 1]),
            msg=f"❌ Expected (0,0,1), got {moved.points[0]}.")

    def test_quarter_turn_about_z(self):
        """Test a 90° rotation about z maps (1,0,0) to (0,1,0)."""
        turn = RigidTransform.from_axis_angle([0, 0, 1], 90.0)
        moved = apply_transform(turn, PointSet([[1, 0, 0]]))
        self.assertTrue(np.allclose(moved.points[0], [0, 1, 0], atol=1e-12, rtol=0),
            msg=f"❌ Quarter turn gave {moved.points[0]}.")

    def test_empty_inputs_stay_empty(self):
        """Test empty point sets and meshes map to empty outputs."""
        transform = RigidTransform.from_translation([1, 2, 3])
        self.assertEqual(len(apply_transform(transform, PointSet.empty())), 0,
            msg="❌ Empty point set did not stay empty.")
        self.assertEqual(len(apply_transform(transform, TriangleMesh([], []))), 0,
            msg="❌ Empty mesh did not stay empty.")

    def test_box_becomes_oriented_box(self):
        """Test a transformed Box3 is an oriented box with mapped corners."""
        box = Box3([0, 0, 0], [0.5, 1.0, 1.5])
        transform = RigidTransform.from_axis_angle([0, 1, 0], 30.0, [0.1, 0.2, 0.3])
        oriented = apply_transform(transform, box)
        self.assertIsInstance(oriented, OrientedBox, msg="❌ Box3 did not become an OrientedBox.")
        self.assertTrue(np.allclose(oriented.corners(), transform.apply(box.corners())),
            msg="❌ Oriented box corners are not the mapped box corners.")
        twice = apply_transform(transform, oriented)
        self.assertTrue(twice.pose.almost_equal(transform @ transform),
            msg="❌ Transforming an oriented box did not compose the poses.")

    def test_inverse_and_associativity(self):
        """Test T⁻¹·T is the identity and composition is associative."""
        rng = np.random.default_rng(1)
        for _ in range(20):
            a, b, c = (random_transform(rng) for _ in range(3))
            self.assertTrue(a.inverse().compose(a).almost_equal(RigidTransform.identity(), atol=1e-9),
                msg="❌ T⁻¹·T is not the identity.")
            self.assertTrue(((a @ b) @ c).almost_equal(a @ (b @ c), atol=1e-9),
                msg="❌ Composition is not associative.")

    def test_matrix_round_trip(self):
        """Test as_matrix / from_matrix reproduce the transform."""
        transform = random_transform(np.random.default_rng(2))
        self.assertTrue(RigidTransform.from_matrix(transform.as_matrix()).almost_equal(transform),
            msg="❌ 4x4 matrix round trip changed the transform.")

    def test_invalid_rotations_rejected(self):
        """Test non-orthonormal, reflecting and non-finite rotations are rejected."""
        with self.assertRaises(InvalidTransformError):
            RigidTransform(np.diag([1.0, 1.0, 2.0]), np.zeros(3))
        with self.assertRaises(InvalidTransformError):
            RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
        with self.assertRaises(InvalidTransformError):
            RigidTransform(np.eye(3), [0.0, np.nan, 0.0])
        with self.assertRaises(InvalidTransformError):
            RigidTransform.from_matrix(np.ones((3, 3)))


# =============================================================================
# SHAPE TYPE TESTS
# =============================================================================

class ShapeTypeTests(SimpleTestCase):
    """Test construction rules of meshes, boxes and categories."""

    def test_mesh_index_validation(self):
        """Test out-of-range and repeated face indices are rejected."""
        with self.assertRaises(DegenerateMeshError):
            TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 3]])
        with self.assertRaises(DegenerateMeshError):
            TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 1]])

    def test_box_rejects_zero_extent(self):
        """Test a box with a zero half extent is rejected at construction."""
        with self.assertRaises(DegenerateBoxError):
            Box3([0, 0, 0], [0.1, 0.0, 0.1])

    def test_box_geometry(self):
        """Test corners, volume and containment of a box."""
        box = Box3([1, 0, 0], [0.5, 1.0, 2.0])
        self.assertAlmostEqual(box.volume, 8.0, places=12, msg="❌ Wrong box volume.")
        self.assertEqual(box.corners().shape, (8, 3), msg="❌ A box must have 8 corners.")
        self.assertTrue(np.allclose(box.corners()[7], [1.5, 1.0, 2.0]),
            msg="❌ Corner 7 should be the max corner.")
        inside = box.contains([[1, 0, 0], [2, 0, 0]])
        self.assertEqual(inside.tolist(), [True, False], msg="❌ Wrong containment result.")

    def test_default_symmetry_table(self):
        """Test bottle, bowl and can are symmetric about +y by default."""
        for name in ('bottle', 'bowl', 'can'):
            category = get_category(name)
            self.assertTrue(category.symmetric, msg=f"❌ {name} should be symmetric.")
            self.assertEqual(category.symmetry_axis, (0.0, 1.0, 0.0), msg=f"❌ {name} axis should be +y.")
        for name in ('camera', 'laptop', 'mug'):
            self.assertFalse(get_category(name).symmetric, msg=f"❌ {name} should not be symmetric.")

    def test_custom_symmetry_axis_normalised(self):
        """Test a user-defined symmetry axis is stored with unit norm."""
        category = get_category('vase', {'vase': (0, 0, 2)})
        self.assertEqual(category.symmetry_axis, (0.0, 0.0, 1.0), msg="❌ Symmetry axis was not normalised.")


# =============================================================================
# POSE ERROR TESTS
# =============================================================================

class PoseErrorTests(SimpleTestCase):
    """Test translation, rotation and symmetric rotation errors."""

    def setUp(self):
        self.rng = np.random.default_rng(3)
        self.bottle = Category('bottle', True, (0, 1, 0))
        self.mug = Category('mug', False)

    def test_translation_error(self):
        """Test identical transforms give 0 and a 3-4-5 offset gives 0.05 m."""
        gt = RigidTransform.identity()
        self.assertEqual(translation_error(gt, gt), 0.0, msg="❌ Identical poses must have zero error.")
        est = RigidTransform.from_axis_angle([1, 2, 3], 77.0, [0.03, 0.04, 0.0])
        self.assertAlmostEqual(translation_error(gt, est), 0.05, places=12,
            msg="❌ Translation error should ignore rotation and equal 0.05 m.")

    def test_rotation_error_values(self):
        """Test 0°, 10° about random axes and 180° about x."""
        gt = random_transform(self.rng)
        self.assertAlmostEqual(rotation_error(gt, gt), 0.0, places=6, msg="❌ Identical rotations must give 0°.")
        for _ in range(20):
            axis = self.rng.normal(size=3)
            est = gt @ RigidTransform.from_axis_angle(axis, 10.0)
            self.assertAlmostEqual(rotation_error(gt, est), 10.0, delta=1e-6,
                msg="❌ A 10° relative rotation was not measured as 10°.")
        flipped = RigidTransform.from_axis_angle([1, 0, 0], 180.0)
        self.assertAlmostEqual(rotation_error(RigidTransform.identity(), flipped), 180.0, places=9,
            msg="❌ A half turn should measure 180°.")

    def test_rotation_error_is_a_metric(self):
        """Test symmetry and the triangle inequality on random rotations."""
        for _ in range(100):
            a, b, c = (random_transform(self.rng) for _ in range(3))
            self.assertAlmostEqual(rotation_error(a, b), rotation_error(b, a), places=9,
                msg="❌ Rotation error is not symmetric.")
            self.assertLessEqual(rotation_error(a, b), rotation_error(a, c) + rotation_error(c, b) + 1e-9,
                msg="❌ Rotation error violates the triangle inequality.")

    def test_left_invariance(self):
        """Test composing both poses on the left leaves both errors unchanged."""
        for _ in range(20):
            gt, est, common = (random_transform(self.rng) for _ in range(3))
            self.assertAlmostEqual(rotation_error(common @ gt, common @ est), rotation_error(gt, est), delta=1e-9,
                msg="❌ Rotation error changed under a common left transform.")
            self.assertAlmostEqual(translation_error(common.inverse() @ gt, common.inverse() @ est),
                                   translation_error(gt, est), delta=1e-9,
                msg="❌ Translation error changed under a common left transform.")

    def test_symmetric_error_ignores_spin(self):
        """Test rotations about the symmetry axis are ignored for symmetric categories."""
        gt = random_transform(self.rng)
        spun = gt @ RigidTransform.from_axis_angle((0, 1, 0), 73.0)
        self.assertLess(rotation_error_symmetric(gt, spun, self.bottle), 1e-6,
            msg="❌ Spin about the symmetry axis was not ignored.")
        for _ in range(20):
            angle = float(self.rng.uniform(0, 360))
            spun = gt @ RigidTransform.from_axis_angle((0, 1, 0), angle)
            self.assertLess(rotation_error_symmetric(gt, spun, self.bottle), 1e-6,
                msg=f"❌ Spin of {angle:.1f}° about the axis gave a non-zero error.")

    def test_symmetric_error_sees_tilt(self):
        """Test a 10° tilt orthogonal to the symmetry axis is measured as 10°."""
        gt = random_transform(self.rng)
        tilted = gt @ RigidTransform.from_axis_angle((1, 0, 0), 10.0)
        self.assertAlmostEqual(rotation_error_symmetric(gt, tilted, self.bottle), 10.0, delta=1e-6,
            msg="❌ Tilt away from the symmetry axis was not measured.")

    def test_non_symmetric_delegates(self):
        """Test non-symmetric categories give exactly rotation_error."""
        gt, est = random_transform(self.rng), random_transform(self.rng)
        self.assertEqual(rotation_error_symmetric(gt, est, self.mug), rotation_error(gt, est),
            msg="❌ Non-symmetric category did not delegate to rotation_error.")


# =============================================================================
# SAMPLING TESTS
# =============================================================================

class SurfaceSamplingTests(SimpleTestCase):
    """Test area-weighted surface sampling."""

    def test_unit_square_mean(self):
        """Test the sample mean of a unit square is near its centroid."""
        points = sample_surface(UNIT_SQUARE, 10000, seed=5).points
        self.assertTrue(np.allclose(points.mean(axis=0), [0.5, 0.5, 0.0], atol=0.02),
            msg=f"❌ Sample mean {points.mean(axis=0)} too far from the centroid.")

    def test_point_lies_on_triangle(self):
        """Test a single sample satisfies the triangle's plane equation."""
        triangle = TriangleMesh([[0, 0, 1], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
        point = sample_surface(triangle, 1, seed=11).points[0]
        self.assertAlmostEqual(point.sum(), 1.0, delta=1e-12, msg="❌ Sample is off the triangle plane.")
        self.assertTrue(np.all(point >= -1e-12), msg="❌ Sample is outside the triangle.")

    def test_sampling_is_deterministic(self):
        """Test the same mesh and seed give bit-identical samples."""
        first = sample_surface(UNIT_SQUARE, 500, seed=(7, 1)).points
        second = sample_surface(UNIT_SQUARE, 500, seed=(7, 1)).points
        other = sample_surface(UNIT_SQUARE, 500, seed=(7, 2)).points
        self.assertTrue(np.array_equal(first, second), msg="❌ Same seed produced different samples.")
        self.assertFalse(np.array_equal(first, other), msg="❌ Different streams produced identical samples.")

    def test_zero_area_mesh_rejected(self):
        """Test a mesh without area cannot be sampled."""
        flat = TriangleMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])
        with self.assertRaises(DegenerateMeshError):
            sample_surface(flat, 10, seed=0)


class SpatialIndexTests(SimpleTestCase):
    """Test the exact nearest-neighbour index."""

    def test_trivial_queries(self):
        """Test distance to a single point and to an indexed point."""
        index = SpatialIndex([[0, 0, 0]])
        self.assertEqual(nearest_distance(index, [0, 0, 2]), 2.0, msg="❌ Expected distance 2.0.")
        self.assertEqual(nearest_distance(index, [0, 0, 0]), 0.0, msg="❌ Indexed point must be at distance 0.")

    def test_matches_linear_scan(self):
        """Test index distances equal a brute-force scan."""
        rng = np.random.default_rng(8)
        points = rng.uniform(-1, 1, (1000, 3))
        queries = rng.uniform(-1.5, 1.5, (100, 3))
        index = SpatialIndex(points)
        distances, _ = index.query(queries)
        brute = np.linalg.norm(queries[:, None, :] - points[None, :, :], axis=2).min(axis=1)
        self.assertTrue(np.allclose(distances, brute, atol=1e-12, rtol=0),
            msg="❌ Index distances differ from the linear scan.")
        for query, expected in zip(queries[:10], brute[:10]):
            self.assertAlmostEqual(nearest_distance(index, query), expected, delta=1e-12,
                msg="❌ nearest_distance differs from the linear scan.")

    def test_empty_index_rejected(self):
        """Test querying an empty index raises."""
        with self.assertRaises(EmptyPointSetError):
            nearest_distance(SpatialIndex(PointSet.empty()), [0, 0, 0])


# =============================================================================
# CONVERGENCE STUDY TESTS
# =============================================================================

class ConvergenceStudyTests(SimpleTestCase):
    """Test the sample-count convergence curves on the 10 cm mug."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.mug = mug(handle=True)

    def test_identical_meshes_converge(self):
        """Test chamfer shrinks with n and F-score reaches 1.0 on identical meshes."""
        n_list = [100, 1000, 5000, 20000, 100000]
        rows = convergence_study(self.mug, self.mug, n_list, delta=0.01, seed=0)
        self.assertEqual([row.n_samples for row in rows], n_list, msg="❌ Rows are not in n_list order.")
        self.assertGreaterEqual(rows[0].chamfer / rows[-1].chamfer, 5.0,
            msg=f"❌ CD(100)/CD(100000) = {rows[0].chamfer / rows[-1].chamfer:.2f} < 5.")
        for row in rows:
            if row.n_samples >= 5000:
                self.assertEqual(row.fscore, 1.0, msg=f"❌ F-score at n={row.n_samples} is {row.fscore}.")
        for previous, current in zip(rows, rows[1:]):
            self.assertGreaterEqual(current.fscore, previous.fscore - 0.02,
                msg="❌ F-score dropped by more than 0.02 between steps.")

    def test_mug_without_handle(self):
        """Test the chamfer gap to a handle-less mug moves with n while the F@1cm gap holds still."""
        n_list = [100, 1000, 20000]
        without = convergence_study(self.mug, mug(handle=False), n_list, 0.01, 0)
        same = convergence_study(self.mug, self.mug, n_list, 0.01, 0)
        chamfer_gaps = [pair.chamfer / base.chamfer - 1.0 for pair, base in zip(without, same)]
        fscore_gaps = [1.0 - pair.fscore / base.fscore for pair, base in zip(without, same)]

        chamfer_shift = chamfer_gaps[2] - chamfer_gaps[1]
        fscore_shift = abs(fscore_gaps[2] - fscore_gaps[1])
        self.assertGreater(chamfer_gaps[2], chamfer_gaps[0], msg=f"❌ Chamfer gap did not grow: {chamfer_gaps}.")
        self.assertGreater(chamfer_shift, 0.2, msg=f"❌ Chamfer gap barely moved: {chamfer_gaps}.")
        self.assertLess(fscore_shift, 0.05, msg=f"❌ F-score gap moved: {fscore_gaps}.")
        self.assertGreater(chamfer_shift, fscore_shift, msg="❌ F-score gap moved more than the chamfer gap.")
        self.assertLess(without[-1].fscore, 1.0, msg="❌ The missing handle should cost F-score at n = 20000.")
        self.assertEqual(same[-1].fscore, 1.0, msg="❌ Identical mugs should score 1.0 at n = 20000.")

    def test_far_prediction_scores_zero(self):
        """Test a prediction 1 km away has F-score 0 for every n."""
        far = apply_transform(RigidTransform.from_translation([1000.0, 0, 0]), self.mug)
        rows = convergence_study(self.mug, far, [100, 1000], delta=0.01, seed=0)
        self.assertTrue(all(row.fscore == 0.0 for row in rows), msg="❌ Far prediction scored above 0.")


# =============================================================================
# PROCEDURAL MESH TESTS
# =============================================================================

class PrimitiveTests(SimpleTestCase):
    """Test the procedural meshes used by fixtures and studies."""

    def test_mug_dimensions(self):
        """Test the mug is 10 cm tall and centred on its height."""
        for handle in (True, False):
            vertices = mug(handle=handle).vertices
            self.assertAlmostEqual(vertices[:, 1].max() - vertices[:, 1].min(), 0.1, places=9,
                msg="❌ Mug is not 10 cm tall.")
            self.assertAlmostEqual(vertices[:, 1].max(), 0.05, places=9, msg="❌ Mug is not centred in y.")
        self.assertGreater(mug(handle=True).vertices[:, 0].max(), 0.05, msg="❌ Handle does not stick out.")

    def test_cylinder_area(self):
        """Test the revolved cylinder has nearly the analytic surface area."""
        radius, height = 0.03, 0.1
        expected = 2 * math.pi * radius * height + 2 * math.pi * radius ** 2
        self.assertAlmostEqual(cylinder(radius, height).surface_area, expected, delta=0.01 * expected,
            msg="❌ Cylinder area differs from the analytic value by more than 1%.")

    def test_builtin_lookup(self):
        """Test builtin names resolve and unknown names are rejected."""
        self.assertGreater(len(builtin_mesh('mug-no-handle')), 0, msg="❌ Builtin mug has no faces.")
        with self.assertRaises(ValidationError):
            builtin_mesh('teapot')


# =============================================================================
# TEST EXECUTION NOTES
# =============================================================================
"""
To run these tests:

# Run all geometry core tests with verbose output
pytest geometry/tests.py -v

# Run only the pose error tests
pytest geometry/tests.py::PoseErrorTests -v

These tests verify:
✅ Rigid transform algebra and shape transformation
✅ Rotation / translation errors and the symmetry rule
✅ Deterministic area-weighted sampling
✅ Exact nearest-neighbour queries
✅ Chamfer / F-score convergence with the sample count
"""
