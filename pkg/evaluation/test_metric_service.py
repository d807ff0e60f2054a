"""
Tests for per-sample metric computation and the symmetry protocol.

This file contains automated tests to verify:
1. Identity predictions score zero error, IoU 1 and F-score 1 on random fixtures
2. Failures, partial predictions and multiple hypotheses are routed correctly
3. Spinning a symmetric ground truth about its axis changes no outcome

Run with: pytest evaluation/test_metric_service.py -v
"""

import math
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from scipy.spatial.transform import Rotation

from geometry.box_metrics import aabb_of
from geometry.core import CATEGORY_NAMES, RigidTransform, get_category
from geometry.primitives import box, cylinder, mug, sphere
from evaluation.aggregation import classify, get_preset
from evaluation.dataset_io import (
    GroundTruthSample, Hypothesis, Prediction, PredictionSet, load_ground_truth, load_predictions,
)
from evaluation.metric_service import MetricService, metric_service

FIXTURES = Path(__file__).resolve().parent / 'fixtures'
SHAPES = {'box': box, 'cylinder': cylinder, 'sphere': sphere, 'mug': mug}


def random_pose(rng):
    rotation = Rotation.random(random_state=int(rng.integers(0, 2**31))).as_matrix()
    return RigidTransform(rotation, rng.uniform([-0.3, -0.3, 0.4], [0.3, 0.3, 1.2]))


def make_sample(sample_id, category, mesh, pose):
    return GroundTruthSample(sample_id, category, f"{sample_id}.ply", mesh, pose, aabb_of(mesh))


# =============================================================================
# IDENTITY TESTS
# =============================================================================

class IdentitySuiteTests(SimpleTestCase):
    """Test prediction = ground truth on random meshes and poses."""

    def test_fifty_random_fixtures(self):
        """Test d = 0, δ = 0°, IoU = 1 (±1e-9) and F@1cm = 1 for 50 fixtures."""
        rng = np.random.default_rng(42)
        meshes = {name: factory() for name, factory in SHAPES.items()}
        service = MetricService(samples=10000, seed=0, frame='world', delta=0.01)
        for index in range(50):
            shape_name = list(SHAPES)[index % len(SHAPES)]
            category = get_category(CATEGORY_NAMES[int(rng.integers(len(CATEGORY_NAMES)))])
            pose = random_pose(rng)
            sample = make_sample(f"f{index:02d}", category, meshes[shape_name], pose)
            record = service.evaluate_hypothesis(sample, Hypothesis(pose, meshes[shape_name]))
            label = f"{shape_name}/{category.name} #{index}"
            self.assertEqual(record.translation_error, 0.0, msg=f"❌ {label}: translation error not 0.")
            self.assertAlmostEqual(record.rotation_error, 0.0, delta=1e-9, msg=f"❌ {label}: rotation error not 0.")
            self.assertAlmostEqual(record.iou, 1.0, delta=1e-9, msg=f"❌ {label}: IoU {record.iou} is not 1.")
            self.assertEqual(record.fscore, 1.0, msg=f"❌ {label}: F-score {record.fscore} is not 1.")

    def test_fixture_identity_precision(self):
        """Test the shipped identity predictions reach precision 1.0 under both presets."""
        samples = load_ground_truth(FIXTURES / 'synthetic6')
        predictions = load_predictions(FIXTURES / 'synthetic6_identity', samples)
        for preset in ('real275-suite', 'pose-size-suite'):
            result = metric_service.score_method(samples, predictions, get_preset(preset))
            for row in result.report.rows:
                self.assertEqual(row.overall, 1.0, msg=f"❌ {row.spec.name} precision is {row.overall}, not 1.0.")

    def test_records_are_reproducible(self):
        """Test the same seed gives identical records and the worker count changes nothing."""
        samples = load_ground_truth(FIXTURES / 'synthetic6')
        predictions = load_predictions(FIXTURES / 'synthetic6_identity', samples)
        sequential = MetricService(samples=2000, seed=3, workers=1).evaluate(samples, predictions)
        threaded = MetricService(samples=2000, seed=3, workers=4).evaluate(samples, predictions)
        self.assertEqual(list(sequential), list(threaded), msg="❌ Sample order depends on workers.")
        for sample_id in sequential:
            self.assertEqual(sequential[sample_id], threaded[sample_id], msg=f"❌ {sample_id} differs across runs.")


# =============================================================================
# ROUTING TESTS
# =============================================================================

class RecordRoutingTests(SimpleTestCase):
    """Test failures, partial predictions and hypotheses lists."""

    def setUp(self):
        self.mesh = cylinder()
        self.pose = RigidTransform.from_translation([0.0, 0.0, 0.8])
        self.sample = make_sample('s0', get_category('mug'), self.mesh, self.pose)
        self.service = MetricService(samples=2000, seed=0)

    def test_missing_prediction_is_failure(self):
        """Test a missing prediction gives one failed record."""
        records = self.service.evaluate_sample(self.sample, None)
        self.assertEqual(len(records), 1, msg="❌ Expected exactly one record.")
        self.assertTrue(records[0].failed, msg="❌ Missing prediction not marked failed.")

    def test_pose_only_and_box_only(self):
        """Test metrics without their inputs stay empty."""
        pose_only = self.service.evaluate_hypothesis(self.sample, Hypothesis(self.pose))
        self.assertIsNone(pose_only.iou, msg="❌ Pose-only prediction got an IoU.")
        self.assertIsNone(pose_only.fscore, msg="❌ Pose-only prediction got an F-score.")
        box_only = self.service.evaluate_hypothesis(self.sample, Hypothesis(self.pose, box=aabb_of(self.mesh)))
        self.assertAlmostEqual(box_only.iou, 1.0, delta=1e-9, msg="❌ Identical box should give IoU 1.")
        self.assertAlmostEqual(box_only.iou_plus, 1.0, delta=1e-9, msg="❌ Identical box should give IoU⁺ 1.")
        self.assertIsNone(box_only.fscore, msg="❌ Box-only prediction got an F-score.")

    def test_hypotheses_and_best_worst(self):
        """Test three hypotheses give three records and best ≥ first ≥ worst."""
        wrong = RigidTransform.from_translation([0.1, 0.0, 0.8])
        prediction = Prediction('s0', tuple(Hypothesis(pose, self.mesh) for pose in (wrong, self.pose, wrong)))
        predictions = PredictionSet('multi', (prediction,))
        result = self.service.score_method([self.sample], predictions, get_preset('real275-suite'))
        self.assertEqual([record.hypothesis for record in result.records], [0, 1, 2], msg="❌ Hypotheses lost.")
        for name, best, first, worst in result.best_worst:
            self.assertEqual((best, first, worst), (1.0, 0.0, 0.0), msg=f"❌ {name}: unexpected best/first/worst.")

    def test_per_sample_seed(self):
        """Test seeds combine the run seed with a stable hash of the sample id."""
        self.assertEqual(self.service.sample_seed('s0'), MetricService(seed=0).sample_seed('s0'),
            msg="❌ Sample seed is not stable.")
        self.assertNotEqual(self.service.sample_seed('s0'), self.service.sample_seed('s1'),
            msg="❌ Different samples share a seed.")


# =============================================================================
# SYMMETRY PROTOCOL TESTS
# =============================================================================

class SymmetryProtocolTests(SimpleTestCase):
    """Test spinning symmetric ground truth about its axis."""

    def test_spin_invariance(self):
        """Test δ_sym moves < 1e-6°, IoU < 1e-3 and no preset outcome flips."""
        rng = np.random.default_rng(7)
        mesh = cylinder(radius=0.03, height=0.1)
        service = MetricService(samples=4000, seed=1)
        specs = get_preset('real275-suite')
        for name in ('bottle', 'bowl', 'can'):
            category = get_category(name)
            gt_pose = random_pose(rng)
            close = gt_pose @ RigidTransform.from_axis_angle([1, 0, 1], 2.0, [0.002, 0.0, 0.0])
            far = gt_pose @ RigidTransform.from_axis_angle([1, 0, 0], 15.0, [0.03, 0.0, 0.0])
            for prediction_pose in (close, far):
                hypothesis = Hypothesis(prediction_pose, mesh)
                reference = service.evaluate_hypothesis(make_sample('s', category, mesh, gt_pose), hypothesis)
                for angle in rng.uniform(0.0, 360.0, 5):
                    spun_pose = gt_pose @ RigidTransform.from_axis_angle(category.axis, angle)
                    spun = service.evaluate_hypothesis(make_sample('s', category, mesh, spun_pose), hypothesis)
                    self.assertLess(abs(spun.rotation_error - reference.rotation_error), 1e-6,
                        msg=f"❌ {name}: δ_sym moved under a {angle:.1f}° spin.")
                    self.assertLess(abs(spun.iou - reference.iou), 1e-3,
                        msg=f"❌ {name}: IoU moved from {reference.iou} to {spun.iou}.")
                    for spec in specs:
                        self.assertEqual(classify(spun, spec), classify(reference, spec),
                            msg=f"❌ {name}: {spec.name} outcome flipped under a {angle:.1f}° spin.")

    def test_non_symmetric_category_sees_spin(self):
        """Test a laptop spun by 90° is a 90° rotation error."""
        mesh = box((0.2, 0.02, 0.05))
        pose = RigidTransform.from_translation([0.0, 0.0, 0.8])
        spun = pose @ RigidTransform.from_axis_angle([0, 1, 0], 90.0)
        record = MetricService(samples=2000).evaluate_hypothesis(
            make_sample('s', get_category('laptop'), mesh, pose), Hypothesis(spun, mesh))
        self.assertAlmostEqual(record.rotation_error, 90.0, delta=1e-9, msg="❌ Laptop spin not measured.")
        self.assertLess(record.iou, 0.5, msg="❌ Rotated laptop box should overlap poorly.")
        self.assertTrue(math.isfinite(record.chamfer), msg="❌ Chamfer is not finite.")
