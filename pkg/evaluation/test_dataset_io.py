"""
Tests for manifest loading, validation, ground-truth round-trips and report writers.

Run with: pytest evaluation/test_dataset_io.py -v
"""

import json
import shutil
import tempfile
from pathlib import Path

import numpy as np
import trimesh
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from geometry.core import PointSet, RigidTransform, TriangleMesh
from evaluation.aggregation import EvaluationRecord, get_preset, precision_table
from evaluation.dataset_io import (
    GROUND_TRUTH_FORMAT, PREDICTIONS_FORMAT, get_adapter, load_ground_truth, load_mesh, load_predictions,
    write_ground_truth,
)
from evaluation.reports import format_value, write_category_table, write_records, write_summary_table

FIXTURES = Path(__file__).resolve().parent / 'fixtures'
SYNTHETIC6 = FIXTURES / 'synthetic6'
IDENTITY = FIXTURES / 'synthetic6_identity'
CAN_MESH = SYNTHETIC6 / 'meshes' / 'can.obj'
IDENTITY_POSE = np.eye(4).tolist()


def write_json(path, document):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document), encoding='utf-8')
    return path


def gt_document(samples):
    return {'format': GROUND_TRUTH_FORMAT, 'version': 1, 'dataset': 'test', 'samples': samples}


def predictions_document(predictions, method='test'):
    return {'format': PREDICTIONS_FORMAT, 'version': 1, 'method': method, 'predictions': predictions}


class TempDirMixin:
    def setUp(self):
        super().setUp()
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)
        shutil.copy(CAN_MESH, self.tmp / 'can.obj')

    def tearDown(self):
        self._tmp.cleanup()
        super().tearDown()

    def entry(self, sample_id, **overrides):
        entry = {'sample_id': sample_id, 'category': 'can', 'mesh': 'can.obj', 'pose': IDENTITY_POSE}
        entry.update(overrides)
        return entry


# =============================================================================
# GROUND-TRUTH LOADING TESTS
# =============================================================================

class LoadGroundTruthTests(TempDirMixin, SimpleTestCase):
    """Test the native ground-truth manifest."""

    def test_shipped_fixture(self):
        """Test the synthetic fixture loads 6 samples, one per category, ordered by id."""
        samples = load_ground_truth(SYNTHETIC6)
        self.assertEqual(len(samples), 6, msg=f"❌ Expected 6 samples, got {len(samples)}.")
        self.assertEqual([sample.sample_id for sample in samples], sorted(sample.sample_id for sample in samples),
            msg="❌ Samples are not ordered by sample_id.")
        self.assertEqual(sorted(sample.category.name for sample in samples),
                         ['bottle', 'bowl', 'camera', 'can', 'laptop', 'mug'], msg="❌ Unexpected categories.")
        symmetric = sorted(sample.category.name for sample in samples if sample.category.symmetric)
        self.assertEqual(symmetric, ['bottle', 'bowl', 'can'], msg="❌ Symmetry table not applied.")

    def test_box_given_or_derived(self):
        """Test an explicit box is kept and a missing one is the tight box of the mesh."""
        samples = {sample.sample_id: sample for sample in load_ground_truth(SYNTHETIC6)}
        self.assertTrue(samples['scene2_can'].box_given, msg="❌ Manifest box not marked as given.")
        laptop = samples['scene2_laptop']
        self.assertFalse(laptop.box_given, msg="❌ Derived box marked as given.")
        np.testing.assert_allclose(laptop.box.half_extents, [0.1, 0.01, 0.07], atol=1e-12,
            err_msg="❌ Derived laptop box does not match the mesh.")
        self.assertEqual(samples['scene1_camera'].intrinsics.shape, (3, 3), msg="❌ Intrinsics not parsed.")

    def test_missing_mesh_names_path(self):
        """Test a manifest referencing a missing mesh names the sample, the field and the path."""
        write_json(self.tmp / 'manifest.json', gt_document([self.entry('s1', mesh='nowhere/mug.ply')]))
        with self.assertRaises(ValidationError) as context:
            load_ground_truth(self.tmp)
        message = ' '.join(context.exception.messages)
        for fragment in ("'s1'", "'mesh'", 'nowhere'):
            self.assertIn(fragment, message, msg=f"❌ Error '{message}' lacks {fragment}.")

    def test_malformed_fields(self):
        """Test bad poses, boxes and duplicates are rejected, never skipped."""
        bad_rotation = [[2, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]]
        cases = {
            'pose': [self.entry('s1', pose=bad_rotation)],
            'box': [self.entry('s1', box={'center': [0, 0, 0], 'half_extents': [0, 1, 1]})],
            'category': [self.entry('s1', category='')],
            'sample_id': [self.entry('s1'), self.entry('s1')],
        }
        for field_name, entries in cases.items():
            write_json(self.tmp / 'manifest.json', gt_document(entries))
            with self.assertRaises(ValidationError, msg=f"❌ Malformed {field_name} was accepted.") as context:
                load_ground_truth(self.tmp)
            self.assertIn(f"'{field_name}'", ' '.join(context.exception.messages),
                msg=f"❌ Error does not name the field {field_name}.")

    def test_missing_manifest_and_adapter(self):
        """Test a missing manifest and an unknown adapter are validation errors."""
        with self.assertRaises(ValidationError):
            load_ground_truth(self.tmp / 'absent')
        with self.assertRaises(ValidationError):
            get_adapter('real275-raw')

    def test_redwood_shaped_layout(self):
        """Test 3 categories × 5 sequences × 5 frames load as 75 samples."""
        entries = []
        for category in ('bottle', 'bowl', 'mug'):
            for sequence in range(5):
                mesh_ref = f"{category}/{sequence:02d}/mesh.obj"
                (self.tmp / mesh_ref).parent.mkdir(parents=True)
                shutil.copy(CAN_MESH, self.tmp / mesh_ref)
                for frame in range(5):
                    translation = [0.0, 0.0, 0.5 + 0.01 * frame]
                    pose = RigidTransform.from_translation(translation).as_matrix().tolist()
                    entries.append(self.entry(f"{category}_{sequence:02d}_{frame:03d}", category=category,
                                              mesh=mesh_ref, pose=pose))
        write_json(self.tmp / 'manifest.json', gt_document(entries))
        samples = load_ground_truth(self.tmp)
        self.assertEqual(len(samples), 75, msg=f"❌ Expected 75 samples, got {len(samples)}.")


# =============================================================================
# ROUND-TRIP TESTS
# =============================================================================

class GroundTruthRoundTripTests(TempDirMixin, SimpleTestCase):
    """Test write_ground_truth followed by load_ground_truth."""

    def test_round_trip(self):
        """Test poses, boxes, categories and intrinsics come back unchanged."""
        original = load_ground_truth(SYNTHETIC6)
        write_ground_truth(original, self.tmp / 'copy', dataset='synthetic6')
        reloaded = load_ground_truth(self.tmp / 'copy')
        self.assertEqual(len(reloaded), len(original), msg="❌ Sample count changed.")
        for before, after in zip(original, reloaded):
            self.assertEqual(before.sample_id, after.sample_id, msg="❌ Sample order changed.")
            self.assertEqual(before.category, after.category, msg=f"❌ Category of {before.sample_id} changed.")
            np.testing.assert_array_equal(before.pose.as_matrix(), after.pose.as_matrix(),
                err_msg=f"❌ Pose of {before.sample_id} changed.")
            np.testing.assert_array_equal(before.box.center, after.box.center, err_msg="❌ Box center changed.")
            np.testing.assert_array_equal(before.box.half_extents, after.box.half_extents,
                err_msg="❌ Box extents changed.")
            # Meshes are stored as binary PLY, i.e. single-precision vertices.
            np.testing.assert_allclose(before.mesh.vertices, after.mesh.vertices, atol=1e-7,
                err_msg=f"❌ Mesh of {before.sample_id} changed.")
            np.testing.assert_array_equal(before.mesh.faces, after.mesh.faces, err_msg="❌ Faces changed.")
        camera = [sample for sample in reloaded if sample.sample_id == 'scene1_camera'][0]
        self.assertIsNotNone(camera.intrinsics, msg="❌ Intrinsics were not written.")

    def test_manifest_is_deterministic(self):
        """Test writing the same samples twice gives identical bytes."""
        samples = load_ground_truth(SYNTHETIC6)
        first = write_ground_truth(samples, self.tmp / 'a').read_bytes()
        second = write_ground_truth(samples, self.tmp / 'a').read_bytes()
        self.assertEqual(first, second, msg="❌ Manifest bytes differ between writes.")


# =============================================================================
# PREDICTION LOADING TESTS
# =============================================================================

class LoadPredictionsTests(TempDirMixin, SimpleTestCase):
    """Test predictions manifests and their join to the ground truth."""

    def setUp(self):
        super().setUp()
        self.gt = load_ground_truth(SYNTHETIC6)
        self.ids = [sample.sample_id for sample in self.gt]

    def prediction(self, sample_id, **fields):
        entry = {'sample_id': sample_id, 'pose': IDENTITY_POSE, 'mesh': str(CAN_MESH)}
        entry.update(fields)
        return entry

    def test_identity_fixture(self):
        """Test the shipped identity predictions cover every sample."""
        predictions = load_predictions(IDENTITY, self.gt)
        self.assertEqual(predictions.method, 'identity', msg="❌ Method name not read.")
        self.assertEqual(len(predictions), 6, msg="❌ Expected 6 predictions.")
        self.assertEqual(predictions.missing, (), msg="❌ No sample should be missing.")
        self.assertFalse(predictions.multi_hypothesis, msg="❌ Single hypotheses flagged as multiple.")

    def test_missing_prediction_listed(self):
        """Test a sample without prediction is listed as missing."""
        write_json(self.tmp / 'predictions.json', predictions_document([self.prediction(i) for i in self.ids[1:]]))
        predictions = load_predictions(self.tmp, self.gt)
        self.assertEqual(predictions.missing, (self.ids[0],), msg="❌ Missing sample not reported.")
        self.assertIsNone(predictions.get(self.ids[0]), msg="❌ Missing sample has a prediction.")

    def test_duplicates_and_unknown_ids(self):
        """Test duplicate and unknown sample ids are rejected."""
        for entries in ([self.prediction(self.ids[0]), self.prediction(self.ids[0])], [self.prediction('ghost')]):
            write_json(self.tmp / 'predictions.json', predictions_document(entries))
            with self.assertRaises(ValidationError):
                load_predictions(self.tmp, self.gt)

    def test_multi_hypothesis_and_shape_kinds(self):
        """Test hypotheses lists, point-set shapes and box-only predictions."""
        np.save(self.tmp / 'points.npy', np.random.default_rng(0).uniform(-0.02, 0.02, (50, 3)))
        box = {'center': [0, 0, 0], 'half_extents': [0.02, 0.03, 0.02]}
        entries = [
            {'sample_id': self.ids[0], 'hypotheses': [self.prediction(self.ids[0]) for _ in range(3)]},
            self.prediction(self.ids[1], mesh=None, points='points.npy'),
            self.prediction(self.ids[2], mesh=None, box=box),
        ]
        write_json(self.tmp / 'predictions.json', predictions_document(entries))
        predictions = load_predictions(self.tmp, self.gt)
        self.assertTrue(predictions.multi_hypothesis, msg="❌ Hypotheses list not detected.")
        self.assertEqual(len(predictions.get(self.ids[0]).hypotheses), 3, msg="❌ Expected 3 hypotheses.")
        self.assertIsInstance(predictions.get(self.ids[1]).shape, PointSet, msg="❌ .npy not loaded as points.")
        box_only = predictions.get(self.ids[2]).hypotheses[0]
        self.assertIsNone(box_only.shape, msg="❌ Box-only prediction got a shape.")
        self.assertEqual(box_only.resolved_box().volume, 0.04 * 0.06 * 0.04, msg="❌ Box not kept.")

    def test_empty_hypotheses_rejected(self):
        """Test an empty hypotheses list names the field."""
        write_json(self.tmp / 'predictions.json', predictions_document([{'sample_id': self.ids[0], 'hypotheses': []}]))
        with self.assertRaises(ValidationError) as context:
            load_predictions(self.tmp, self.gt)
        self.assertIn("'hypotheses'", ' '.join(context.exception.messages), msg="❌ Field not named.")


# =============================================================================
# MESH IO TESTS
# =============================================================================

class MeshIoTests(TempDirMixin, SimpleTestCase):
    """Test shape loading from the supported file kinds."""

    def test_obj_and_point_cloud(self):
        """Test OBJ meshes load as TriangleMesh and face-less PLY as PointSet."""
        mesh = load_mesh(CAN_MESH)
        self.assertIsInstance(mesh, TriangleMesh, msg="❌ OBJ did not load as a mesh.")
        self.assertEqual((len(mesh.vertices), len(mesh)), (8, 12), msg="❌ Box OBJ should have 8 vertices, 12 faces.")
        trimesh.PointCloud(np.random.default_rng(1).normal(size=(30, 3))).export(str(self.tmp / 'cloud.ply'))
        self.assertIsInstance(load_mesh(self.tmp / 'cloud.ply'), PointSet, msg="❌ Point cloud PLY not a PointSet.")

    def test_unreadable_file(self):
        """Test garbage content is a validation error."""
        (self.tmp / 'broken.ply').write_text('not a mesh', encoding='utf-8')
        with self.assertRaises(ValidationError):
            load_mesh(self.tmp / 'broken.ply')


# =============================================================================
# REPORT WRITER TESTS
# =============================================================================

class ReportWriterTests(TempDirMixin, SimpleTestCase):
    """Test the CSV layouts of the precision tables."""

    def setUp(self):
        super().setUp()
        categories = {sample.sample_id: sample.category for sample in load_ground_truth(SYNTHETIC6)}
        self.records = [
            EvaluationRecord(sample_id, category, 1.0 * index, 0.004 * index, 0.9, 0.95 - 0.05 * index)
            for index, (sample_id, category) in enumerate(sorted(categories.items()))
        ]
        self.reports = [precision_table(self.records, get_preset('real275-suite'), method=name)
                        for name in ('method_a', 'method_b')]

    def test_summary_layout(self):
        """Test 4 preset rows × one column per method."""
        path = write_summary_table(self.tmp / 'summary.csv', self.reports)
        lines = path.read_text(encoding='utf-8').splitlines()
        self.assertEqual(lines[0], 'spec,method_a,method_b', msg=f"❌ Unexpected header {lines[0]}.")
        self.assertEqual(len(lines), 5, msg="❌ Expected a header plus 4 spec rows.")
        self.assertTrue(lines[1].startswith('10deg_2cm,'), msg="❌ First row should be 10deg_2cm.")

    def test_category_layout(self):
        """Test the per-category table lists overall, every category and the counts."""
        path = write_category_table(self.tmp / 'precision.csv', self.reports[0])
        header = path.read_text(encoding='utf-8').splitlines()[0].split(',')
        self.assertEqual(header, ['spec', 'overall', 'bottle', 'bowl', 'camera', 'can', 'laptop', 'mug',
                                  'correct', 'n', 'failures'], msg=f"❌ Unexpected header {header}.")

    def test_records_and_formatting(self):
        """Test 17 significant digits, empty cells for missing metrics and '\\n' line endings."""
        path = write_records(self.tmp / 'records.csv', self.records + [EvaluationRecord.failure('zz', self.records[0].category)])
        text = path.read_bytes()
        self.assertNotIn(b'\r\n', text, msg="❌ CSV uses CRLF line endings.")
        self.assertTrue(text.decode().splitlines()[-1].startswith('zz,bottle,0,true,,'), msg="❌ Failure row malformed.")
        self.assertEqual(format_value(0.1), '0.10000000000000001', msg="❌ Floats need 17 significant digits.")
        self.assertEqual(format_value(float('nan')), 'nan', msg="❌ NaN should print as nan.")
        self.assertEqual(format_value(None), '', msg="❌ Missing values should be empty.")
