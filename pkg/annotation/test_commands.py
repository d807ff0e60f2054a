"""
Test suite for annotation sequences and the annotate management command.

This file contains automated tests to verify:
1. Sequence manifests and 16-bit depth images load back as written
2. Seed box poses from explicit entries or camera and world poses
3. End-to-end annotation of synthetic cube and cylinder sequences
4. Exit codes and stage names of failing runs

Tests use pytest with descriptive error messages and docstrings.
Run with: pytest annotation/test_commands.py -v
"""

import json
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from geometry.core import Box3, RigidTransform, get_category, rotation_error, translation_error
from evaluation.dataset_io import load_ground_truth
from annotation.pipeline import DepthFrame
from annotation.rendering import octant_cameras, pinhole_intrinsics, render_box_depth, render_cylinder_depth
from annotation.sequence import SequenceObject, load_sequence, read_depth_png, write_depth_png, write_sequence

CUBE = Box3(np.zeros(3), [0.03, 0.03, 0.03])
SEED_BOX = Box3(np.zeros(3), [0.05, 0.05, 0.05])
OBJECT_POSE = RigidTransform.from_axis_angle([0, 1, 0], 20.0, [0.05, 0.0, 0.02])
SIZE = 200
INTRINSICS = pinhole_intrinsics(525.0, SIZE, SIZE)


def render_frames(render, cameras, empty=False):
    frames = []
    for index, camera in enumerate(cameras):
        depth = np.zeros((SIZE, SIZE)) if empty else render(camera)
        frames.append(DepthFrame(depth, INTRINSICS, camera, frame_id=f"{index:04d}"))
    return frames


def cube_sequence(root, empty=False, evaluation_frames=('0000', '0003')):
    """Eight views of a 6 cm cube inside a 10 cm seed box."""
    cameras = octant_cameras(OBJECT_POSE.translation, 0.4)
    frames = render_frames(
        lambda camera: render_box_depth(CUBE, OBJECT_POSE, camera, INTRINSICS, (SIZE, SIZE), background=2.0),
        cameras, empty)
    item = SequenceObject('cube', get_category('camera'), SEED_BOX, tuple(camera @ OBJECT_POSE for camera in cameras))
    write_sequence(root, 'synthetic', frames, [item], evaluation_frames=evaluation_frames)
    return root


def cylinder_sequence(root):
    """Four views of a 6 cm wide can."""
    cameras = [octant_cameras(OBJECT_POSE.translation, 0.4)[index] for index in (0, 3, 5, 6)]
    frames = render_frames(
        lambda camera: render_cylinder_depth(0.03, 0.08, OBJECT_POSE, camera, INTRINSICS, (SIZE, SIZE), 2.0),
        cameras)
    seed = Box3(np.zeros(3), [0.045, 0.05, 0.045])
    item = SequenceObject('can', get_category('can'), seed, tuple(camera @ OBJECT_POSE for camera in cameras))
    write_sequence(root, 'cans', frames, [item])
    return root


class AnnotationTestCase(SimpleTestCase):
    """Temporary directories and a quiet command runner."""

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def run_annotate(self, sequence, out, **options):
        stdout, stderr = StringIO(), StringIO()
        call_command('annotate', str(sequence), out=str(out), stdout=stdout, stderr=stderr, **options)
        return stdout.getvalue()


# =============================================================================
# SEQUENCE IO TESTS
# =============================================================================

class SequenceIOTests(AnnotationTestCase):
    """Test reading and writing annotation sequences."""

    def test_depth_png(self):
        """Test depth survives a 16-bit millimeter PNG within half a millimeter."""
        depth = np.linspace(0.0, 2.5, 64).reshape(8, 8)
        path = write_depth_png(depth, self.tmp / 'depth.png')
        loaded = read_depth_png(path)
        self.assertEqual(loaded.shape, (8, 8), msg="❌ Depth shape changed.")
        self.assertLessEqual(np.abs(loaded - depth).max(), 0.0005 + 1e-12, msg="❌ Depth off by more than 0.5 mm.")
        self.assertEqual(loaded[0, 0], 0.0, msg="❌ Invalid pixels must stay 0.")

    def test_depth_out_of_range(self):
        """Test depth beyond 65.535 m at millimeter scale is rejected."""
        with self.assertRaises(ValidationError, msg="❌ Oversized depth accepted."):
            write_depth_png(np.full((2, 2), 70.0), self.tmp / 'far.png')

    def test_round_trip(self):
        """Test frames, cameras and seed box poses load back as written."""
        cube_sequence(self.tmp / 'seq')
        sequence = load_sequence(self.tmp / 'seq')
        self.assertEqual(sequence.name, 'synthetic', msg="❌ Sequence name lost.")
        self.assertEqual(len(sequence.frames), 8, msg="❌ Frames lost.")
        self.assertEqual(sequence.evaluation_frames, ('0000', '0003'), msg="❌ Evaluation frames lost.")
        cameras = octant_cameras(OBJECT_POSE.translation, 0.4)
        for frame, camera, pose in zip(sequence.frames, cameras, sequence.objects[0].box_poses):
            self.assertTrue(frame.camera_pose.almost_equal(camera), msg=f"❌ Camera of {frame.frame_id} changed.")
            self.assertTrue(pose.almost_equal(camera @ OBJECT_POSE), msg=f"❌ Seed of {frame.frame_id} changed.")

    def test_world_pose_seeds(self):
        """Test an object world pose seeds every frame through its camera pose."""
        manifest = cube_sequence(self.tmp / 'seq') / 'sequence.json'
        document = json.loads(manifest.read_text(encoding='utf-8'))
        entry = document['objects'][0]
        del entry['box_poses']
        entry['pose'] = OBJECT_POSE.as_matrix().tolist()
        manifest.write_text(json.dumps(document), encoding='utf-8')
        sequence = load_sequence(manifest)
        for frame, pose in zip(sequence.frames, sequence.objects[0].box_poses):
            self.assertTrue(pose.almost_equal(frame.camera_pose @ OBJECT_POSE), msg="❌ Seed not derived.")

    def test_missing_seed(self):
        """Test an object without any seed for a frame names that frame."""
        manifest = cube_sequence(self.tmp / 'seq') / 'sequence.json'
        document = json.loads(manifest.read_text(encoding='utf-8'))
        del document['objects'][0]['box_poses']['0005']
        manifest.write_text(json.dumps(document), encoding='utf-8')
        with self.assertRaises(ValidationError, msg="❌ Missing seed accepted.") as context:
            load_sequence(manifest)
        self.assertIn('0005', context.exception.messages[0], msg="❌ Error does not name the frame.")


# =============================================================================
# ANNOTATE COMMAND TESTS
# =============================================================================

class AnnotateCommandTests(AnnotationTestCase):
    """Test the annotate command end to end."""

    def test_cube_sequence(self):
        """Test eight views of a cube give a mesh box within one voxel and refined poses."""
        out = self.tmp / 'gt'
        output = self.run_annotate(cube_sequence(self.tmp / 'seq'), out)
        self.assertIn('cube:', output, msg="❌ No summary line for the cube.")

        samples = load_ground_truth(out)
        self.assertEqual([sample.sample_id for sample in samples],
                         ['synthetic_cube_0000', 'synthetic_cube_0003'], msg="❌ Unexpected ground-truth samples.")
        cameras = octant_cameras(OBJECT_POSE.translation, 0.4)
        for sample, camera in zip(samples, (cameras[0], cameras[3])):
            self.assertLessEqual(np.abs(sample.box.half_extents - CUBE.half_extents).max(), 0.005 + 1e-6,
                msg=f"❌ {sample.sample_id}: box half extents {sample.box.half_extents}.")
            truth = camera @ OBJECT_POSE
            self.assertLess(translation_error(truth, sample.pose), 0.005, msg=f"❌ {sample.sample_id}: pose moved.")
            self.assertLess(rotation_error(truth, sample.pose), 2.0, msg=f"❌ {sample.sample_id}: pose rotated.")
            self.assertIsNotNone(sample.depth_ref, msg="❌ Depth reference not carried over.")

        diagnostics = json.loads((out / 'diagnostics.json').read_text(encoding='utf-8'))
        stages = diagnostics['objects'][0]
        self.assertEqual(len(stages['refine']), 8, msg="❌ Refinement not reported per frame.")
        self.assertEqual(stages['accumulate']['replicas'], 0, msg="❌ Non-symmetric object was replicated.")
        self.assertGreater(stages['carve']['free'], 0, msg="❌ Nothing was carved.")
        self.assertTrue(stages['extract']['watertight'], msg="❌ Extracted mesh is not watertight.")
        self.assertEqual(diagnostics['parameters']['resolution_m'], 0.005, msg="❌ Parameters not recorded.")
        self.assertTrue((out / 'objects' / 'cube.ply').is_file(), msg="❌ Object mesh not written.")

    def test_symmetric_sequence(self):
        """Test a can sequence records its replica count and the (k + 1)x point total."""
        out = self.tmp / 'gt'
        self.run_annotate(cylinder_sequence(self.tmp / 'seq'), out, no_refine=True)
        stages = json.loads((out / 'diagnostics.json').read_text(encoding='utf-8'))['objects'][0]
        self.assertTrue(stages['symmetric'], msg="❌ Can not treated as symmetric.")
        self.assertEqual(stages['accumulate']['replicas'], 3, msg="❌ Replica count not recorded.")
        self.assertEqual(stages['accumulate']['total_points'], 4 * stages['accumulate']['cropped_points'],
            msg="❌ Replication did not multiply the point count by 4.")

    def test_reruns_are_identical(self):
        """Test two runs write byte-identical manifests and diagnostics."""
        sequence = cube_sequence(self.tmp / 'seq')
        self.run_annotate(sequence, self.tmp / 'a', no_refine=True)
        self.run_annotate(sequence, self.tmp / 'b', no_refine=True)
        for name in ('manifest.json', 'diagnostics.json'):
            self.assertEqual((self.tmp / 'a' / name).read_bytes(), (self.tmp / 'b' / name).read_bytes(),
                msg=f"❌ {name} differs between runs.")

    def test_empty_depth(self):
        """Test a sequence without depth fails with 'no points in box' at the accumulate stage."""
        with self.assertRaises(CommandError, msg="❌ Empty sequence was annotated.") as context:
            self.run_annotate(cube_sequence(self.tmp / 'seq', empty=True), self.tmp / 'gt')
        self.assertEqual(context.exception.returncode, 2, msg="❌ Computation failures exit with 2.")
        message = str(context.exception)
        self.assertIn("'accumulate'", message, msg=f"❌ Stage not named: {message}")
        self.assertIn('no points in box', message, msg=f"❌ Cause not reported: {message}")
        self.assertFalse((self.tmp / 'gt' / 'manifest.json').exists(), msg="❌ Partial output written.")

    def test_invalid_inputs(self):
        """Test a missing sequence and bad parameters exit with code 1."""
        sequence = cube_sequence(self.tmp / 'seq')
        cases = [
            (self.tmp / 'missing', {}),
            (sequence, {'resolution': 0.0}),
            (sequence, {'smoothing_lambda': 1.5}),
        ]
        for path, options in cases:
            with self.assertRaises(CommandError, msg=f"❌ {path.name} {options} accepted.") as context:
                self.run_annotate(path, self.tmp / 'gt', **options)
            self.assertEqual(context.exception.returncode, 1, msg=f"❌ {path.name} {options} should exit with 1.")


# =============================================================================
# TEST EXECUTION NOTES
# =============================================================================
"""
To run these tests:

# Run all annotation command tests with verbose output
pytest annotation/test_commands.py -v

# Run only the end-to-end tests
pytest annotation/test_commands.py::AnnotateCommandTests -v

These tests verify:
✅ Depth PNG and sequence manifest round trips
✅ Seed box poses from explicit entries or world poses
✅ Cube mesh and box within one voxel, refined poses close to truth
✅ Symmetry replica counts in the diagnostics
✅ Exit codes 1 and 2 with stage names
"""
