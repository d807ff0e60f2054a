"""
On-disk formats of the toolkit: ground-truth and prediction manifests, meshes.

Ground truth (`manifest.json` in the dataset root):

    {
      "format": "posebench-ground-truth", "version": 1, "dataset": "<name>",
      "samples": [
        {"sample_id": "...", "category": "mug", "mesh": "meshes/mug.obj",
         "pose": [[4x4 row-major, meters]],
         "box": {"center": [...], "half_extents": [...]},     (optional)
         "depth": "depth/0001.png", "mask": "...",              (optional)
         "intrinsics": [[3x3]]}                                 (optional)
      ]
    }

Predictions (`predictions.json` in the predictions root):

    {
      "format": "posebench-predictions", "version": 1, "method": "<name>",
      "predictions": [
        {"sample_id": "...", "pose": [[4x4]],
         "mesh": "shapes/x.ply" | "points": "shapes/x.npy", "box": {...}},
        {"sample_id": "...", "hypotheses": [{"pose": ..., "mesh": ...}, ...]}
      ]
    }

Paths are relative to the manifest. Every malformed entry raises Django's
ValidationError naming the sample and the field; nothing is skipped silently.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import trimesh
from django.core.exceptions import ValidationError

from posebench.exceptions import PoseBenchError
from geometry.box_metrics import aabb_of
from geometry.core import Box3, Category, PointSet, RigidTransform, TriangleMesh, get_category
from geometry.primitives import from_trimesh, to_trimesh

logger = logging.getLogger(__name__)

GROUND_TRUTH_MANIFEST = 'manifest.json'
PREDICTIONS_MANIFEST = 'predictions.json'
GROUND_TRUTH_FORMAT = 'posebench-ground-truth'
PREDICTIONS_FORMAT = 'posebench-predictions'
FORMAT_VERSION = 1


# =============================================================================
# LOW-LEVEL PARSING
# =============================================================================

def manifest_path(root, default_name: str) -> Path:
    """Accept either the manifest file itself or the directory holding it."""
    path = Path(root)
    if path.is_dir():
        path = path / default_name
    if not path.is_file():
        raise ValidationError(f"manifest not found: {path}")
    return path


def read_manifest(path: Path, expected_format: str) -> dict:
    try:
        document = json.loads(path.read_text(encoding='utf-8'))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValidationError(f"cannot read manifest {path}: {e}") from None
    if not isinstance(document, dict):
        raise ValidationError(f"manifest {path}: top level must be an object")
    found = document.get('format', expected_format)
    if found != expected_format:
        raise ValidationError(f"manifest {path}: expected format '{expected_format}', got '{found}'")
    return document


def _invalid(sample_id, field_name: str, problem) -> ValidationError:
    return ValidationError(f"sample '{sample_id}': field '{field_name}': {problem}")


def _required(entry: dict, field_name: str, sample_id):
    if field_name not in entry or entry[field_name] is None:
        raise _invalid(sample_id, field_name, "missing")
    return entry[field_name]


def parse_pose(value, sample_id, field_name: str = 'pose') -> RigidTransform:
    try:
        return RigidTransform.from_matrix(np.asarray(value, dtype=float))
    except (TypeError, ValueError) as e:
        raise _invalid(sample_id, field_name, e) from None


def parse_box(value, sample_id, field_name: str = 'box') -> Box3:
    if not isinstance(value, dict):
        raise _invalid(sample_id, field_name, "expected an object with 'center' and 'half_extents'")
    try:
        return Box3(value['center'], value['half_extents'])
    except KeyError as e:
        raise _invalid(sample_id, field_name, f"missing {e}") from None
    except (TypeError, ValueError) as e:
        raise _invalid(sample_id, field_name, e) from None


def parse_intrinsics(value, sample_id, field_name: str = 'intrinsics') -> np.ndarray:
    try:
        matrix = np.asarray(value, dtype=float).reshape(3, 3)
    except (TypeError, ValueError) as e:
        raise _invalid(sample_id, field_name, e) from None
    if not np.all(np.isfinite(matrix)) or abs(np.linalg.det(matrix)) < 1e-12:
        raise _invalid(sample_id, field_name, "intrinsics must be a finite invertible 3x3 matrix")
    return matrix


def resolve_file(base: Path, reference, sample_id, field_name: str) -> Path:
    if not isinstance(reference, str) or not reference:
        raise _invalid(sample_id, field_name, "expected a relative file path")
    path = (base / reference).resolve()
    if not path.is_file():
        raise _invalid(sample_id, field_name, f"file not found: {path}")
    return path


def pose_to_list(pose: RigidTransform) -> list:
    return pose.as_matrix().tolist()


def box_to_dict(box: Box3) -> dict:
    return {'center': box.center.tolist(), 'half_extents': box.half_extents.tolist()}


# =============================================================================
# MESHES
# =============================================================================

def load_mesh(path) -> TriangleMesh | PointSet:
    """
    Load a triangle mesh (PLY, OBJ, STL, OFF, ...) or a point set.

    `.npy` files hold an (N, 3) array; PLY files without faces load as point
    sets; multi-part scenes are merged into a single mesh.
    """
    path = Path(path)
    try:
        if path.suffix.lower() == '.npy':
            return PointSet(np.load(path))
        loaded = trimesh.load(str(path), process=False)
        if isinstance(loaded, trimesh.Scene):
            loaded = trimesh.load(str(path), process=False, force='mesh')
    except (ValidationError, PoseBenchError):
        raise
    except Exception as e:
        raise ValidationError(f"cannot load shape {path}: {e}") from None
    if isinstance(loaded, trimesh.PointCloud):
        return PointSet(np.asarray(loaded.vertices, dtype=float))
    if isinstance(loaded, trimesh.Trimesh):
        if not len(loaded.faces):
            return PointSet(np.asarray(loaded.vertices, dtype=float))
        return from_trimesh(loaded)
    raise ValidationError(f"cannot load shape {path}: unsupported content {type(loaded).__name__}")


def write_mesh(mesh: TriangleMesh, path) -> Path:
    """Write a mesh as binary PLY (vertex coordinates are stored in single precision)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    to_trimesh(mesh).export(str(path), file_type='ply')
    return path


# =============================================================================
# GROUND TRUTH
# =============================================================================

@dataclass(frozen=True, eq=False)
class GroundTruthSample:
    """
    One annotated object instance: category, canonical mesh and its pose.

    `box` is the manifest box when given, otherwise the tight box of the mesh
    in the object frame.
    """
    sample_id: str
    category: Category
    mesh_ref: str
    mesh: TriangleMesh | PointSet
    pose: RigidTransform
    box: Box3
    box_given: bool = False
    depth_ref: str | None = None
    mask_ref: str | None = None
    intrinsics: np.ndarray | None = None


def _parse_sample(entry, base: Path, symmetry_table) -> GroundTruthSample:
    if not isinstance(entry, dict):
        raise ValidationError(f"sample entries must be objects, got {type(entry).__name__}")
    sample_id = entry.get('sample_id')
    if not isinstance(sample_id, str) or not sample_id:
        raise ValidationError(f"sample entry without a valid 'sample_id': {entry!r:.80}")
    category_name = _required(entry, 'category', sample_id)
    if not isinstance(category_name, str) or not category_name:
        raise _invalid(sample_id, 'category', "expected a category name")
    mesh_ref = _required(entry, 'mesh', sample_id)
    mesh_path = resolve_file(base, mesh_ref, sample_id, 'mesh')
    try:
        mesh = load_mesh(mesh_path)
    except ValidationError as e:
        raise _invalid(sample_id, 'mesh', '; '.join(e.messages)) from None
    except PoseBenchError as e:
        raise _invalid(sample_id, 'mesh', e) from None
    pose = parse_pose(_required(entry, 'pose', sample_id), sample_id)

    if entry.get('box') is not None:
        box, box_given = parse_box(entry['box'], sample_id), True
    else:
        try:
            box, box_given = aabb_of(mesh), False
        except PoseBenchError as e:
            raise _invalid(sample_id, 'mesh', f"cannot derive a box: {e}") from None

    for optional in ('depth', 'mask'):
        if entry.get(optional) is not None:
            resolve_file(base, entry[optional], sample_id, optional)
    intrinsics = entry.get('intrinsics')
    return GroundTruthSample(
        sample_id=sample_id,
        category=get_category(category_name, symmetry_table),
        mesh_ref=mesh_ref,
        mesh=mesh,
        pose=pose,
        box=box,
        box_given=box_given,
        depth_ref=entry.get('depth'),
        mask_ref=entry.get('mask'),
        intrinsics=None if intrinsics is None else parse_intrinsics(intrinsics, sample_id),
    )


def load_native_ground_truth(root, symmetry_table: dict | None = None) -> list[GroundTruthSample]:
    path = manifest_path(root, GROUND_TRUTH_MANIFEST)
    document = read_manifest(path, GROUND_TRUTH_FORMAT)
    entries = document.get('samples')
    if not isinstance(entries, list):
        raise ValidationError(f"manifest {path}: 'samples' must be a list")

    samples = {}
    for entry in entries:
        sample = _parse_sample(entry, path.parent, symmetry_table)
        if sample.sample_id in samples:
            raise _invalid(sample.sample_id, 'sample_id', "duplicate sample id")
        samples[sample.sample_id] = sample
    logger.info(f"loaded {len(samples)} ground-truth samples from {path}")
    return [samples[key] for key in sorted(samples)]


def write_ground_truth(samples, root, dataset: str = '') -> Path:
    """
    Write samples as a native dataset: one binary PLY per sample plus manifest.json.

    Returns:
        Path: the manifest written
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for sample in sorted(samples, key=lambda item: item.sample_id):
        if not isinstance(sample.mesh, TriangleMesh):
            raise ValidationError(f"sample '{sample.sample_id}': only triangle meshes can be written")
        mesh_ref = f"meshes/{sample.sample_id}.ply"
        write_mesh(sample.mesh, root / mesh_ref)
        entry = {
            'sample_id': sample.sample_id,
            'category': sample.category.name,
            'mesh': mesh_ref,
            'pose': pose_to_list(sample.pose),
        }
        # Written even when it was derived from the mesh.
        entry['box'] = box_to_dict(sample.box)
        if sample.depth_ref:
            entry['depth'] = sample.depth_ref
        if sample.mask_ref:
            entry['mask'] = sample.mask_ref
        if sample.intrinsics is not None:
            entry['intrinsics'] = np.asarray(sample.intrinsics).tolist()
        entries.append(entry)

    document = {
        'format': GROUND_TRUTH_FORMAT,
        'version': FORMAT_VERSION,
        'dataset': dataset or root.name,
        'samples': entries,
    }
    path = root / GROUND_TRUTH_MANIFEST
    path.write_text(json.dumps(document, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    logger.info(f"wrote {len(entries)} ground-truth samples to {path}")
    return path


# =============================================================================
# DATASET ADAPTERS
# =============================================================================

class DatasetAdapter:
    """Turns a dataset layout on disk into GroundTruthSamples."""

    name = ''

    def load_ground_truth(self, root, symmetry_table: dict | None = None) -> list[GroundTruthSample]:
        raise NotImplementedError


class NativeAdapter(DatasetAdapter):
    name = 'native'

    def load_ground_truth(self, root, symmetry_table=None):
        return load_native_ground_truth(root, symmetry_table)


ADAPTERS = {}


def register_adapter(adapter_class):
    """Class decorator adding a DatasetAdapter to the registry under its `name`."""
    ADAPTERS[adapter_class.name] = adapter_class()
    return adapter_class


register_adapter(NativeAdapter)


def get_adapter(name: str) -> DatasetAdapter:
    try:
        return ADAPTERS[name]
    except KeyError:
        raise ValidationError(f"unknown dataset adapter '{name}', expected one of {', '.join(sorted(ADAPTERS))}") from None


def load_ground_truth(root, symmetry_table: dict | None = None, adapter: str = 'native') -> list[GroundTruthSample]:
    """
    Load and validate every ground-truth sample under `root`, ordered by sample_id.

    Raises:
        ValidationError: missing manifest, missing file or malformed field;
            the message names the sample and the field
    """
    return get_adapter(adapter).load_ground_truth(root, symmetry_table)


# =============================================================================
# PREDICTIONS
# =============================================================================

@dataclass(frozen=True, eq=False)
class Hypothesis:
    """One estimate for a sample: a pose plus an optional shape and/or box."""
    pose: RigidTransform
    shape: TriangleMesh | PointSet | None = None
    box: Box3 | None = None

    def resolved_box(self) -> Box3 | None:
        if self.box is not None:
            return self.box
        if self.shape is not None:
            return aabb_of(self.shape)
        return None


@dataclass(frozen=True, eq=False)
class Prediction:
    sample_id: str
    hypotheses: tuple

    @property
    def pose(self) -> RigidTransform:
        return self.hypotheses[0].pose

    @property
    def shape(self):
        return self.hypotheses[0].shape


@dataclass(frozen=True, eq=False)
class PredictionSet:
    """
    Predictions of one method joined to the ground truth.

    `missing` lists the ground-truth sample ids the method has no prediction
    for; they are scored as failures, so N stays the ground-truth size.
    """
    method: str
    predictions: tuple
    missing: tuple = ()
    source: str = ''
    by_id: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.by_id.update({prediction.sample_id: prediction for prediction in self.predictions})

    def __iter__(self):
        return iter(self.predictions)

    def __len__(self):
        return len(self.predictions)

    def get(self, sample_id: str) -> Prediction | None:
        return self.by_id.get(sample_id)

    @property
    def multi_hypothesis(self) -> bool:
        return any(len(prediction.hypotheses) > 1 for prediction in self.predictions)


def _parse_hypothesis(entry, base: Path, sample_id, field_name: str) -> Hypothesis:
    if not isinstance(entry, dict):
        raise _invalid(sample_id, field_name, "expected an object")
    pose = parse_pose(_required(entry, 'pose', sample_id), sample_id, f"{field_name}.pose")
    shape = None
    for key in ('mesh', 'points'):
        if entry.get(key) is not None:
            shape_path = resolve_file(base, entry[key], sample_id, f"{field_name}.{key}")
            try:
                shape = load_mesh(shape_path)
            except ValidationError as e:
                raise _invalid(sample_id, f"{field_name}.{key}", '; '.join(e.messages)) from None
            except PoseBenchError as e:
                raise _invalid(sample_id, f"{field_name}.{key}", e) from None
            break
    box = parse_box(entry['box'], sample_id, f"{field_name}.box") if entry.get('box') is not None else None
    return Hypothesis(pose, shape, box)


def load_predictions(root, gt) -> PredictionSet:
    """
    Load one method's predictions and join them to the ground-truth samples.

    Raises:
        ValidationError: duplicate or unknown sample ids, malformed fields
    """
    path = manifest_path(root, PREDICTIONS_MANIFEST)
    document = read_manifest(path, PREDICTIONS_FORMAT)
    method = document.get('method') or path.parent.name
    entries = document.get('predictions')
    if not isinstance(entries, list):
        raise ValidationError(f"manifest {path}: 'predictions' must be a list")

    known = {sample.sample_id for sample in gt}
    predictions = {}
    for entry in entries:
        if not isinstance(entry, dict) or not isinstance(entry.get('sample_id'), str):
            raise ValidationError(f"manifest {path}: prediction without a valid 'sample_id'")
        sample_id = entry['sample_id']
        if sample_id in predictions:
            raise _invalid(sample_id, 'sample_id', f"duplicate prediction in {path}")
        if sample_id not in known:
            raise _invalid(sample_id, 'sample_id', "no ground-truth sample with this id")
        if 'hypotheses' in entry:
            raw = entry['hypotheses']
            if not isinstance(raw, list) or not raw:
                raise _invalid(sample_id, 'hypotheses', "expected a non-empty list")
            hypotheses = tuple(
                _parse_hypothesis(item, path.parent, sample_id, f"hypotheses[{index}]")
                for index, item in enumerate(raw)
            )
        else:
            hypotheses = (_parse_hypothesis(entry, path.parent, sample_id, 'prediction'),)
        predictions[sample_id] = Prediction(sample_id, hypotheses)

    missing = tuple(sorted(known - set(predictions)))
    if missing:
        logger.warning(f"{method}: no prediction for {len(missing)} sample(s): {', '.join(missing[:5])}"
                       f"{' ...' if len(missing) > 5 else ''}")
    logger.info(f"loaded {len(predictions)} predictions of {method} from {path}")
    return PredictionSet(method, tuple(predictions[key] for key in sorted(predictions)), missing, str(path))
