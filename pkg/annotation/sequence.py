"""
Annotation sequences on disk.

A sequence directory holds `sequence.json` plus 16-bit single-channel depth
PNGs (and optional 8-bit masks):

    {
      "format": "posebench-sequence", "version": 1, "sequence": "<name>",
      "depth_scale": 0.001,                         (meters per depth unit)
      "intrinsics": [[3x3]],                        (default for all frames)
      "frames": [
        {"frame_id": "0000", "depth": "depth/0000.png", "mask": "mask/0000.png",
         "camera_pose": [[4x4, world to camera]], "intrinsics": [[3x3]]}
      ],
      "objects": [
        {"name": "mug_1", "category": "mug",
         "box": {"center": [...], "half_extents": [...]},
         "pose": [[4x4, object to world]],
         "box_poses": {"0000": [[4x4, object to camera]]}}
      ],
      "evaluation_frames": ["0000", ...]            (default: every frame)
    }

Each object needs a seed box pose in every frame: an explicit entry of
`box_poses`, or `camera_pose @ pose` when the object has a world pose.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError
from PIL import Image

from posebench.exceptions import PoseBenchError
from geometry.core import Box3, Category, RigidTransform, get_category
from evaluation.dataset_io import (
    box_to_dict, manifest_path, parse_box, parse_intrinsics, parse_pose, pose_to_list, read_manifest, resolve_file,
)
from .pipeline import DepthFrame

logger = logging.getLogger(__name__)

SEQUENCE_MANIFEST = 'sequence.json'
SEQUENCE_FORMAT = 'posebench-sequence'
FORMAT_VERSION = 1
DEFAULT_DEPTH_SCALE = 0.001
MAX_DEPTH_UNITS = 65535


# =============================================================================
# DEPTH IMAGES
# =============================================================================

def read_depth_png(path, depth_scale: float = DEFAULT_DEPTH_SCALE) -> np.ndarray:
    """Depth in meters from a single-channel 16-bit PNG (0 stays invalid)."""
    try:
        with Image.open(path) as image:
            units = np.asarray(image)
    except OSError as e:
        raise ValidationError(f"cannot read depth image {path}: {e}") from None
    if units.ndim != 2:
        raise ValidationError(f"depth image {path} must be single-channel, got shape {units.shape}")
    return units.astype(float) * depth_scale


def write_depth_png(depth, path, depth_scale: float = DEFAULT_DEPTH_SCALE) -> Path:
    path = Path(path)
    units = np.rint(np.asarray(depth, dtype=float) / depth_scale)
    if np.any(units < 0) or np.any(units > MAX_DEPTH_UNITS):
        raise ValidationError(f"depth for {path} does not fit 16 bits at scale {depth_scale} m")
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(units.astype(np.uint16)).save(path, format='PNG')
    return path


def read_mask_png(path) -> np.ndarray:
    try:
        with Image.open(path) as image:
            values = np.asarray(image.convert('L'))
    except OSError as e:
        raise ValidationError(f"cannot read mask image {path}: {e}") from None
    return values > 0


def write_mask_png(mask, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)).save(path, format='PNG')
    return path


# =============================================================================
# SEQUENCES
# =============================================================================

@dataclass(frozen=True, eq=False)
class SequenceObject:
    """An object to annotate: its seed box and one seed box pose per frame."""
    name: str
    category: Category
    box: Box3
    box_poses: tuple


@dataclass(frozen=True, eq=False)
class Sequence:
    name: str
    root: Path
    frames: tuple
    depth_paths: tuple
    objects: tuple
    evaluation_frames: tuple

    def frame_index(self, frame_id: str) -> int:
        return [frame.frame_id for frame in self.frames].index(frame_id)


def _parse_frame(entry, base: Path, default_intrinsics, depth_scale: float) -> tuple[DepthFrame, Path]:
    if not isinstance(entry, dict):
        raise ValidationError(f"frame entries must be objects, got {type(entry).__name__}")
    frame_id = entry.get('frame_id')
    if not isinstance(frame_id, str) or not frame_id:
        raise ValidationError(f"frame entry without a valid 'frame_id': {entry!r:.80}")
    label = f"frame {frame_id}"
    depth_path = resolve_file(base, entry.get('depth'), label, 'depth')
    depth = read_depth_png(depth_path, depth_scale)
    mask = read_mask_png(resolve_file(base, entry['mask'], label, 'mask')) if entry.get('mask') else None

    if entry.get('intrinsics') is not None:
        intrinsics = parse_intrinsics(entry['intrinsics'], label)
    elif default_intrinsics is not None:
        intrinsics = default_intrinsics
    else:
        raise ValidationError(f"sample '{label}': field 'intrinsics': missing and no sequence default")
    camera_pose = (parse_pose(entry['camera_pose'], label, 'camera_pose')
                   if entry.get('camera_pose') is not None else RigidTransform.identity())
    try:
        frame = DepthFrame(depth, intrinsics, camera_pose, mask, frame_id)
    except PoseBenchError as e:
        raise ValidationError(f"frame '{frame_id}': {e}") from None
    return frame, depth_path


def _parse_object(entry, frames, symmetry_table) -> SequenceObject:
    if not isinstance(entry, dict):
        raise ValidationError(f"object entries must be objects, got {type(entry).__name__}")
    name = entry.get('name')
    if not isinstance(name, str) or not name:
        raise ValidationError(f"object entry without a valid 'name': {entry!r:.80}")
    label = f"object {name}"
    category = entry.get('category')
    if not isinstance(category, str) or not category:
        raise ValidationError(f"sample '{label}': field 'category': expected a category name")
    box = parse_box(entry.get('box'), label)
    world_pose = parse_pose(entry['pose'], label) if entry.get('pose') is not None else None

    explicit = entry.get('box_poses') or {}
    if not isinstance(explicit, dict):
        raise ValidationError(f"sample '{label}': field 'box_poses': expected an object keyed by frame id")
    known = {frame.frame_id for frame in frames}
    unknown = sorted(set(explicit) - known)
    if unknown:
        raise ValidationError(f"sample '{label}': field 'box_poses': unknown frame ids {', '.join(unknown)}")

    box_poses = []
    for frame in frames:
        if frame.frame_id in explicit:
            box_poses.append(parse_pose(explicit[frame.frame_id], label, f"box_poses.{frame.frame_id}"))
        elif world_pose is not None:
            box_poses.append(frame.camera_pose @ world_pose)
        else:
            raise ValidationError(f"sample '{label}': no seed box pose for frame '{frame.frame_id}'")
    return SequenceObject(name, get_category(category, symmetry_table), box, tuple(box_poses))


def load_sequence(root, symmetry_table: dict | None = None) -> Sequence:
    """
    Load and validate a sequence manifest with all its depth images.

    Raises:
        ValidationError: any malformed entry, naming the frame or object and field
    """
    path = manifest_path(root, SEQUENCE_MANIFEST)
    document = read_manifest(path, SEQUENCE_FORMAT)
    base = path.parent
    depth_scale = document.get('depth_scale', DEFAULT_DEPTH_SCALE)
    if not isinstance(depth_scale, (int, float)) or not depth_scale > 0:
        raise ValidationError(f"manifest {path}: 'depth_scale' must be a positive number")
    default_intrinsics = (parse_intrinsics(document['intrinsics'], 'sequence')
                          if document.get('intrinsics') is not None else None)

    entries = document.get('frames')
    if not isinstance(entries, list) or not entries:
        raise ValidationError(f"manifest {path}: 'frames' must be a non-empty list")
    parsed = [_parse_frame(entry, base, default_intrinsics, float(depth_scale)) for entry in entries]
    frames = tuple(frame for frame, _ in parsed)
    frame_ids = [frame.frame_id for frame in frames]
    if len(set(frame_ids)) != len(frame_ids):
        raise ValidationError(f"manifest {path}: duplicate frame ids")

    object_entries = document.get('objects')
    if not isinstance(object_entries, list) or not object_entries:
        raise ValidationError(f"manifest {path}: 'objects' must be a non-empty list")
    objects = tuple(_parse_object(entry, frames, symmetry_table) for entry in object_entries)
    names = [item.name for item in objects]
    if len(set(names)) != len(names):
        raise ValidationError(f"manifest {path}: duplicate object names")

    evaluation_frames = document.get('evaluation_frames') or frame_ids
    missing = [frame_id for frame_id in evaluation_frames if frame_id not in frame_ids]
    if missing:
        raise ValidationError(f"manifest {path}: unknown evaluation frames {', '.join(map(str, missing))}")

    logger.info(f"loaded sequence '{document.get('sequence', base.name)}': {len(frames)} frames, "
                f"{len(objects)} object(s)")
    return Sequence(
        name=document.get('sequence') or base.name,
        root=base,
        frames=frames,
        depth_paths=tuple(depth_path for _, depth_path in parsed),
        objects=objects,
        evaluation_frames=tuple(evaluation_frames),
    )


def write_sequence(root, name: str, frames, objects, depth_scale: float = DEFAULT_DEPTH_SCALE,
                   evaluation_frames=None) -> Path:
    """
    Write frames and objects as a sequence directory (depth PNGs plus sequence.json).

    Objects are written with explicit per-frame box poses.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    frame_entries = []
    for frame in frames:
        depth_ref = f"depth/{frame.frame_id}.png"
        write_depth_png(frame.depth, root / depth_ref, depth_scale)
        entry = {
            'frame_id': frame.frame_id,
            'depth': depth_ref,
            'camera_pose': pose_to_list(frame.camera_pose),
            'intrinsics': np.asarray(frame.intrinsics).tolist(),
        }
        if frame.mask is not None:
            entry['mask'] = f"mask/{frame.frame_id}.png"
            write_mask_png(frame.mask, root / entry['mask'])
        frame_entries.append(entry)

    object_entries = [
        {
            'name': item.name,
            'category': item.category.name,
            'box': box_to_dict(item.box),
            'box_poses': {frame.frame_id: pose_to_list(pose) for frame, pose in zip(frames, item.box_poses)},
        }
        for item in objects
    ]
    document = {
        'format': SEQUENCE_FORMAT,
        'version': FORMAT_VERSION,
        'sequence': name,
        'depth_scale': depth_scale,
        'frames': frame_entries,
        'objects': object_entries,
    }
    if evaluation_frames:
        document['evaluation_frames'] = list(evaluation_frames)
    path = root / SEQUENCE_MANIFEST
    path.write_text(json.dumps(document, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    logger.info(f"wrote sequence '{name}' with {len(frame_entries)} frames to {path}")
    return path
