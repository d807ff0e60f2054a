"""
End-to-end annotation of the objects of a sequence.

Stages, in order: refine (leave-one-out ICP of the seed box poses),
accumulate, carve, extract, box. Any computation error is re-raised as a
PipelineStageError naming the stage.
"""

from __future__ import annotations

import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

from django.conf import settings

from posebench.exceptions import PipelineStageError, PoseBenchError
from geometry.core import Box3, Category, TriangleMesh
from evaluation.dataset_io import GroundTruthSample, box_to_dict
from .carving import extract_mesh, is_watertight, recentre, tight_bbox, voxel_carve
from .pipeline import IcpParams, accumulate_points, refine_box_poses

logger = logging.getLogger(__name__)

STAGES = ('refine', 'accumulate', 'carve', 'extract', 'box')


@contextmanager
def pipeline_stage(name: str):
    logger.info(f"stage {name}")
    try:
        yield
    except PipelineStageError:
        raise
    except PoseBenchError as e:
        raise PipelineStageError(name, e) from e


@dataclass(frozen=True, eq=False)
class ObjectAnnotation:
    """
    Result for one object: mesh and tight box centred at the object origin, and
    the refined box pose of every frame of the sequence.
    """
    name: str
    category: Category
    mesh: TriangleMesh
    box: Box3
    poses: tuple
    diagnostics: dict


class AnnotationService:
    """
    Runs the annotation pipeline with fixed parameters.

    Unset parameters come from settings.POSEBENCH['ANNOTATION'].
    """

    def __init__(self, resolution=None, margin=None, smoothing_iterations=None, smoothing_lambda=None,
                 symmetry_replicas=None, crop_padding=None, icp: IcpParams | None = None, refine: bool = True):
        defaults = settings.POSEBENCH['ANNOTATION']
        self.resolution = defaults['RESOLUTION'] if resolution is None else resolution
        self.margin = defaults['CARVING_MARGIN'] if margin is None else margin
        self.smoothing_iterations = (defaults['SMOOTHING_ITERATIONS']
                                     if smoothing_iterations is None else smoothing_iterations)
        self.smoothing_lambda = defaults['SMOOTHING_LAMBDA'] if smoothing_lambda is None else smoothing_lambda
        self.symmetry_replicas = defaults['SYMMETRY_REPLICAS'] if symmetry_replicas is None else symmetry_replicas
        self.crop_padding = defaults['ICP_CROP_PADDING'] if crop_padding is None else crop_padding
        self.icp = icp or IcpParams.from_settings()
        self.refine = refine

    def parameters(self) -> dict:
        return {
            'resolution_m': self.resolution,
            'carving_margin_m': self.margin,
            'smoothing_iterations': self.smoothing_iterations,
            'smoothing_lambda': self.smoothing_lambda,
            'symmetry_replicas': self.symmetry_replicas,
            'crop_padding_m': self.crop_padding,
            'icp_max_iterations': self.icp.max_iterations,
            'icp_reject_distance_m': self.icp.reject_distance,
            'icp_tolerance': self.icp.tolerance,
            'refine': self.refine,
        }

    def annotate_object(self, frames, item) -> ObjectAnnotation:
        """Run every stage for one SequenceObject over `frames`."""
        logger.info(f"annotating '{item.name}' ({item.category.name}) over {len(frames)} frame(s)")
        diagnostics = {'object': item.name, 'category': item.category.name,
                       'symmetric': item.category.symmetric, 'frames': len(frames)}

        with pipeline_stage('refine'):
            if self.refine:
                poses, results = refine_box_poses(frames, item.box_poses, item.box, self.icp, self.crop_padding)
            else:
                poses, results = list(item.box_poses), [None] * len(frames)
            diagnostics['refine'] = [
                {'frame_id': frame.frame_id, 'skipped': result is None, **(result.as_dict() if result else {})}
                for frame, result in zip(frames, results)
            ]

        with pipeline_stage('accumulate'):
            replicas = self.symmetry_replicas if item.category.symmetric else 0
            points = accumulate_points(frames, poses, item.box, item.category, replicas)
            diagnostics['accumulate'] = {
                'cropped_points': len(points) // (replicas + 1),
                'replicas': replicas,
                'total_points': len(points),
            }

        with pipeline_stage('carve'):
            grid = voxel_carve(item.box, poses, frames, self.resolution, self.margin)
            diagnostics['carve'] = {**grid.stats(), 'margin_m': self.margin}

        with pipeline_stage('extract'):
            mesh = extract_mesh(grid, self.smoothing_iterations, self.smoothing_lambda)
            diagnostics['extract'] = {
                'vertices': len(mesh.vertices),
                'faces': len(mesh),
                'watertight': is_watertight(mesh),
                'smoothing_iterations': self.smoothing_iterations,
                'smoothing_lambda': self.smoothing_lambda,
            }

        with pipeline_stage('box'):
            mesh, offset = recentre(mesh)
            box = tight_bbox(mesh)
            poses = tuple(pose @ offset for pose in poses)
            diagnostics['box'] = {**box_to_dict(box), 'offset_m': offset.translation.tolist()}

        return ObjectAnnotation(item.name, item.category, mesh, box, poses, diagnostics)

    def annotate(self, sequence) -> list[ObjectAnnotation]:
        return [self.annotate_object(sequence.frames, item) for item in sequence.objects]

    def ground_truth_samples(self, sequence, annotations, out_root) -> list[GroundTruthSample]:
        """One ground-truth sample per annotated object and evaluation frame."""
        out_root = Path(out_root).resolve()
        samples = []
        for annotation in annotations:
            for frame_id in sequence.evaluation_frames:
                index = sequence.frame_index(frame_id)
                frame = sequence.frames[index]
                samples.append(GroundTruthSample(
                    sample_id=f"{sequence.name}_{annotation.name}_{frame_id}",
                    category=annotation.category,
                    mesh_ref='',
                    mesh=annotation.mesh,
                    pose=annotation.poses[index],
                    box=annotation.box,
                    box_given=True,
                    depth_ref=os.path.relpath(sequence.depth_paths[index].resolve(), out_root),
                    intrinsics=frame.intrinsics,
                ))
        return samples


annotation_service = AnnotationService()
