"""
Exact oriented-bounding-box IoU, axis-aligned IoU⁺ and the symmetric variant.

The intersection of two oriented boxes is computed the way the Objectron IoU
does it: one box is turned into a convex polytope, expressed in the other
box's frame, and clipped successively against that box's six face
halfspaces. Volumes come from the divergence theorem over the clipped faces.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from django.conf import settings
from scipy.optimize import minimize_scalar

from posebench.exceptions import EmptyPointSetError, InvalidThresholdError
from .core import Box3, Category, RigidTransform, as_point_array

logger = logging.getLogger(__name__)

# Points closer than this to a clipping plane (meters) are treated as on it.
PLANE_EPSILON = 1e-9

# Corner index bits select -/+ along x (bit 0), y (bit 1), z (bit 2), as in Box3.corners().
# Every face is listed counter-clockwise seen from outside the box.
BOX_FACES = (
    (0, 4, 6, 2),  # -x
    (1, 3, 7, 5),  # +x
    (0, 1, 5, 4),  # -y
    (2, 6, 7, 3),  # +y
    (0, 2, 3, 1),  # -z
    (4, 5, 7, 6),  # +z
)


@dataclass(frozen=True, eq=False)
class Halfspace:
    """The closed halfspace {x : normal · x <= offset}; the normal is stored unit length."""
    normal: np.ndarray
    offset: float

    def __post_init__(self):
        normal = np.asarray(self.normal, dtype=float).reshape(3)
        norm = np.linalg.norm(normal)
        if norm == 0.0:
            raise InvalidThresholdError("halfspace normal must be non-zero")
        object.__setattr__(self, 'normal', normal / norm)
        object.__setattr__(self, 'offset', float(self.offset) / norm)

    def signed_distance(self, points) -> np.ndarray:
        return as_point_array(points) @ self.normal - self.offset


def _dedupe_index(points: list, point: np.ndarray, tolerance: float) -> int:
    for index, existing in enumerate(points):
        if np.linalg.norm(existing - point) <= tolerance:
            return index
    points.append(point)
    return len(points) - 1


@dataclass(frozen=True, eq=False)
class ConvexPolytope:
    """
    Convex polytope given by its vertices and outward (counter-clockwise) faces.

    An empty polytope has no vertices and no faces and volume 0.
    """
    vertices: np.ndarray
    faces: tuple

    @classmethod
    def empty(cls) -> ConvexPolytope:
        return cls(np.empty((0, 3)), ())

    @classmethod
    def from_box(cls, box: Box3, pose: RigidTransform | None = None) -> ConvexPolytope:
        corners = box.corners()
        if pose is not None:
            corners = pose.apply(corners)
        return cls(corners, BOX_FACES)

    @classmethod
    def from_face_loops(cls, loops, tolerance: float = PLANE_EPSILON) -> ConvexPolytope:
        """Build a polytope from per-face vertex loops, merging coincident vertices."""
        points = []
        faces = []
        for loop in loops:
            indices = []
            for point in loop:
                index = _dedupe_index(points, np.asarray(point, dtype=float), tolerance)
                if not indices or indices[-1] != index:
                    indices.append(index)
            if len(indices) > 1 and indices[0] == indices[-1]:
                indices.pop()
            if len(set(indices)) >= 3:
                faces.append(tuple(indices))
        if not faces:
            return cls.empty()
        return cls(np.array(points), tuple(faces))

    @property
    def is_empty(self) -> bool:
        return not self.faces

    def face_loops(self) -> list:
        return [self.vertices[list(face)] for face in self.faces]

    @property
    def volume(self) -> float:
        """Volume by the divergence theorem: fan tetrahedra from the vertex centroid."""
        if self.is_empty:
            return 0.0
        reference = self.vertices.mean(axis=0)
        total = 0.0
        for loop in self.face_loops():
            relative = loop - reference
            for i in range(1, len(relative) - 1):
                total += float(np.dot(relative[0], np.cross(relative[i], relative[i + 1])))
        return max(total / 6.0, 0.0)

    def is_convex(self, tolerance: float = PLANE_EPSILON) -> bool:
        """True when every vertex lies on the inner side of every face plane."""
        for loop in self.face_loops():
            # Newell normal is robust for polygons with nearly collinear vertices.
            following = np.roll(loop, -1, axis=0)
            normal = np.array([
                np.sum((loop[:, 1] - following[:, 1]) * (loop[:, 2] + following[:, 2])),
                np.sum((loop[:, 2] - following[:, 2]) * (loop[:, 0] + following[:, 0])),
                np.sum((loop[:, 0] - following[:, 0]) * (loop[:, 1] + following[:, 1])),
            ])
            norm = np.linalg.norm(normal)
            if norm == 0.0:
                continue
            normal /= norm
            if np.any((self.vertices - loop.mean(axis=0)) @ normal > tolerance):
                return False
        return True


def _order_on_plane(points: list, normal: np.ndarray) -> list:
    center = np.mean(points, axis=0)
    helper = np.array([1.0, 0.0, 0.0]) if abs(normal[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(normal, helper)
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    angles = [math.atan2(np.dot(point - center, v), np.dot(point - center, u)) for point in points]
    return [points[i] for i in np.argsort(angles, kind='stable')]


def clip_polytope(polytope: ConvexPolytope, halfspace: Halfspace) -> ConvexPolytope:
    """
    Intersect a convex polytope with a halfspace.

    Every face is clipped (Sutherland-Hodgman); the points created on the
    clipping plane form the new cap face. A result without interior volume is
    returned as the empty polytope.
    """
    if polytope.is_empty:
        return polytope
    distances = halfspace.signed_distance(polytope.vertices)
    if np.all(distances <= PLANE_EPSILON):
        return polytope
    if np.all(distances >= -PLANE_EPSILON):
        return ConvexPolytope.empty()

    loops = []
    cap = []
    for face in polytope.faces:
        count = len(face)
        clipped = []
        for position in range(count):
            start, end = face[position], face[(position + 1) % count]
            d_start, d_end = distances[start], distances[end]
            point_start = polytope.vertices[start]
            if d_start <= PLANE_EPSILON:
                clipped.append(point_start)
                if d_start >= -PLANE_EPSILON:
                    _dedupe_index(cap, point_start, PLANE_EPSILON)
            if (d_start < -PLANE_EPSILON < PLANE_EPSILON < d_end) or (d_end < -PLANE_EPSILON < PLANE_EPSILON < d_start):
                t = d_start / (d_start - d_end)
                crossing = point_start + t * (polytope.vertices[end] - point_start)
                clipped.append(crossing)
                _dedupe_index(cap, crossing, PLANE_EPSILON)
        if len(clipped) >= 3:
            loops.append(clipped)

    if len(cap) >= 3:
        loops.append(_order_on_plane(cap, halfspace.normal))
    return ConvexPolytope.from_face_loops(loops)


def box_halfspaces(box: Box3) -> list:
    """The six face halfspaces of an axis-aligned box in its own frame."""
    halfspaces = []
    for axis in range(3):
        normal = np.zeros(3)
        normal[axis] = 1.0
        halfspaces.append(Halfspace(normal, box.center[axis] + box.half_extents[axis]))
        halfspaces.append(Halfspace(-normal, -(box.center[axis] - box.half_extents[axis])))
    return halfspaces


def intersection_volume(box_a: Box3, pose_a: RigidTransform, box_b: Box3, pose_b: RigidTransform) -> float:
    polytope = ConvexPolytope.from_box(box_b, pose_a.inverse().compose(pose_b))
    for halfspace in box_halfspaces(box_a):
        polytope = clip_polytope(polytope, halfspace)
        if polytope.is_empty:
            return 0.0
    return polytope.volume


def _iou_from_volumes(volume_a: float, volume_b: float, intersection: float) -> float:
    intersection = min(intersection, volume_a, volume_b)
    union = volume_a + volume_b - intersection
    if union <= 0.0:
        return 0.0
    return float(min(max(intersection / union, 0.0), 1.0))


# =============================================================================
# IOU METRICS
# =============================================================================

def aabb_of(points) -> Box3:
    """Smallest axis-aligned box containing a PointSet, a TriangleMesh or an (N, 3) array."""
    array = as_point_array(points)
    if not len(array):
        raise EmptyPointSetError()
    return Box3.from_bounds(array.min(axis=0), array.max(axis=0))


def iou_obb(box_a: Box3, pose_a: RigidTransform, box_b: Box3, pose_b: RigidTransform) -> float:
    """True IoU of the oriented boxes pose_a·box_a and pose_b·box_b, in [0, 1]."""
    intersection = intersection_volume(box_a, pose_a, box_b, pose_b)
    return _iou_from_volumes(box_a.volume, box_b.volume, intersection)


def iou_aabb_plus(gt_world, pred_world) -> float:
    """
    IoU⁺: IoU of the world-frame axis-aligned boxes of two already-posed shapes.

    Kept for comparison with the older protocol; it overestimates overlap for
    rotated objects, so iou_obb is the metric to threshold.
    """
    box_a = aabb_of(gt_world)
    box_b = aabb_of(pred_world)
    overlap = np.minimum(box_a.max_corner, box_b.max_corner) - np.maximum(box_a.min_corner, box_b.min_corner)
    intersection = float(np.prod(np.clip(overlap, 0.0, None)))
    return _iou_from_volumes(box_a.volume, box_b.volume, intersection)


def iou_obb_symmetric(box_a: Box3, pose_a: RigidTransform, box_b: Box3, pose_b: RigidTransform,
                      category: Category, steps: int | None = None, refine: bool = True) -> float:
    """
    Best IoU over rotations of box b about the category's symmetry axis.

    The azimuth is searched on `steps` evenly spaced angles (pose_b is
    pre-composed with each rotation); with `refine`, a bounded scalar search
    around the best step then removes the discretisation error. The k = 0
    rotation is always included, so the result is never below iou_obb.

    Args:
        steps: azimuth samples, default settings.POSEBENCH['SYMMETRIC_IOU_STEPS']
        refine: polish the best azimuth with a bounded search

    Returns:
        float: IoU in [0, 1]
    """
    if not category.symmetric:
        return iou_obb(box_a, pose_a, box_b, pose_b)
    steps = settings.POSEBENCH['SYMMETRIC_IOU_STEPS'] if steps is None else int(steps)
    if steps < 1:
        raise InvalidThresholdError(f"symmetric IoU needs at least one azimuth step, got {steps}")

    axis = category.axis

    def iou_at(angle: float) -> float:
        spin = RigidTransform.from_axis_angle(axis, math.degrees(angle))
        return iou_obb(box_a, pose_a, box_b, pose_b.compose(spin))

    step = 2.0 * math.pi / steps
    values = [iou_at(k * step) for k in range(steps)]
    best_k = int(np.argmax(values))
    best = values[best_k]

    if refine and steps >= 8 and best > 0.0:
        center = best_k * step
        result = minimize_scalar(lambda angle: -iou_at(angle), bounds=(center - step, center + step),
                                 method='bounded', options={'xatol': 1e-10})
        best = max(best, -float(result.fun))
    logger.debug(f"symmetric IoU for {category.name}: {best:.6f} (best step {best_k}/{steps})")
    return best
