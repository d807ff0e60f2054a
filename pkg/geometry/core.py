"""
Core 3D types, transform algebra and pose-error metrics.

Conventions:
- lengths in meters, angles in degrees at every public interface
  (radians internally);
- a RigidTransform maps x -> R @ x + t; `a.compose(b)` applies b first;
- object-frame +y is the up/symmetry axis unless the symmetry table says
  otherwise.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import singledispatch

import numpy as np
from django.conf import settings
from scipy.spatial.transform import Rotation

from posebench.exceptions import DegenerateBoxError, DegenerateMeshError, InvalidTransformError, PoseBenchError

logger = logging.getLogger(__name__)

ORTHONORMAL_TOLERANCE = 1e-6
MIN_HALF_EXTENT = 1e-9

CATEGORY_NAMES = ('bottle', 'bowl', 'camera', 'can', 'laptop', 'mug')
DEFAULT_UP_AXIS = (0.0, 1.0, 0.0)


def _frozen(values, shape=None, dtype=float) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    if shape is not None:
        array = array.reshape(shape)
    array.setflags(write=False)
    return array


def as_point_array(values) -> np.ndarray:
    """Return `values` as a float (N, 3) array; accepts PointSet, TriangleMesh or array-likes."""
    if isinstance(values, PointSet):
        return values.points
    if isinstance(values, TriangleMesh):
        return values.vertices
    array = np.asarray(values, dtype=float)
    if array.size == 0:
        return np.empty((0, 3))
    return array.reshape(-1, 3)


# =============================================================================
# RIGID TRANSFORMS
# =============================================================================

@dataclass(frozen=True, eq=False)
class RigidTransform:
    """
    Rigid transform (pose) made of a rotation matrix and a translation vector.

    Used for the object-in-camera pose of ground truth and predictions, for
    camera poses of depth frames and for every intermediate ICP estimate.
    Instances are immutable; the arrays are read-only.
    """
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = _frozen(self.rotation, (3, 3))
        translation = _frozen(self.translation, (3,))
        if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(translation))):
            raise InvalidTransformError("rigid transform contains non-finite values")
        deviation = np.abs(rotation.T @ rotation - np.eye(3)).max()
        if deviation > ORTHONORMAL_TOLERANCE or np.linalg.det(rotation) <= 0:
            raise InvalidTransformError(
                f"rotation is not a proper orthonormal matrix (deviation {deviation:.3g})"
            )
        object.__setattr__(self, 'rotation', rotation)
        object.__setattr__(self, 'translation', translation)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix) -> RigidTransform:
        """Build from a 4x4 homogeneous matrix (last row must be 0 0 0 1)."""
        matrix = np.asarray(matrix, dtype=float)
        if matrix.shape != (4, 4):
            raise InvalidTransformError(f"expected a 4x4 matrix, got shape {matrix.shape}")
        if not np.allclose(matrix[3], [0.0, 0.0, 0.0, 1.0]):
            raise InvalidTransformError("last row of a rigid transform must be [0, 0, 0, 1]")
        return cls(matrix[:3, :3], matrix[:3, 3])

    @classmethod
    def from_translation(cls, translation) -> RigidTransform:
        return cls(np.eye(3), translation)

    @classmethod
    def from_axis_angle(cls, axis, angle_degrees: float, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
        """Rotation of `angle_degrees` about `axis` (through the origin), then translation."""
        axis = np.asarray(axis, dtype=float)
        norm = np.linalg.norm(axis)
        if norm == 0.0:
            raise InvalidTransformError("rotation axis must be non-zero")
        rotvec = axis / norm * math.radians(angle_degrees)
        return cls(Rotation.from_rotvec(rotvec).as_matrix(), translation)

    def as_matrix(self) -> np.ndarray:
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation
        matrix[:3, 3] = self.translation
        return matrix

    def compose(self, other: RigidTransform) -> RigidTransform:
        """Return self ∘ other (other is applied first)."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    __matmul__ = compose

    def inverse(self) -> RigidTransform:
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def apply(self, points) -> np.ndarray:
        """Map an (N, 3) array (or a single 3-vector) through x -> R x + t."""
        array = np.asarray(points, dtype=float)
        if array.ndim == 1:
            return self.rotation @ array + self.translation
        return array @ self.rotation.T + self.translation

    def almost_equal(self, other: RigidTransform, atol: float = 1e-9) -> bool:
        return (np.allclose(self.rotation, other.rotation, atol=atol)
                and np.allclose(self.translation, other.translation, atol=atol))

    def __repr__(self):
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


# =============================================================================
# SHAPES
# =============================================================================

@dataclass(frozen=True, eq=False)
class PointSet:
    """Finite set of 3D points in meters (S and S̃ of the shape metrics). May be empty."""
    points: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        points = np.empty((0, 3)) if points.size == 0 else points.reshape(-1, 3)
        if not np.all(np.isfinite(points)):
            raise PoseBenchError("point set contains non-finite coordinates")
        object.__setattr__(self, 'points', _frozen(points))

    @classmethod
    def empty(cls) -> PointSet:
        return cls(np.empty((0, 3)))

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """
    Triangle mesh with vertices in meters and faces as vertex-index triples.

    Face indices must be in range and no face may repeat a vertex. A positive
    total area is only required when the mesh is sampled.
    """
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=float)
        vertices = np.empty((0, 3)) if vertices.size == 0 else vertices.reshape(-1, 3)
        faces = np.asarray(self.faces, dtype=np.int64)
        faces = np.empty((0, 3), dtype=np.int64) if faces.size == 0 else faces.reshape(-1, 3)
        if not np.all(np.isfinite(vertices)):
            raise DegenerateMeshError("mesh contains non-finite vertices")
        if len(faces) and (faces.min() < 0 or faces.max() >= len(vertices)):
            raise DegenerateMeshError("face index out of range")
        repeated = (faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2])
        if np.any(repeated):
            raise DegenerateMeshError(f"{int(repeated.sum())} faces repeat a vertex")
        object.__setattr__(self, 'vertices', _frozen(vertices))
        object.__setattr__(self, 'faces', _frozen(faces, dtype=np.int64))

    def triangle_areas(self) -> np.ndarray:
        corners = self.vertices[self.faces]
        cross = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    @property
    def surface_area(self) -> float:
        return float(self.triangle_areas().sum())

    def __len__(self):
        return len(self.faces)


# =============================================================================
# BOXES
# =============================================================================

@dataclass(frozen=True, eq=False)
class Box3:
    """
    Axis-aligned box in its own frame: center plus strictly positive half extents.

    Paired with a RigidTransform (see OrientedBox) it becomes an oriented box.
    """
    center: np.ndarray
    half_extents: np.ndarray

    def __post_init__(self):
        center = _frozen(self.center, (3,))
        half_extents = _frozen(self.half_extents, (3,))
        if not (np.all(np.isfinite(center)) and np.all(np.isfinite(half_extents))):
            raise DegenerateBoxError("box contains non-finite values")
        if np.any(half_extents <= MIN_HALF_EXTENT):
            raise DegenerateBoxError(f"box has a (near) zero extent: half_extents={half_extents.tolist()}")
        object.__setattr__(self, 'center', center)
        object.__setattr__(self, 'half_extents', half_extents)

    @classmethod
    def from_bounds(cls, minimum, maximum) -> Box3:
        minimum = np.asarray(minimum, dtype=float)
        maximum = np.asarray(maximum, dtype=float)
        return cls((minimum + maximum) / 2.0, (maximum - minimum) / 2.0)

    @property
    def min_corner(self) -> np.ndarray:
        return self.center - self.half_extents

    @property
    def max_corner(self) -> np.ndarray:
        return self.center + self.half_extents

    @property
    def extents(self) -> np.ndarray:
        return 2.0 * self.half_extents

    @property
    def volume(self) -> float:
        return float(np.prod(2.0 * self.half_extents))

    def corners(self) -> np.ndarray:
        """The 8 corners; bit k of the corner index selects +/- along axis k."""
        signs = np.array([[1.0 if (index >> axis) & 1 else -1.0 for axis in range(3)] for index in range(8)])
        return self.center + signs * self.half_extents

    def contains(self, points, tolerance: float = 0.0) -> np.ndarray:
        offsets = np.abs(as_point_array(points) - self.center)
        return np.all(offsets <= self.half_extents + tolerance, axis=1)


@dataclass(frozen=True, eq=False)
class OrientedBox:
    """A Box3 placed in a parent frame by a rigid transform (the OBB ᵂT_O·B(O))."""
    box: Box3
    pose: RigidTransform

    def corners(self) -> np.ndarray:
        return self.pose.apply(self.box.corners())

    @property
    def volume(self) -> float:
        return self.box.volume


# =============================================================================
# CATEGORIES
# =============================================================================

@dataclass(frozen=True)
class Category:
    """
    Object category with its rotational symmetry.

    Symmetric categories (bottle, bowl and can by default) ignore rotations
    about `symmetry_axis` when rotation error and IoU are computed.
    """
    name: str
    symmetric: bool = False
    symmetry_axis: tuple = DEFAULT_UP_AXIS

    def __post_init__(self):
        axis = np.asarray(self.symmetry_axis, dtype=float).reshape(3)
        norm = np.linalg.norm(axis)
        if norm == 0.0 or not np.isfinite(norm):
            raise InvalidTransformError(f"category '{self.name}': symmetry axis must be a non-zero vector")
        object.__setattr__(self, 'symmetry_axis', tuple(float(value) for value in axis / norm))

    @property
    def axis(self) -> np.ndarray:
        return np.array(self.symmetry_axis)

    def __str__(self):
        return self.name


def get_category(name: str, symmetry_table: dict | None = None) -> Category:
    """
    Resolve a category name against the symmetry table.

    Args:
        name: category name (the six REAL275 names or any user-defined one)
        symmetry_table: mapping name -> up axis; defaults to
            settings.POSEBENCH['SYMMETRY_TABLE']

    Returns:
        Category: symmetric when the name appears in the table
    """
    table = settings.POSEBENCH['SYMMETRY_TABLE'] if symmetry_table is None else symmetry_table
    if name in table:
        return Category(name, True, tuple(table[name]))
    return Category(name, False)


# =============================================================================
# TRANSFORM APPLICATION
# =============================================================================

@singledispatch
def _transformed(target, transform: RigidTransform):
    raise TypeError(f"cannot apply a rigid transform to {type(target).__name__}")


@_transformed.register(PointSet)
def _(target: PointSet, transform: RigidTransform) -> PointSet:
    if not len(target):
        return target
    return PointSet(transform.apply(target.points))


@_transformed.register(TriangleMesh)
def _(target: TriangleMesh, transform: RigidTransform) -> TriangleMesh:
    vertices = transform.apply(target.vertices) if len(target.vertices) else target.vertices
    return TriangleMesh(vertices, target.faces)


@_transformed.register(Box3)
def _(target: Box3, transform: RigidTransform) -> OrientedBox:
    return OrientedBox(target, transform)


@_transformed.register(OrientedBox)
def _(target: OrientedBox, transform: RigidTransform) -> OrientedBox:
    return OrientedBox(target.box, transform.compose(target.pose))


def apply_transform(transform: RigidTransform, target):
    """
    Map a PointSet, TriangleMesh, Box3 or OrientedBox through `transform`.

    Points and vertices map x -> R x + t. A Box3 becomes an OrientedBox
    (the box re-expressed with `transform` as its pose); an OrientedBox gets
    `transform` composed onto its pose. Empty inputs map to empty outputs.
    """
    return _transformed(target, transform)


# =============================================================================
# POSE ERRORS
# =============================================================================

def _rotation_angle(rotation: np.ndarray) -> float:
    # atan2 form of arccos((trace - 1) / 2): same value, stable near 0 and 180 degrees.
    cosine = np.clip((np.trace(rotation) - 1.0) / 2.0, -1.0, 1.0)
    skew = np.array([
        rotation[2, 1] - rotation[1, 2],
        rotation[0, 2] - rotation[2, 0],
        rotation[1, 0] - rotation[0, 1],
    ])
    sine = np.linalg.norm(skew) / 2.0
    return math.atan2(sine, cosine)


def _vector_angle(first: np.ndarray, second: np.ndarray) -> float:
    return math.atan2(np.linalg.norm(np.cross(first, second)), float(np.dot(first, second)))


def translation_error(gt: RigidTransform, est: RigidTransform) -> float:
    """Euclidean distance between the two translations, in meters."""
    return float(np.linalg.norm(gt.translation - est.translation))


def rotation_error(gt: RigidTransform, est: RigidTransform) -> float:
    """Angle of the relative rotation R·R̃⁻¹, in degrees within [0, 180]."""
    return math.degrees(_rotation_angle(gt.rotation @ est.rotation.T))


def rotation_error_symmetric(gt: RigidTransform, est: RigidTransform, category: Category) -> float:
    """
    Rotation error that ignores rotations about the category's symmetry axis.

    For symmetric categories this is the angle between the symmetry axis as
    mapped by each pose, which equals the rotation error minimised over all
    rotations about that axis. Non-symmetric categories use rotation_error.
    """
    if not category.symmetric:
        return rotation_error(gt, est)
    axis = category.axis
    return math.degrees(_vector_angle(gt.rotation @ axis, est.rotation @ axis))
