"""
Procedural meshes for fixtures, synthetic scenes and the convergence study.

All shapes use the object-frame convention of the toolkit: +y is up and the
symmetry axis of the revolved shapes. Dimensions are in meters.
"""

import logging
import math

import numpy as np
import trimesh
from django.core.exceptions import ValidationError

from posebench.exceptions import DegenerateMeshError
from .core import TriangleMesh

logger = logging.getLogger(__name__)

MUG_HEIGHT = 0.10
MUG_RADIUS = 0.04
MUG_WALL = 0.004

_Z_AXIS = np.array([0.0, 0.0, 1.0])


def from_trimesh(mesh: trimesh.Trimesh) -> TriangleMesh:
    return TriangleMesh(np.asarray(mesh.vertices, dtype=float), np.asarray(mesh.faces, dtype=np.int64))


def to_trimesh(mesh: TriangleMesh) -> trimesh.Trimesh:
    return trimesh.Trimesh(vertices=np.array(mesh.vertices), faces=np.array(mesh.faces), process=False)


def _ring(radius: float, height: float, segments: int) -> np.ndarray:
    angles = np.linspace(0.0, 2.0 * math.pi, segments, endpoint=False)
    return np.column_stack([radius * np.cos(angles), np.full(segments, height), radius * np.sin(angles)])


def revolve(profile, segments: int = 64) -> TriangleMesh:
    """
    Surface of revolution of a (radius, height) polyline about the y axis.

    Profile points with zero radius become single pole vertices joined to the
    neighbouring ring by a triangle fan. Walking the profile counter-clockwise
    in the (radius, height) plane gives outward-facing triangles.
    """
    profile = np.asarray(profile, dtype=float)
    if len(profile) < 2 or segments < 3:
        raise DegenerateMeshError("a surface of revolution needs two profile points and three segments")

    vertices = []
    rings = []
    for radius, height in profile:
        start = len(vertices)
        if radius <= 0.0:
            vertices.append(np.array([0.0, height, 0.0]))
            rings.append([start] * segments)
        else:
            vertices.extend(_ring(radius, height, segments))
            rings.append(list(range(start, start + segments)))

    faces = []
    for lower, upper in zip(rings, rings[1:]):
        for j in range(segments):
            k = (j + 1) % segments
            a, b, c, d = lower[j], lower[k], upper[j], upper[k]
            if a != b:
                faces.append((a, c, b))
            if c != d:
                faces.append((c, d, b))
    return TriangleMesh(np.array(vertices), np.array(faces))


def _torus_arc(center, major: float, minor: float, start: float, stop: float,
               arc_segments: int, tube_segments: int) -> TriangleMesh:
    """Open tube bent along a circular arc in the x-y plane (angles in radians)."""
    center = np.asarray(center, dtype=float)
    arc = np.linspace(start, stop, arc_segments + 1)
    tube = np.linspace(0.0, 2.0 * math.pi, tube_segments, endpoint=False)
    vertices = []
    for phi in arc:
        radial = np.array([math.cos(phi), math.sin(phi), 0.0])
        for psi in tube:
            vertices.append(center + major * radial + minor * (math.cos(psi) * radial + math.sin(psi) * _Z_AXIS))
    faces = []
    for i in range(arc_segments):
        for j in range(tube_segments):
            k = (j + 1) % tube_segments
            a, b = i * tube_segments + j, i * tube_segments + k
            c, d = (i + 1) * tube_segments + j, (i + 1) * tube_segments + k
            faces.append((a, c, b))
            faces.append((c, d, b))
    return TriangleMesh(np.array(vertices), np.array(faces))


def _merge(*meshes: TriangleMesh) -> TriangleMesh:
    vertices, faces, offset = [], [], 0
    for mesh in meshes:
        vertices.append(mesh.vertices)
        faces.append(mesh.faces + offset)
        offset += len(mesh.vertices)
    return TriangleMesh(np.vstack(vertices), np.vstack(faces))


def cylinder(radius: float = 0.03, height: float = 0.1, segments: int = 64) -> TriangleMesh:
    """Closed cylinder centred at the origin with its axis along y."""
    half = height / 2.0
    return revolve([(0.0, -half), (radius, -half), (radius, half), (0.0, half)], segments)


def sphere(radius: float = 0.04, subdivisions: int = 4) -> TriangleMesh:
    return from_trimesh(trimesh.creation.icosphere(subdivisions=subdivisions, radius=radius))


def box(extents=(0.1, 0.1, 0.1)) -> TriangleMesh:
    """Closed box centred at the origin."""
    return from_trimesh(trimesh.creation.box(extents=extents))


def mug(handle: bool = True, height: float = MUG_HEIGHT, radius: float = MUG_RADIUS,
        wall: float = MUG_WALL, segments: int = 64) -> TriangleMesh:
    """
    Mug with a solid bottom and a thin wall, centred on its height.

    Args:
        handle: add a half-torus handle on the +x side
        height: total height (10 cm by default)
        radius: outer radius
        wall: wall and bottom thickness
        segments: angular resolution of the body

    Returns:
        TriangleMesh: y-up mug, bounding box centred on the y axis at mid height
    """
    half = height / 2.0
    profile = [
        (0.0, -half),
        (radius, -half),
        (radius, half),
        (radius - wall, half),
        (radius - wall, -half + wall),
        (0.0, -half + wall),
    ]
    body = revolve(profile, segments)
    if not handle:
        return body
    grip = _torus_arc((radius, 0.0, 0.0), major=0.3 * height, minor=0.05 * height,
                      start=-math.pi / 2.0, stop=math.pi / 2.0, arc_segments=24, tube_segments=12)
    return _merge(body, grip)


BUILTIN_SHAPES = {
    'mug': lambda: mug(handle=True),
    'mug-no-handle': lambda: mug(handle=False),
    'cylinder': cylinder,
    'sphere': sphere,
    'box': box,
}


def builtin_mesh(name: str) -> TriangleMesh:
    """Look up a procedural shape by name (see BUILTIN_SHAPES)."""
    try:
        factory = BUILTIN_SHAPES[name]
    except KeyError:
        raise ValidationError(
            f"unknown builtin shape '{name}', expected one of {', '.join(sorted(BUILTIN_SHAPES))}"
        ) from None
    logger.debug(f"building builtin shape {name}")
    return factory()
