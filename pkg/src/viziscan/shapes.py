"""Procedural watertight test shapes: box, icosphere, open cup, plates."""

from __future__ import annotations

import numpy as np

from .mesh import MeshError, TriangleMesh

_BOX_QUADS = (
    (0, 3, 2, 1),  # bottom, -z
    (4, 5, 6, 7),  # top, +z
    (0, 1, 5, 4),  # -y
    (1, 2, 6, 5),  # +x
    (2, 3, 7, 6),  # +y
    (3, 0, 4, 7),  # -x
)


def _quads_to_tris(quads) -> np.ndarray:
    tris = []
    for q in quads:
        tris.append((q[0], q[1], q[2]))
        tris.append((q[0], q[2], q[3]))
    return np.asarray(tris, dtype=np.int32)


def _box_corners(half: np.ndarray, center: np.ndarray) -> np.ndarray:
    sx, sy, sz = half
    c = np.asarray(center, dtype=np.float64)
    corners = np.array([
        [-sx, -sy, -sz], [sx, -sy, -sz], [sx, sy, -sz], [-sx, sy, -sz],
        [-sx, -sy, sz], [sx, -sy, sz], [sx, sy, sz], [-sx, sy, sz],
    ])
    return corners + c


def box(extents=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Axis-aligned box with outward winding."""
    half = np.asarray(extents, dtype=np.float64) / 2.0
    if half.min() <= 0:
        raise MeshError("box extents must be positive")
    return TriangleMesh(_box_corners(half, np.asarray(center)), _quads_to_tris(_BOX_QUADS))


def icosphere(radius: float = 0.5, subdivisions: int = 4, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Subdivided icosahedron projected onto a sphere."""
    if radius <= 0:
        raise MeshError("icosphere radius must be positive")
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = list(verts)
    for _ in range(subdivisions):
        midpoint: dict = {}

        def midpt(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                m = verts[a] + verts[b]
                m /= np.linalg.norm(m)
                midpoint[key] = len(verts)
                verts.append(m)
            return midpoint[key]

        nxt = []
        for a, b, c in faces:
            ab, bc, ca = midpt(a, b), midpt(b, c), midpt(c, a)
            nxt += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = nxt
    pts = np.asarray(verts) * radius + np.asarray(center, dtype=np.float64)
    return TriangleMesh(pts, np.asarray(faces, dtype=np.int32))


def open_cup(extents=(0.8, 0.6, 0.4), wall: float = 0.05, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Watertight open-top vessel: a box shell with the +z face removed.

    The solid is the wall material (outer box minus a cavity reaching the
    top plane), so the mesh stays closed and usable as IoU ground truth.
    """
    ax, ay, az = np.asarray(extents, dtype=np.float64) / 2.0
    if wall <= 0 or wall >= min(ax, ay) or wall >= 2 * az:
        raise MeshError(f"wall thickness {wall} does not fit extents {extents}")
    bx, by = ax - wall, ay - wall
    zf = -az + wall  # cavity floor
    c = np.asarray(center, dtype=np.float64)
    verts = np.array([
        # 0-3 outer bottom, 4-7 outer top
        [-ax, -ay, -az], [ax, -ay, -az], [ax, ay, -az], [-ax, ay, -az],
        [-ax, -ay, az], [ax, -ay, az], [ax, ay, az], [-ax, ay, az],
        # 8-11 cavity floor, 12-15 cavity top rim
        [-bx, -by, zf], [bx, -by, zf], [bx, by, zf], [-bx, by, zf],
        [-bx, -by, az], [bx, -by, az], [bx, by, az], [-bx, by, az],
    ]) + c
    quads = [
        (0, 3, 2, 1),                      # outer bottom, -z
        (0, 1, 5, 4), (1, 2, 6, 5),        # outer walls
        (2, 3, 7, 6), (3, 0, 4, 7),
        (4, 5, 13, 12), (5, 6, 14, 13),    # top rim ring, +z
        (6, 7, 15, 14), (7, 4, 12, 15),
        (12, 13, 9, 8), (13, 14, 10, 9),   # cavity walls, facing inward
        (14, 15, 11, 10), (15, 12, 8, 11),
        (8, 9, 10, 11),                    # cavity floor, +z
    ]
    return TriangleMesh(verts, _quads_to_tris(quads))


def rectangle(origin, edge_u, edge_v) -> TriangleMesh:
    """Open two-triangle rectangle with normal cross(edge_u, edge_v)."""
    o = np.asarray(origin, dtype=np.float64)
    u = np.asarray(edge_u, dtype=np.float64)
    v = np.asarray(edge_v, dtype=np.float64)
    verts = np.array([o, o + u, o + u + v, o + v])
    return TriangleMesh(verts, np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int32))
