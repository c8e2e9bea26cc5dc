"""Triangle meshes with spatial acceleration.

The mesh is immutable after construction: vertices, triangles, per-face
outward normals, and a lazily-built BVH shared by all ray queries.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import ply
from .bvh import TriangleBvh, closest_triangles
from .util import substream

# squared-area threshold for degenerate faces, stated for a unit-extent mesh
# and rescaled by extent^4 so the test is frame-independent
DEGENERATE_SQ_AREA = 1e-12


class MeshError(ValueError):
    pass


class UnresolvableQueryError(RuntimeError):
    """A point whose inside/outside parity stayed degenerate after 8 retries."""


@dataclass(frozen=True)
class SimilarityTransform:
    """y = scale * x + offset, uniform scale."""

    scale: float
    offset: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(points, dtype=np.float64) + self.offset

    def inverse(self) -> "SimilarityTransform":
        return SimilarityTransform(1.0 / self.scale, -np.asarray(self.offset) / self.scale)

    def as_dict(self) -> dict:
        return {"scale": float(self.scale), "offset": [float(v) for v in self.offset]}

    @staticmethod
    def identity() -> "SimilarityTransform":
        return SimilarityTransform(1.0, np.zeros(3))

    @staticmethod
    def from_dict(d: dict) -> "SimilarityTransform":
        return SimilarityTransform(float(d["scale"]), np.asarray(d["offset"], dtype=np.float64))


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise MeshError(f"sphere radius must be > 0, got {self.radius}")


@dataclass(frozen=True)
class RayHit:
    point: np.ndarray
    t: float
    triangle_id: int
    normal: np.ndarray


class TriangleMesh:
    """Indexed triangle surface.

    Degenerate faces are dropped at construction (count kept in
    ``dropped_degenerate``); vertices are stored as given.
    """

    def __init__(self, vertices, triangles, allow_empty: bool = False):
        v = np.ascontiguousarray(np.asarray(vertices, dtype=np.float64).reshape(-1, 3))
        t = np.ascontiguousarray(np.asarray(triangles, dtype=np.int32).reshape(-1, 3))
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError("triangle index out of range")

        self.dropped_degenerate = 0
        if len(t):
            p0, p1, p2 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
            cross = np.cross(p1 - p0, p2 - p0)
            sq4 = np.einsum("ij,ij->i", cross, cross)  # (2*area)^2
            ext = v.max(axis=0) - v.min(axis=0) if len(v) else np.zeros(3)
            scale4 = max(float(ext.max()), 0.0) ** 4
            keep = sq4 > 4.0 * DEGENERATE_SQ_AREA * scale4
            self.dropped_degenerate = int((~keep).sum())
            t = t[keep]
            cross = cross[keep]
        if len(t) == 0 and not allow_empty:
            raise MeshError("no geometry: zero non-degenerate triangles")

        self.vertices = v
        self.triangles = t
        if len(t):
            norms = np.linalg.norm(cross, axis=1, keepdims=True)
            self.face_normals = cross / norms
            self.face_areas = norms[:, 0] / 2.0
        else:
            self.face_normals = np.zeros((0, 3))
            self.face_areas = np.zeros(0)
        self._bvh: TriangleBvh | None = None

    # -- derived geometry ---------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        if not len(self.vertices):
            raise MeshError("empty mesh has no bounding box")
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def diagonal(self) -> float:
        lo, hi = self.aabb()
        return float(np.linalg.norm(hi - lo))

    @property
    def bvh(self) -> TriangleBvh:
        if self._bvh is None:
            if not len(self.triangles):
                raise MeshError("empty mesh has no acceleration structure")
            self._bvh = TriangleBvh(self.vertices, self.triangles)
        return self._bvh

    # -- audits ---------------------------------------------------------------

    def _edge_keys(self):
        t = self.triangles.astype(np.int64)
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        nv = len(self.vertices)
        return e[:, 0] * nv + e[:, 1], e[:, 1] * nv + e[:, 0]

    def is_closed(self) -> bool:
        """Boundary-free with consistent orientation: every directed edge is
        matched by its reverse. Sufficient for parity-based volume queries."""
        if not len(self.triangles):
            return False
        fwd, rev = self._edge_keys()
        return bool(np.array_equal(np.sort(fwd), np.sort(rev)))

    def is_watertight(self) -> bool:
        """Strict audit: every edge shared by exactly two consistently wound
        triangles (closed 2-manifold, no pinches)."""
        if not len(self.triangles):
            return False
        fwd, rev = self._edge_keys()
        if len(np.unique(fwd)) != len(fwd):
            return False
        return bool(np.array_equal(np.sort(fwd), np.sort(rev)))

    # -- queries ----------------------------------------------------------------

    def ray_intersect(self, origin, direction) -> RayHit | None:
        """Nearest intersection with t > 1e-9 * diagonal, or None."""
        d = np.asarray(direction, dtype=np.float64)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-9:
            raise MeshError(f"direction must be unit length, |d| = {n}")
        t, tri, _, _ = self.bvh.ray_nearest(origin, d, 1e-9 * self.diagonal())
        if tri < 0:
            return None
        o = np.asarray(origin, dtype=np.float64)
        return RayHit(point=o + t * d, t=float(t), triangle_id=int(tri),
                      normal=self.face_normals[tri].copy())

    def contains(self, points, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """Ray-parity inside test for a batch of points.

        Returns (inside, failed) boolean arrays; a point fails when the
        initial direction and all 8 retries hit degenerate crossings.
        """
        rng = substream(seed, 0xD1E)
        dirs = rng.standard_normal((9, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        inside, failed = self.bvh.batch_contains(
            np.asarray(points, dtype=np.float64).reshape(-1, 3),
            dirs, t_eps=0.0, merge_eps=1e-9)
        return inside.astype(bool), failed.astype(bool)

    def distance_to_surface(self, points) -> np.ndarray:
        """Unsigned distance from each point to the nearest triangle."""
        _, d = closest_triangles(self.vertices, self.triangles,
                                 np.asarray(points, dtype=np.float64).reshape(-1, 3))
        return d


def is_inside(mesh: TriangleMesh, point, seed: int = 0) -> bool:
    """Parity inside/outside test for one point of a watertight mesh."""
    inside, failed = mesh.contains(np.asarray(point, dtype=np.float64).reshape(1, 3), seed=seed)
    if failed[0]:
        raise UnresolvableQueryError("unresolvable query point")
    return bool(inside[0])


def normalize_unit_cube(mesh: TriangleMesh) -> tuple[TriangleMesh, SimilarityTransform]:
    """Center the AABB at the origin and scale the longest extent to 1."""
    lo, hi = mesh.aabb()
    ext = hi - lo
    if ext.max() <= 0:
        raise MeshError("zero-extent mesh cannot be normalized")
    s = 1.0 / float(ext.max())
    c = (lo + hi) / 2.0
    tf = SimilarityTransform(s, -s * c)
    out = TriangleMesh(tf.apply(mesh.vertices), mesh.triangles, allow_empty=True)
    return out, tf


def sample_surface(mesh: TriangleMesh, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Area-weighted uniform surface samples: (points (n,3), face normals (n,3))."""
    if n <= 0:
        raise MeshError(f"sample count must be > 0, got {n}")
    if not mesh.n_triangles:
        raise MeshError("cannot sample an empty mesh")
    rng = np.random.default_rng(int(seed))
    p = mesh.face_areas / mesh.face_areas.sum()
    chosen = rng.choice(mesh.n_triangles, size=n, p=p)
    uv = rng.random((n, 2))
    flip = uv.sum(axis=1) > 1.0
    uv[flip] = 1.0 - uv[flip]
    v = mesh.vertices
    t = mesh.triangles[chosen]
    pts = (v[t[:, 0]]
           + uv[:, :1] * (v[t[:, 1]] - v[t[:, 0]])
           + uv[:, 1:] * (v[t[:, 2]] - v[t[:, 0]]))
    return pts, mesh.face_normals[chosen].copy()


def bounding_sphere(mesh: TriangleMesh) -> Sphere:
    """Sphere at the AABB center with radius half the AABB diagonal."""
    lo, hi = mesh.aabb()
    if (hi - lo).max() <= 0:
        raise MeshError("zero-extent mesh")
    return Sphere(center=(lo + hi) / 2.0, radius=float(np.linalg.norm(hi - lo) / 2.0))


def inscribed_target_sphere(mesh: TriangleMesh) -> Sphere:
    """Largest sphere inscribed in the convex hull: the scan-ray target.

    Strict interiority matters: a target sphere that touches the surface
    admits tangent scan rays, which break the before/after-point semantics.
    The Chebyshev center is found by linear programming over the hull's
    facet planes.
    """
    lo, hi = mesh.aabb()
    if (hi - lo).min() <= 0:
        raise MeshError("zero-extent mesh")
    from scipy.optimize import linprog
    from scipy.spatial import ConvexHull, QhullError

    try:
        hull = ConvexHull(mesh.vertices)
    except QhullError as e:
        raise MeshError(f"degenerate geometry for target sphere: {e}")
    a = hull.equations[:, :3]  # unit outward normals; interior is a.x + b <= 0
    b = hull.equations[:, 3]
    res = linprog(c=[0.0, 0.0, 0.0, -1.0],
                  A_ub=np.hstack([a, np.ones((len(a), 1))]), b_ub=-b,
                  bounds=[(None, None)] * 3 + [(0, None)], method="highs")
    if not res.success or res.x[3] <= 0:
        raise MeshError("could not inscribe a sphere in the convex hull")
    return Sphere(center=res.x[:3].copy(), radius=float(res.x[3]))


# -- file I/O ---------------------------------------------------------------


def _mesh_from_ply(path) -> TriangleMesh:
    data = ply.read_ply(path)
    if "vertex" not in data.elements:
        raise MeshError("no geometry: PLY has no vertex element")
    velem = data.elements["vertex"]
    try:
        verts = np.column_stack([velem["x"], velem["y"], velem["z"]]).astype(np.float64)
    except KeyError as e:
        raise MeshError(f"PLY vertex element lacks property {e}")
    face = data.elements.get("face", {})
    rows = face.get("vertex_indices", face.get("vertex_index"))
    if rows is None or len(rows) == 0:
        raise MeshError("no geometry: PLY has no faces")
    return TriangleMesh(verts, ply.triangulate_fan(rows))


def _mesh_from_obj(path) -> TriangleMesh:
    verts = []
    polys = []
    with open(path, "r", errors="replace") as f:
        for line in f:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "v":
                verts.append((float(tok[1]), float(tok[2]), float(tok[3])))
            elif tok[0] == "f":
                idx = []
                for part in tok[1:]:
                    i = int(part.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                polys.append(np.asarray(idx, dtype=np.int32))
    if not verts or not polys:
        raise MeshError("no geometry")
    return TriangleMesh(np.asarray(verts, dtype=np.float64), ply.triangulate_fan(polys))


def load_mesh(path) -> TriangleMesh:
    """Load a PLY or OBJ mesh; degenerate faces are dropped (count kept on the mesh)."""
    if not os.path.isfile(path):
        raise MeshError(f"cannot read mesh file: {path}")
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".obj":
        return _mesh_from_obj(path)
    return _mesh_from_ply(path)


def save_mesh(path, mesh: TriangleMesh) -> None:
    """Write binary little-endian PLY (float32 vertices, int32 face indices)."""
    v = mesh.vertices.astype(np.float32)
    ply.write_ply(path,
                  {"x": v[:, 0], "y": v[:, 1], "z": v[:, 2]},
                  faces=mesh.triangles.astype(np.int32),
                  comments=("viziscan mesh",))
