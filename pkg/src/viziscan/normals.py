"""Normal estimation and orientation baselines.

Estimation is a first-order jet (local plane fit): the normal is the
least-eigenvalue eigenvector of the k-neighborhood covariance. Orientation
comes from MST propagation, from the sightline to the sensor, or from the
nearest ground-truth triangle.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, minimum_spanning_tree
from scipy.spatial import cKDTree

from .augment import sightline_vectors
from .bvh import closest_triangles
from .mesh import TriangleMesh
from .scanner import ScannedPointCloud
from .util import thread_cap


class NormalsError(ValueError):
    pass


class OrientationMethod(str, enum.Enum):
    NONE = "NONE"
    MST = "MST"
    SENSOR = "SENSOR"
    GT = "GT"


@dataclass
class OrientedNormals:
    normals: np.ndarray
    orientation_method: OrientationMethod
    n_components: int = 1

    def __post_init__(self):
        self.normals = np.ascontiguousarray(self.normals, dtype=np.float64).reshape(-1, 3)
        norms = np.linalg.norm(self.normals, axis=1)
        if len(norms) and np.abs(norms - 1.0).max() > 1e-9:
            raise NormalsError("normals must be unit length")


def estimate_normals(pc: ScannedPointCloud, k: int = 16) -> np.ndarray:
    """Plane-fit normals from the k nearest neighbors of each point (self included).

    Neighborhoods with rank < 2 covariance get the direction of the nearest
    point with a valid fit.
    """
    pts = pc.points
    if k < 3:
        raise NormalsError(f"k must be >= 3, got {k}")
    if len(pts) <= k:
        raise NormalsError(f"need more than k={k} points, got {len(pts)}")
    _, idx = cKDTree(pts).query(pts, k=k, workers=thread_cap())
    nbrs = pts[idx]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    w, vec = np.linalg.eigh(cov)  # ascending eigenvalues
    normals = np.ascontiguousarray(vec[:, :, 0])

    invalid = (w[:, 2] <= 0) | (w[:, 1] <= 1e-9 * np.maximum(w[:, 2], 1e-300))
    if invalid.all():
        raise NormalsError("all neighborhoods are degenerate (rank < 2)")
    if invalid.any():
        valid_idx = np.nonzero(~invalid)[0]
        _, nn = cKDTree(pts[valid_idx]).query(pts[invalid], k=1, workers=thread_cap())
        normals[invalid] = normals[valid_idx[nn]]
    return normals


def _knn_graph(pts: np.ndarray, k: int) -> np.ndarray:
    """Deduplicated undirected k-NN edge list, shape (m, 2)."""
    kq = min(k + 1, len(pts))
    _, idx = cKDTree(pts).query(pts, k=kq, workers=thread_cap())
    rows = np.repeat(np.arange(len(pts)), kq - 1)
    cols = idx[:, 1:].ravel()
    pair = np.unique(np.sort(np.stack([rows, cols], axis=1), axis=1), axis=0)
    return pair


def orient_mst(pc: ScannedPointCloud, normals: np.ndarray, k: int = 16) -> OrientedNormals:
    """Propagate normal signs along a minimum spanning tree of the k-NN graph.

    Edge weight is 1 - |n_i . n_j| (shifted +1 to keep the sparse graph
    exact); each connected component is rooted at its highest point with an
    upward-pointing normal.
    """
    pts = pc.points
    normals = np.array(normals, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if len(normals) != n:
        raise NormalsError("normals length mismatch")
    if n == 1:
        out = normals.copy()
        if out[0, 2] < 0:
            out[0] = -out[0]
        return OrientedNormals(out, OrientationMethod.MST, n_components=1)

    pair = _knn_graph(pts, k)
    dots = np.abs(np.einsum("ij,ij->i", normals[pair[:, 0]], normals[pair[:, 1]]))
    w = 2.0 - dots  # in [1, 2]; the +1 shift leaves the MST unchanged
    graph = csr_matrix((np.concatenate([w, w]),
                        (np.concatenate([pair[:, 0], pair[:, 1]]),
                         np.concatenate([pair[:, 1], pair[:, 0]]))), shape=(n, n))
    n_comp, labels = connected_components(graph, directed=False)
    tree = minimum_spanning_tree(graph)
    adj = tree + tree.T
    indptr, indices = adj.indptr, adj.indices

    out = normals.copy()
    visited = np.zeros(n, dtype=bool)
    for comp in range(n_comp):
        members = np.nonzero(labels == comp)[0]
        root = members[np.argmax(pts[members, 2])]
        if out[root, 2] < 0:
            out[root] = -out[root]
        visited[root] = True
        stack = [root]
        while stack:
            node = stack.pop()
            for child in indices[indptr[node]:indptr[node + 1]]:
                if not visited[child]:
                    visited[child] = True
                    if np.dot(out[child], out[node]) < 0:
                        out[child] = -out[child]
                    stack.append(child)
    return OrientedNormals(out, OrientationMethod.MST, n_components=int(n_comp))


def orient_sensor(pc: ScannedPointCloud, normals: np.ndarray) -> OrientedNormals:
    """Flip each normal toward its sensor; near-perpendicular ties stay as-is."""
    v = sightline_vectors(pc)
    normals = np.array(normals, dtype=np.float64).reshape(-1, 3)
    dots = np.einsum("ij,ij->i", normals, v)
    flip = dots <= -1e-12
    normals[flip] = -normals[flip]
    return OrientedNormals(normals, OrientationMethod.SENSOR)


def gt_normals(pc: ScannedPointCloud, mesh: TriangleMesh) -> OrientedNormals:
    """Outward normal of each point's nearest triangle (ties: lowest index)."""
    tri, _ = closest_triangles(mesh.vertices, mesh.triangles, pc.points)
    return OrientedNormals(mesh.face_normals[tri].copy(), OrientationMethod.GT)
