"""Virtual range scanning: sensors on two spheres, rays at an inscribed
target sphere, Gaussian noise, and voxel decimation.

Every ray slot draws from its own random substream keyed by (seed, slot),
so scans are reproducible independent of execution order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import ply
from .mesh import MeshError, SimilarityTransform, TriangleMesh, bounding_sphere, inscribed_target_sphere
from .util import substream

log = logging.getLogger("viziscan")

_DOM_SENSORS = 1
_DOM_RAYS = 2
_DOM_NOISE = 3

_MAX_ATTEMPTS_PER_RAY = 1000


class ScanError(RuntimeError):
    pass


@dataclass
class ScanConfig:
    n_points: int = 3000
    n_sensors: int = 10
    noise_sigma: float = 0.005
    sphere_radius_factors: tuple = (1.5, 2.5)
    hemisphere_mode: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_points <= 0:
            raise ValueError(f"n_points must be > 0, got {self.n_points}")
        if self.n_sensors <= 0:
            raise ValueError(f"n_sensors must be > 0, got {self.n_sensors}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if len(self.sphere_radius_factors) != 2 or min(self.sphere_radius_factors) <= 1:
            raise ValueError(f"both sphere radius factors must be > 1, got {self.sphere_radius_factors}")


@dataclass
class ScannedPointCloud:
    """Observed points with the sensor that saw each of them."""

    points: np.ndarray
    sensors: np.ndarray
    gt_normals: np.ndarray | None = None
    frame: SimilarityTransform = field(default_factory=SimilarityTransform.identity)

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.sensors = np.ascontiguousarray(self.sensors, dtype=np.float64).reshape(-1, 3)
        if len(self.points) != len(self.sensors):
            raise ValueError(f"{len(self.points)} points vs {len(self.sensors)} sensors")
        if self.gt_normals is not None:
            self.gt_normals = np.ascontiguousarray(self.gt_normals, dtype=np.float64).reshape(-1, 3)
            if len(self.gt_normals) != len(self.points):
                raise ValueError("gt_normals length mismatch")
        gap = np.linalg.norm(self.sensors - self.points, axis=1)
        if len(gap) and gap.min() <= 1e-9:
            raise ValueError(f"point {int(gap.argmin())} coincides with its sensor")

    def __len__(self) -> int:
        return len(self.points)


def place_sensors(mesh: TriangleMesh, config: ScanConfig) -> np.ndarray:
    """Sensor positions drawn uniformly on the two scan spheres."""
    b = bounding_sphere(mesh)
    radii = (b.radius * config.sphere_radius_factors[0],
             b.radius * config.sphere_radius_factors[1])
    rng = substream(config.seed, _DOM_SENSORS)
    out = np.empty((config.n_sensors, 3))
    for i in range(config.n_sensors):
        while True:
            r = radii[int(rng.integers(2))]
            d = rng.standard_normal(3)
            n = np.linalg.norm(d)
            if n < 1e-12:
                continue
            pos = b.center + d / n * r
            if config.hemisphere_mode and pos[2] < b.center[2]:
                continue
            out[i] = pos
            break
    return out


def scan(mesh: TriangleMesh, config: ScanConfig,
         frame: SimilarityTransform | None = None) -> ScannedPointCloud:
    """Scan a (normalized) mesh into a sensor-aware point cloud.

    Each ray slot picks a sensor and a target on the inscribed sphere from
    its own substream, casting until it hits; noise is added to positions
    afterwards from a separate stream, so the σ=0 geometry is unchanged.
    """
    if not mesh.n_triangles:
        raise MeshError("cannot scan an empty mesh")
    lo, hi = mesh.aabb()
    max_ext = float((hi - lo).max())
    if abs(max_ext - 1.0) > 0.25:
        log.warning("scanning a mesh with longest extent %.4g; noise_sigma=%g assumes a "
                    "unit-normalized frame", max_ext, config.noise_sigma)

    sensors = place_sensors(mesh, config)
    target = inscribed_target_sphere(mesh)
    # aim strictly inside the hull-inscribed sphere: rays that graze the
    # surface tangentially would break the before/after-point semantics
    target_radius = 0.98 * target.radius
    bvh = mesh.bvh
    t_min = 1e-9 * mesh.diagonal()

    pts = np.empty((config.n_points, 3))
    sens = np.empty((config.n_points, 3))
    normals = np.empty((config.n_points, 3))
    for slot in range(config.n_points):
        rng = substream(config.seed, _DOM_RAYS, slot)
        for _ in range(_MAX_ATTEMPTS_PER_RAY):
            origin = sensors[int(rng.integers(config.n_sensors))]
            d = rng.standard_normal(3)
            n = np.linalg.norm(d)
            if n < 1e-12:
                continue
            aim = target.center + d / n * target_radius - origin
            an = np.linalg.norm(aim)
            if an < 1e-12:
                continue
            aim /= an
            t, tri, _, _ = bvh.ray_nearest(origin, aim, t_min)
            if tri >= 0:
                pts[slot] = origin + t * aim
                sens[slot] = origin
                normals[slot] = mesh.face_normals[tri]
                break
        else:
            raise ScanError("mesh unreachable from sensors")

    if config.noise_sigma > 0:
        noise_rng = substream(config.seed, _DOM_NOISE)
        pts = pts + config.noise_sigma * noise_rng.standard_normal(pts.shape)

    return ScannedPointCloud(points=pts, sensors=sens, gt_normals=normals,
                             frame=frame if frame is not None else SimilarityTransform.identity())


def decimate_voxel(pc: ScannedPointCloud, voxel_size: float) -> ScannedPointCloud:
    """Keep one point per occupied voxel: the member nearest the voxel's
    member centroid, in voxel-index order."""
    if voxel_size <= 0:
        raise ValueError(f"voxel_size must be > 0, got {voxel_size}")
    idx = np.floor(pc.points / voxel_size).astype(np.int64)
    order = np.lexsort((idx[:, 2], idx[:, 1], idx[:, 0]))
    sidx = idx[order]
    new_group = np.any(np.diff(sidx, axis=0) != 0, axis=1)
    starts = np.concatenate(([0], np.nonzero(new_group)[0] + 1))
    group_of = np.cumsum(np.concatenate(([0], new_group.astype(np.int64))))

    spts = pc.points[order]
    sums = np.add.reduceat(spts, starts, axis=0)
    counts = np.diff(np.concatenate((starts, [len(spts)])))
    centroids = sums / counts[:, None]
    d2 = np.einsum("ij,ij->i", spts - centroids[group_of], spts - centroids[group_of])

    # first row per (group, distance, original index) = deterministic winner
    pick_order = np.lexsort((order, d2, group_of))
    winners_sorted_pos = pick_order[np.searchsorted(group_of[pick_order], np.arange(len(starts)))]
    keep = order[winners_sorted_pos]
    return ScannedPointCloud(
        points=pc.points[keep],
        sensors=pc.sensors[keep],
        gt_normals=None if pc.gt_normals is None else pc.gt_normals[keep],
        frame=pc.frame,
    )


def sightline_gap(pc: ScannedPointCloud) -> np.ndarray:
    """Per-point distance from observed point to its sensor."""
    return np.linalg.norm(pc.sensors - pc.points, axis=1)


# -- sensor-cloud PLY interchange -------------------------------------------


def save_cloud(path, pc: ScannedPointCloud) -> None:
    """Write the sensor-cloud PLY: x y z sx sy sz [nx ny nz], float32."""
    p = pc.points.astype(np.float32)
    s = pc.sensors.astype(np.float32)
    props = {"x": p[:, 0], "y": p[:, 1], "z": p[:, 2],
             "sx": s[:, 0], "sy": s[:, 1], "sz": s[:, 2]}
    if pc.gt_normals is not None:
        n = pc.gt_normals.astype(np.float32)
        props.update({"nx": n[:, 0], "ny": n[:, 1], "nz": n[:, 2]})
    fd = pc.frame.as_dict()
    comments = ("viziscan sensor cloud",
                "viziscan frame scale={} ox={} oy={} oz={}".format(
                    repr(fd["scale"]), *[repr(v) for v in fd["offset"]]))
    ply.write_ply(path, props, comments=comments)


def load_cloud(path) -> ScannedPointCloud:
    data = ply.read_ply(path)
    if "vertex" not in data.elements:
        raise ScanError(f"{path}: no vertex element")
    v = data.elements["vertex"]
    missing = [k for k in ("x", "y", "z", "sx", "sy", "sz") if k not in v]
    if missing:
        raise ScanError(f"{path}: not a sensor cloud (missing {missing})")
    pts = np.column_stack([v["x"], v["y"], v["z"]]).astype(np.float64)
    sens = np.column_stack([v["sx"], v["sy"], v["sz"]]).astype(np.float64)
    normals = None
    if all(k in v for k in ("nx", "ny", "nz")):
        normals = np.column_stack([v["nx"], v["ny"], v["nz"]]).astype(np.float64)
    frame = SimilarityTransform.identity()
    for c in data.comments:
        tok = c.split()
        if len(tok) == 6 and tok[0] == "viziscan" and tok[1] == "frame":
            kv = dict(t.split("=", 1) for t in tok[2:])
            frame = SimilarityTransform(float(kv["scale"]),
                                        np.array([float(kv["ox"]), float(kv["oy"]), float(kv["oz"])]))
    return ScannedPointCloud(points=pts, sensors=sens, gt_normals=normals, frame=frame)
