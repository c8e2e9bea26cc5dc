"""Visibility augmentation of sensor-aware point clouds.

Sightline vectors point from each observed point to its sensor; auxiliary
before/after points sit at a characteristic distance along the sightline;
channel layouts concatenate coordinates, sightline, and a two-float type
tag. Row order is fixed: each observed row is followed by its before
row(s), then its after row, so parentage is recoverable by position (and
also stored explicitly as an int32 ``parent`` column).
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import ply
from .scanner import ScannedPointCloud
from .util import thread_cap


class AugmentError(ValueError):
    pass


class AugMode(str, enum.Enum):
    RAW = "RAW"
    SV = "SV"
    AP = "AP"
    SVAP = "SVAP"
    SENSOR_POS = "SENSOR_POS"
    UNNORM_SV = "UNNORM_SV"
    NORMALS = "NORMALS"


class ApPlacement(str, enum.Enum):
    SYMMETRIC = "SYMMETRIC"
    MIDPOINT = "MIDPOINT"
    GRAZING = "GRAZING"


MODE_WIDTH = {
    AugMode.RAW: 3,
    AugMode.AP: 5,
    AugMode.SV: 6,
    AugMode.SENSOR_POS: 6,
    AugMode.UNNORM_SV: 6,
    AugMode.NORMALS: 6,
    AugMode.SVAP: 8,
}

TAG_OBSERVED = (0.0, 0.0)
TAG_BEFORE = (1.0, 0.0)
TAG_AFTER = (0.0, 1.0)


@dataclass
class AugmentConfig:
    mode: AugMode = AugMode.SVAP
    ap_distance_multiplier: float = 1.0
    ap_placement: ApPlacement = ApPlacement.SYMMETRIC
    grazing_radius: float | None = None  # defaults to the offset distance
    local_knn: int = 0  # 0 = single global characteristic distance

    def __post_init__(self):
        self.mode = AugMode(self.mode)
        self.ap_placement = ApPlacement(self.ap_placement)
        if self.ap_distance_multiplier <= 0:
            raise AugmentError(f"ap_distance_multiplier must be > 0, got {self.ap_distance_multiplier}")


@dataclass
class AugmentedPointCloud:
    rows: np.ndarray
    mode: AugMode
    characteristic_distance: float | None
    parents: np.ndarray

    @property
    def width(self) -> int:
        return self.rows.shape[1]

    def validate(self) -> None:
        if self.width != MODE_WIDTH[self.mode]:
            raise AugmentError(f"mode {self.mode.value} expects width {MODE_WIDTH[self.mode]}, got {self.width}")
        if len(self.parents) != len(self.rows):
            raise AugmentError("parent column length mismatch")
        if self.mode in (AugMode.SV, AugMode.SVAP):
            norms = np.linalg.norm(self.rows[:, 3:6], axis=1)
            if len(norms) and np.abs(norms - 1.0).max() > 1e-9:
                raise AugmentError("sightline sub-vectors must be unit length")
        if self.mode in (AugMode.AP, AugMode.SVAP):
            tags = self.rows[:, -2:]
            legal = np.array([TAG_OBSERVED, TAG_BEFORE, TAG_AFTER])
            ok = (tags[:, None, :] == legal[None, :, :]).all(axis=2).any(axis=1)
            if not ok.all():
                raise AugmentError("tags must be exactly [0,0], [1,0], or [0,1]")


def characteristic_distance(pc: ScannedPointCloud) -> float:
    """Mean nearest-neighbor distance over the cloud (duplicates count as 0)."""
    pts = pc.points
    if len(pts) < 2:
        raise AugmentError(f"characteristic distance needs >= 2 points, got {len(pts)}")
    _, idx = cKDTree(pts).query(pts, k=2, workers=thread_cap())
    diff = pts - pts[idx[:, 1]]
    return float(np.mean(np.sqrt(np.einsum("ij,ij->i", diff, diff))))


def local_knn_distance(pc: ScannedPointCloud, k: int) -> np.ndarray:
    """Per-point mean distance to the k nearest neighbors (self excluded)."""
    pts = pc.points
    if k < 1 or len(pts) <= k:
        raise AugmentError(f"need 1 <= k < n_points, got k={k} for {len(pts)} points")
    dist, _ = cKDTree(pts).query(pts, k=k + 1, workers=thread_cap())
    return dist[:, 1:].mean(axis=1)


def sightline_vectors(pc: ScannedPointCloud) -> np.ndarray:
    """Unit vectors from each observed point toward its sensor."""
    v = pc.sensors - pc.points
    norms = np.linalg.norm(v, axis=1)
    bad = np.nonzero(norms <= 1e-9)[0]
    if len(bad):
        raise AugmentError(f"point {int(bad[0])} coincides with its sensor")
    return v / norms[:, None]


def _offsets(d, n: int, multiplier: float) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if d.ndim == 0:
        d = np.full(n, float(d))
    if len(d) != n:
        raise AugmentError(f"characteristic distance array length {len(d)} != {n} points")
    if not (d > 0).all():
        raise AugmentError("characteristic distance must be > 0")
    return d * multiplier


def auxiliary_points(pc: ScannedPointCloud, d, config: AugmentConfig
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Auxiliary rows for each observed point: (positions, tags, parents).

    Rows are grouped per parent, before-point(s) first, after-point last.
    ``d`` may be a scalar or a per-point array (local mode).
    """
    x = pc.points
    v = sightline_vectors(pc)
    n = len(x)
    off = _offsets(d, n, config.ap_distance_multiplier)

    before = x + off[:, None] * v
    after = x - off[:, None] * v
    if config.ap_placement is ApPlacement.MIDPOINT:
        before = (x + pc.sensors) / 2.0

    if config.ap_placement is not ApPlacement.GRAZING:
        pos = np.empty((2 * n, 3))
        pos[0::2] = before
        pos[1::2] = after
        tags = np.tile(np.array([TAG_BEFORE, TAG_AFTER]), (n, 1))
        parents = np.repeat(np.arange(n, dtype=np.int32), 2)
        return pos, tags, parents

    # grazing: walk each sightline from the sensor at step d, keep samples
    # near the cloud, then emit the plain after-point
    step = np.asarray(d, dtype=np.float64)
    if step.ndim == 0:
        step = np.full(n, float(step))
    radius = step if config.grazing_radius is None else np.full(n, float(config.grazing_radius))
    tree = cKDTree(x)
    pos_list = []
    tag_list = []
    parent_list = []
    for p in range(n):
        length = np.linalg.norm(pc.sensors[p] - x[p])
        k = int(np.floor(length / step[p]))
        if k > 0:
            ks = np.arange(1, k + 1, dtype=np.float64)[:, None]
            samples = pc.sensors[p] - ks * step[p] * v[p]
            nn, _ = tree.query(samples, workers=1)
            near = samples[nn < radius[p]]
            if len(near):
                pos_list.append(near)
                tag_list.append(np.tile(TAG_BEFORE, (len(near), 1)))
                parent_list.append(np.full(len(near), p, dtype=np.int32))
        pos_list.append(after[p][None, :])
        tag_list.append(np.asarray(TAG_AFTER)[None, :])
        parent_list.append(np.array([p], dtype=np.int32))
    return (np.concatenate(pos_list), np.concatenate(tag_list), np.concatenate(parent_list))


def assemble_channels(pc: ScannedPointCloud, config: AugmentConfig,
                      d=None, normals: np.ndarray | None = None) -> AugmentedPointCloud:
    """Assemble the channel layout X ⊕ v ⊕ t for the configured mode."""
    mode = config.mode
    x = pc.points
    n = len(x)
    own = np.arange(n, dtype=np.int32)

    if mode is AugMode.RAW:
        return AugmentedPointCloud(x.copy(), mode, None, own)
    if mode is AugMode.SV:
        return AugmentedPointCloud(np.hstack([x, sightline_vectors(pc)]), mode, None, own)
    if mode is AugMode.SENSOR_POS:
        return AugmentedPointCloud(np.hstack([x, pc.sensors]), mode, None, own)
    if mode is AugMode.UNNORM_SV:
        return AugmentedPointCloud(np.hstack([x, pc.sensors - x]), mode, None, own)
    if mode is AugMode.NORMALS:
        if normals is None:
            raise AugmentError("NORMALS mode needs an oriented normal per point")
        normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
        if len(normals) != n:
            raise AugmentError("normals length mismatch")
        return AugmentedPointCloud(np.hstack([x, normals]), mode, None, own)

    if d is None:
        raise AugmentError(f"mode {mode.value} needs a characteristic distance")
    apos, atags, aparents = auxiliary_points(pc, d, config)
    d_used = float(np.mean(np.asarray(d, dtype=np.float64)))

    if mode is AugMode.AP:
        obs = np.hstack([x, np.tile(TAG_OBSERVED, (n, 1))])
        aux = np.hstack([apos, atags])
    elif mode is AugMode.SVAP:
        v = sightline_vectors(pc)
        obs = np.hstack([x, v, np.tile(TAG_OBSERVED, (n, 1))])
        aux = np.hstack([apos, v[aparents], atags])  # aux rows inherit the parent sightline
    else:
        raise AugmentError(f"unhandled mode {mode}")

    width = obs.shape[1]
    rows = np.empty((n + len(aux), width))
    parents = np.empty(n + len(aux), dtype=np.int32)
    # interleave: observed p, then p's aux block
    counts = np.bincount(aparents, minlength=n)
    out_start = np.arange(n) + np.concatenate(([0], np.cumsum(counts)[:-1]))
    rows[out_start] = obs
    parents[out_start] = own
    aux_slots = np.setdiff1d(np.arange(len(rows)), out_start, assume_unique=True)
    rows[aux_slots] = aux
    parents[aux_slots] = aparents
    out = AugmentedPointCloud(rows, mode, d_used, parents)
    out.validate()
    return out


def variant_channels(pc: ScannedPointCloud, variant) -> AugmentedPointCloud:
    """Width-6 ablation layouts: raw sensor position or unnormalized sightline."""
    variant = AugMode(variant)
    if variant not in (AugMode.SENSOR_POS, AugMode.UNNORM_SV):
        raise AugmentError(f"variant must be SENSOR_POS or UNNORM_SV, got {variant}")
    return assemble_channels(pc, AugmentConfig(mode=variant))


# -- augmented PLY + sidecar --------------------------------------------------


def save_augmented(path, apc: AugmentedPointCloud, sidecar_extra: dict | None = None) -> None:
    """Write the augmented PLY and its JSON sidecar (same stem, .json)."""
    rows = apc.rows.astype(np.float32)
    props = {"x": rows[:, 0], "y": rows[:, 1], "z": rows[:, 2]}
    if apc.mode in (AugMode.SV, AugMode.SVAP, AugMode.SENSOR_POS, AugMode.UNNORM_SV, AugMode.NORMALS):
        props.update({"vx": rows[:, 3], "vy": rows[:, 4], "vz": rows[:, 5]})
    if apc.mode in (AugMode.AP, AugMode.SVAP):
        props.update({"t0": rows[:, -2], "t1": rows[:, -1]})
    props["parent"] = apc.parents.astype(np.int32)
    d_str = "none" if apc.characteristic_distance is None else repr(float(apc.characteristic_distance))
    ply.write_ply(path, props, comments=(f"viziscan mode={apc.mode.value} d={d_str}",))

    sidecar = {"mode": apc.mode.value,
               "d": apc.characteristic_distance,
               "rows": int(len(rows)),
               "width": int(apc.width)}
    if sidecar_extra:
        sidecar.update(sidecar_extra)
    with open(os.path.splitext(str(path))[0] + ".json", "w") as f:
        json.dump(sidecar, f, indent=2)
        f.write("\n")


def load_augmented(path) -> AugmentedPointCloud:
    data = ply.read_ply(path)
    v = data.elements["vertex"]
    mode = None
    d = None
    for c in data.comments:
        tok = c.split()
        if len(tok) == 3 and tok[0] == "viziscan" and tok[1].startswith("mode="):
            mode = AugMode(tok[1].split("=", 1)[1])
            raw = tok[2].split("=", 1)[1]
            d = None if raw == "none" else float(raw)
    if mode is None:
        raise AugmentError(f"{path}: missing 'viziscan mode=... d=...' header comment")
    cols = ["x", "y", "z"]
    if "vx" in v:
        cols += ["vx", "vy", "vz"]
    if "t0" in v:
        cols += ["t0", "t1"]
    rows = np.column_stack([v[c] for c in cols]).astype(np.float64)
    parents = (np.asarray(v["parent"], dtype=np.int32) if "parent" in v
               else np.arange(len(rows), dtype=np.int32))
    return AugmentedPointCloud(rows, mode, d, parents)
