"""Surface evaluation: Monte-Carlo volumetric IoU, symmetric Chamfer
distance reported x100, and signed normal consistency.

IoU samples uniformly in the single AABB enclosing both meshes and counts
membership ratios, an unbiased estimate of vol(intersection)/vol(union).
Chamfer and NC run on 100k area-weighted surface samples per side matched
by nearest neighbor; NC keeps the sign of the dot product so orientation
errors show.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .mesh import TriangleMesh, sample_surface
from .util import derive_seed, thread_cap

_DOM_GT_SAMPLES = 0
_DOM_PRED_SAMPLES = 1
_DOM_VOLUME = 2
_DOM_DIRECTIONS = 3


class MetricsError(ValueError):
    pass


@dataclass
class EvalConfig:
    n_volume_samples: int = 100_000
    n_surface_samples: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.n_volume_samples <= 0 or self.n_surface_samples <= 0:
            raise MetricsError("sample counts must be > 0")


@dataclass
class MetricsReport:
    iou: float | None
    chamfer_x100: float
    normal_consistency: float
    n_volume_samples: int
    n_surface_samples: int
    seed: int
    gt_watertight: bool
    pred_watertight: bool

    def as_dict(self) -> dict:
        return {
            "iou": self.iou,
            "chamfer_x100": self.chamfer_x100,
            "normal_consistency": self.normal_consistency,
            "n_volume_samples": self.n_volume_samples,
            "n_surface_samples": self.n_surface_samples,
            "seed": self.seed,
            "gt_watertight": self.gt_watertight,
            "pred_watertight": self.pred_watertight,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2) + "\n"


def _union_aabb(gt: TriangleMesh, pred: TriangleMesh) -> tuple[np.ndarray, np.ndarray]:
    glo, ghi = gt.aabb()
    plo, phi = pred.aabb()
    return np.minimum(glo, plo), np.maximum(ghi, phi)


def volumetric_iou(gt: TriangleMesh, pred: TriangleMesh,
                   n: int = 100_000, seed: int = 0) -> float:
    """IoU estimated from n uniform samples in the enclosing AABB."""
    for name, m in (("gt", gt), ("pred", pred)):
        if not m.is_closed():
            raise MetricsError(f"IoU requires watertight meshes ({name} fails the edge audit)")
    lo, hi = _union_aabb(gt, pred)
    rng = np.random.default_rng(derive_seed(seed, _DOM_VOLUME))
    dir_seed = derive_seed(seed, _DOM_DIRECTIONS)

    pts = rng.uniform(lo, hi, size=(n, 3))
    in_g, fail_g = gt.contains(pts, seed=dir_seed)
    in_p, fail_p = pred.contains(pts, seed=dir_seed)
    failed = fail_g | fail_p
    for _ in range(64):
        if not failed.any():
            break
        redo = np.nonzero(failed)[0]
        pts[redo] = rng.uniform(lo, hi, size=(len(redo), 3))
        g2, fg2 = gt.contains(pts[redo], seed=dir_seed)
        p2, fp2 = pred.contains(pts[redo], seed=dir_seed)
        in_g[redo] = g2
        in_p[redo] = p2
        failed[redo] = fg2 | fp2
    if failed.any():
        raise MetricsError(f"{int(failed.sum())} sample points stayed unresolvable")

    union = in_g | in_p
    n_union = int(union.sum())
    if n_union == 0:
        return 0.0
    return float((in_g & in_p).sum() / n_union)


def _surface_metrics(gt: TriangleMesh, pred: TriangleMesh,
                     n: int, seed: int) -> tuple[float, float]:
    pg, ng = sample_surface(gt, n, derive_seed(seed, _DOM_GT_SAMPLES))
    pp, npred = sample_surface(pred, n, derive_seed(seed, _DOM_PRED_SAMPLES))
    workers = thread_cap()
    d_gp, i_gp = cKDTree(pp).query(pg, workers=workers)
    d_pg, i_pg = cKDTree(pg).query(pp, workers=workers)
    cd = 0.5 * d_gp.mean() + 0.5 * d_pg.mean()
    nc = (0.5 * np.einsum("ij,ij->i", ng, npred[i_gp]).mean()
          + 0.5 * np.einsum("ij,ij->i", npred, ng[i_pg]).mean())
    return 100.0 * float(cd), float(nc)


def chamfer(gt: TriangleMesh, pred: TriangleMesh, n: int = 100_000, seed: int = 0) -> float:
    """Symmetric Chamfer distance between surface samples, x100."""
    return _surface_metrics(gt, pred, n, seed)[0]


def normal_consistency(gt: TriangleMesh, pred: TriangleMesh,
                       n: int = 100_000, seed: int = 0) -> float:
    """Symmetric mean signed dot product of nearest-sample normals."""
    return _surface_metrics(gt, pred, n, seed)[1]


def evaluate(gt: TriangleMesh, pred: TriangleMesh,
             config: EvalConfig | None = None) -> MetricsReport:
    """All three metrics under one seed; IoU is omitted (None) when either
    mesh fails the watertightness audit."""
    cfg = config or EvalConfig()
    gt_wt = gt.is_closed()
    pred_wt = pred.is_closed() if pred.n_triangles else False
    iou = None
    if gt_wt and pred_wt:
        iou = volumetric_iou(gt, pred, cfg.n_volume_samples, cfg.seed)
    cd, nc = _surface_metrics(gt, pred, cfg.n_surface_samples, cfg.seed)
    return MetricsReport(
        iou=iou,
        chamfer_x100=cd,
        normal_consistency=nc,
        n_volume_samples=cfg.n_volume_samples,
        n_surface_samples=cfg.n_surface_samples,
        seed=cfg.seed,
        gt_watertight=gt_wt,
        pred_watertight=pred_wt,
    )
