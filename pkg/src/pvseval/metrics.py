"""Voxel- and cluster-level overlap metrics for one subject.

Voxel level works on foreground counts: dice = 2*overlap/(manual+algo),
sensitivity = overlap/manual, precision = overlap/algo. Cluster level works
on connected components with the any-voxel overlap rule: a predicted
cluster counts as a true positive if any of its voxels touches the
reference, and vice versa. Degenerate cases (either side empty) are
reported as undefined rather than forced to 0 or 1, with flags so
aggregation can exclude and count them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .ccl import label_components
from .errors import DimMismatchError, LengthMismatchError
from .nifti import BinaryMask
from .volume import RoiMask, ensure_same_grid, intersect

METRIC_NAMES = ("dsc_vox", "sen_vox", "ppv_vox", "dsc_num", "sen_num", "ppv_num")

CSV_COLUMNS = (
    "subject_id",
    "region",
    "connectivity",
    "dsc_vox",
    "sen_vox",
    "ppv_vox",
    "dsc_num",
    "sen_num",
    "ppv_num",
    "vol_manual_vox",
    "vol_algo_vox",
    "vol_overlap_vox",
    "n_manual",
    "n_algo",
    "n_manual_hit",
    "n_algo_hit",
    "degenerate_flags",
)


@dataclass(frozen=True)
class VoxelCounts:
    overlap: int
    manual: int
    algo: int


@dataclass(frozen=True)
class ClusterCounts:
    n_manual: int
    n_algo: int
    n_manual_hit: int  # manual clusters touched by >=1 predicted voxel
    n_algo_hit: int  # predicted clusters touching >=1 manual voxel


@dataclass
class SubjectMetrics:
    """One subject-region metric record; the unit that gets averaged."""

    subject_id: str
    region: str
    connectivity: int
    dsc_vox: float | None
    sen_vox: float | None
    ppv_vox: float | None
    dsc_num: float | None
    sen_num: float | None
    ppv_num: float | None
    vol_manual_vox: int
    vol_algo_vox: int
    vol_overlap_vox: int
    vol_manual_mm3: float
    vol_algo_mm3: float
    n_manual: int
    n_algo: int
    n_manual_hit: int
    n_algo_hit: int
    degenerate_flags: tuple[str, ...] = field(default_factory=tuple)

    def to_row(self) -> dict[str, str]:
        row = {}
        for col in CSV_COLUMNS:
            value = getattr(self, col)
            if col == "degenerate_flags":
                row[col] = "|".join(value)
            elif value is None:
                row[col] = ""
            else:
                row[col] = str(value)
        return row

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["degenerate_flags"] = list(self.degenerate_flags)
        return d


def _ratios(overlap: int, manual: int, algo: int):
    """(dsc, sen, ppv, flags) under the exclusion conventions."""
    if manual == 0 and algo == 0:
        return None, None, None, ("both_empty",)
    if manual == 0:
        return 0.0, None, 0.0, ("ref_empty",)
    if algo == 0:
        return 0.0, 0.0, None, ("pred_empty",)
    return (
        2.0 * overlap / (manual + algo),
        overlap / manual,
        overlap / algo,
        (),
    )


def voxel_metrics(
    pred: BinaryMask, ref: BinaryMask, roi: RoiMask | None = None
) -> tuple[VoxelCounts, float | None, float | None, float | None]:
    """Voxel-level (counts, dice, sensitivity, precision)."""
    ensure_same_grid(pred, ref)
    if roi is not None:
        pred = intersect(pred, roi.mask)
        ref = intersect(ref, roi.mask)
    overlap = int(np.count_nonzero(pred.data & ref.data))
    counts = VoxelCounts(overlap, ref.foreground_count, pred.foreground_count)
    dsc, sen, ppv, _ = _ratios(counts.overlap, counts.manual, counts.algo)
    return counts, dsc, sen, ppv


def cluster_metrics(
    pred: BinaryMask,
    ref: BinaryMask,
    connectivity: int = 26,
    roi: RoiMask | None = None,
) -> tuple[ClusterCounts, float | None, float | None, float | None]:
    """Cluster-level (counts, dice, sensitivity, precision).

    Labeling happens after ROI restriction. The dice numerator is the sum
    of both hit counts, (n_manual_hit + n_algo_hit)/(n_manual + n_algo),
    which reduces to 2n/(n_manual + n_algo) whenever the hit counts agree.
    """
    ensure_same_grid(pred, ref)
    if roi is not None:
        pred = intersect(pred, roi.mask)
        ref = intersect(ref, roi.mask)
    ref_lm = label_components(ref, connectivity)
    pred_lm = label_components(pred, connectivity)
    manual_touched = np.unique(ref_lm.data[pred.data])
    algo_touched = np.unique(pred_lm.data[ref.data])
    counts = ClusterCounts(
        n_manual=ref_lm.component_count,
        n_algo=pred_lm.component_count,
        n_manual_hit=int(np.count_nonzero(manual_touched)),
        n_algo_hit=int(np.count_nonzero(algo_touched)),
    )
    if counts.n_manual == 0 and counts.n_algo == 0:
        return counts, None, None, None
    if counts.n_manual == 0:
        return counts, 0.0, None, 0.0
    if counts.n_algo == 0:
        return counts, 0.0, 0.0, None
    dsc = (counts.n_manual_hit + counts.n_algo_hit) / (counts.n_manual + counts.n_algo)
    sen = counts.n_manual_hit / counts.n_manual
    ppv = counts.n_algo_hit / counts.n_algo
    return counts, dsc, sen, ppv


def pearson_r(xs, ys) -> float | None:
    """Sample Pearson correlation; None when n < 3 or a variance is 0."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape:
        raise LengthMismatchError(f"length mismatch: {xs.shape} vs {ys.shape}")
    n = xs.size
    if n < 3:
        return None
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return None
    return float((dx @ dy) / math.sqrt(sxx * syy))


def evaluate_subject(
    pred: BinaryMask,
    ref: BinaryMask,
    rois: list[RoiMask] | None = None,
    connectivity: int = 26,
    subject_id: str = "",
) -> list[SubjectMetrics]:
    """One SubjectMetrics per ROI; a single whole-volume record if none."""
    ensure_same_grid(pred, ref)
    targets = rois if rois else [None]
    out = []
    for roi in targets:
        region = roi.region if roi is not None else "ALL"
        p = intersect(pred, roi.mask) if roi is not None else pred
        r = intersect(ref, roi.mask) if roi is not None else ref
        vox, dsc_v, sen_v, ppv_v = voxel_metrics(p, r)
        clus, dsc_n, sen_n, ppv_n = cluster_metrics(p, r, connectivity)
        _, _, _, flags = _ratios(vox.overlap, vox.manual, vox.algo)
        flags = list(flags)
        if roi is not None and roi.mask.foreground_count == 0:
            flags.append("empty_region")
        voxel_mm3 = ref.voxel_volume_mm3
        out.append(
            SubjectMetrics(
                subject_id=subject_id,
                region=region,
                connectivity=connectivity,
                dsc_vox=dsc_v,
                sen_vox=sen_v,
                ppv_vox=ppv_v,
                dsc_num=dsc_n,
                sen_num=sen_n,
                ppv_num=ppv_n,
                vol_manual_vox=vox.manual,
                vol_algo_vox=vox.algo,
                vol_overlap_vox=vox.overlap,
                vol_manual_mm3=vox.manual * voxel_mm3,
                vol_algo_mm3=vox.algo * voxel_mm3,
                n_manual=clus.n_manual,
                n_algo=clus.n_algo,
                n_manual_hit=clus.n_manual_hit,
                n_algo_hit=clus.n_algo_hit,
                degenerate_flags=tuple(flags),
            )
        )
    return out
