"""Segmentation metrics (Dice, Hausdorff95, sensitivity/specificity) and a
paired Wilcoxon signed-rank test."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.stats import rankdata

from .losses import REGIONS, region_masks

REPORT_DECIMALS = 6


def _binary_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    for m in (a, b):
        if m.dtype != bool and not np.isin(m, (0, 1)).all():
            raise ValueError("metrics accept binary masks only")
    return a.astype(bool), b.astype(bool)


def dice_score(a, b) -> float:
    """``2|a & b| / (|a| + |b|)``; 1.0 when both masks are empty."""
    a, b = _binary_pair(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def surface(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with a 6-connected background neighbour or on the border."""
    mask = np.asarray(mask, dtype=bool)
    struct = ndimage.generate_binary_structure(mask.ndim, 1)
    eroded = ndimage.binary_erosion(mask, structure=struct, border_value=0)
    return mask & ~eroded


def nearest_rank(values: np.ndarray, q: float = 0.95) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise ValueError("percentile of an empty set")
    k = max(int(math.ceil(q * v.size)), 1)
    return float(v[k - 1])


def empty_hd95_sentinel(shape, spacing=None) -> float:
    spacing = np.ones(len(shape)) if spacing is None else np.asarray(spacing, dtype=np.float64)
    return float(np.sqrt(np.sum((np.asarray(shape) * spacing) ** 2)))


def hd95(a, b, spacing=None) -> float:
    """Symmetric 95th-percentile surface distance (nearest-rank percentile).

    Both empty -> 0; exactly one empty -> the volume diagonal length.
    """
    a, b = _binary_pair(a, b)
    spacing = np.ones(a.ndim) if spacing is None else np.asarray(spacing, dtype=np.float64)
    if not a.any() and not b.any():
        return 0.0
    if not a.any() or not b.any():
        return empty_hd95_sentinel(a.shape, spacing)
    sa, sb = surface(a), surface(b)
    # distance from every voxel to the nearest surface voxel of the other mask
    dist_to_b = ndimage.distance_transform_edt(~sb, sampling=spacing)
    dist_to_a = ndimage.distance_transform_edt(~sa, sampling=spacing)
    return max(nearest_rank(dist_to_b[sa]), nearest_rank(dist_to_a[sb]))


def confusion(g, p) -> tuple[int, int, int, int]:
    g, p = _binary_pair(g, p)
    tp = int((g & p).sum())
    fn = int((g & ~p).sum())
    fp = int((~g & p).sum())
    tn = int((~g & ~p).sum())
    return tp, fn, fp, tn


def sensitivity_specificity(g, p) -> tuple[float, float]:
    """TP/(TP+FN) and TN/(TN+FP); an empty denominator scores 1.0."""
    tp, fn, fp, tn = confusion(g, p)
    sens = tp / (tp + fn) if tp + fn else 1.0
    spec = tn / (tn + fp) if tn + fp else 1.0
    return sens, spec


def wilcoxon_signed_rank(x, y) -> tuple[float, float]:
    """Two-sided paired test; returns ``(min(W+, W-), p)``.

    Zero differences are dropped.  The p-value uses the normal approximation
    with tie correction of the variance and a 0.5 continuity correction.
    """
    d = np.asarray(y, dtype=np.float64) - np.asarray(x, dtype=np.float64)
    if np.shape(x) != np.shape(y):
        raise ValueError("paired samples must have equal length")
    d = d[d != 0]
    n = d.size
    if n < 6:
        raise ValueError(f"need at least 6 non-zero paired differences, got {n}")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    stat = min(w_plus, w_minus)
    mean = n * (n + 1) / 4.0
    _, counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(counts**3 - counts)) / 48.0
    z = (abs(w_plus - mean) - 0.5) / math.sqrt(var)
    z = max(z, 0.0)
    p = math.erfc(z / math.sqrt(2.0))
    return stat, min(p, 1.0)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class RegionScores:
    dice: float
    hd95: float
    sensitivity: float
    specificity: float


@dataclass
class EvalReport:
    """Per-region scores for one case (or their mean over a set)."""

    case_id: str
    regions: dict[str, RegionScores] = field(default_factory=dict)

    def mean_dice(self) -> float:
        return float(np.mean([self.regions[r].dice for r in REGIONS]))

    def records(self) -> list[str]:
        f = f"{{:.{REPORT_DECIMALS}f}}"
        return [
            ",".join(
                [self.case_id, r, f.format(s.dice), f.format(s.hd95), f.format(s.sensitivity), f.format(s.specificity)]
            )
            for r, s in self.regions.items()
        ]


def evaluate_case(case_id: str, label: np.ndarray, pred_regions: np.ndarray, spacing=None) -> EvalReport:
    """Score binary region predictions ``[3,...]`` against a label map."""
    gt = region_masks(label).astype(bool)
    pred = np.asarray(pred_regions).astype(bool)
    report = EvalReport(case_id)
    for r, name in enumerate(REGIONS):
        sens, spec = sensitivity_specificity(gt[r], pred[r])
        report.regions[name] = RegionScores(
            dice_score(gt[r], pred[r]), hd95(gt[r], pred[r], spacing), sens, spec
        )
    return report


def mean_report(reports: list[EvalReport], case_id: str = "mean") -> EvalReport:
    out = EvalReport(case_id)
    for name in REGIONS:
        vals = [r.regions[name] for r in reports]
        out.regions[name] = RegionScores(
            float(np.mean([v.dice for v in vals])),
            float(np.mean([v.hd95 for v in vals])),
            float(np.mean([v.sensitivity for v in vals])),
            float(np.mean([v.specificity for v in vals])),
        )
    return out


RECORD_HEADER = "case_id,region,dice,hd95,sensitivity,specificity"
