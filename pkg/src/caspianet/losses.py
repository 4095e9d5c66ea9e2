"""Region targets and the BCE + soft-Dice objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

VALID_LABELS = (0, 1, 2, 4)
REGIONS = ("WT", "TC", "ET")
DICE_SMOOTH = 1.0


@dataclass
class RegionTargets:
    """Three region masks ``[N,1,...]`` (binary, or soft after MixUp)."""

    wt: np.ndarray
    tc: np.ndarray
    et: np.ndarray

    def stack(self) -> np.ndarray:
        """``[N,3,...]`` in WT, TC, ET channel order."""
        return np.concatenate([self.wt, self.tc, self.et], axis=1)

    @classmethod
    def from_stack(cls, arr: np.ndarray) -> RegionTargets:
        return cls(arr[:, 0:1], arr[:, 1:2], arr[:, 2:3])


def region_masks(labels: np.ndarray) -> np.ndarray:
    """Label volume ``[...]`` -> float array ``[3, ...]`` of WT, TC, ET."""
    labels = np.asarray(labels)
    bad = ~np.isin(labels, VALID_LABELS)
    if bad.any():
        raise ValueError(f"labels outside {{0,1,2,4}}: {np.unique(labels[bad]).tolist()}")
    wt = labels > 0
    tc = (labels == 1) | (labels == 4)
    et = labels == 4
    return np.stack([wt, tc, et]).astype(np.float64)


def to_regions(labels: np.ndarray) -> RegionTargets:
    """Labels ``[N,H,W,D]`` (or a single ``[H,W,D]`` volume) -> RegionTargets."""
    labels = np.asarray(labels)
    if labels.ndim == 3:
        labels = labels[None]
    r = np.moveaxis(region_masks(labels), 0, 1)  # [N,3,...]
    return RegionTargets.from_stack(r)


def _check(g, logit: Tensor) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if g.shape != logit.shape:
        raise ValueError(f"target shape {g.shape} != prediction shape {logit.shape}")
    return g


def bce(g, p_logit: Tensor) -> Tensor:
    """Mean binary cross entropy on logits: ``softplus(x) - g*x``.

    Equal to ``-[g log p + (1-g) log(1-p)]`` with ``p = sigmoid(x)``.
    """
    g = _check(g, p_logit)
    return ad.mean(ad.softplus(p_logit) - Tensor(g) * p_logit)


def dice_loss(g, p_logit: Tensor, smooth: float = DICE_SMOOTH) -> Tensor:
    """``1 - (2*sum(g p) + s) / (sum g + sum p + s)`` with soft ``p``."""
    g = _check(g, p_logit)
    if smooth <= 0:
        raise ValueError("smooth must be positive")
    p = ad.sigmoid(p_logit)
    inter = ad.reduce_sum(Tensor(g) * p)
    denom = ad.reduce_sum(p) + (float(g.sum()) + smooth)
    return 1.0 - (2.0 * inter + smooth) / denom


def loss_terms(targets, logits: Tensor) -> list[tuple[str, str, Tensor]]:
    """The six (region, kind, value) terms of the total loss."""
    tgt = targets.stack() if isinstance(targets, RegionTargets) else np.asarray(targets, dtype=np.float64)
    if logits.ndim < 2 or logits.shape[1] != 3:
        raise ValueError(f"expected 3 region channels, got shape {logits.shape}")
    if tgt.shape != logits.shape:
        raise ValueError(f"target shape {tgt.shape} != logits shape {logits.shape}")
    terms = []
    for r, name in enumerate(REGIONS):
        sl = ad.take(logits, r, axis=1)
        terms.append((name, "bce", bce(tgt[:, r], sl)))
        terms.append((name, "dice", dice_loss(tgt[:, r], sl)))
    return terms


def total_loss(targets, logits: Tensor) -> Tensor:
    """Sum over WT, TC, ET of BCE + Dice loss."""
    out = None
    for _, _, t in loss_terms(targets, logits):
        out = t if out is None else out + t
    return out
