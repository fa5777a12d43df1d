"""Pose evaluation: OKS-based average precision and PCKh rates.

Average precision follows the COCO keypoint protocol: per OKS threshold,
predictions are matched greedily in descending pose-score order (ties broken
by ascending id) to the unmatched ground truth with the highest OKS at or
above the threshold, and AP is the area under the 101-point interpolated
precision-recall curve.  PCKh counts a joint as correct when its distance to
the ground truth is at most ``threshold`` times the head segment length, with
a closed boundary.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .codec import KeypointSet
from .errors import DataError

logger = logging.getLogger(__name__)

OKS_THRESHOLDS: tuple[float, ...] = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
RECALL_GRID = np.arange(101) / 100.0


@dataclass(frozen=True)
class PosePrediction:
    """A scored pose hypothesis for one image."""

    keypoints: KeypointSet
    score: float
    image_id: int = 0
    id: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise DataError(f"prediction score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class PoseAnnotation:
    """A ground-truth pose; area feeds OKS, head_length feeds PCKh."""

    keypoints: KeypointSet
    area: float = 0.0
    image_id: int = 0
    id: int = 0
    iscrowd: bool = False
    head_length: float | None = None

    def __post_init__(self):
        if not math.isfinite(self.area) or self.area < 0.0:
            raise DataError(f"annotation area must be finite and >= 0, got {self.area}")


@dataclass(frozen=True)
class EvalReport:
    """Named scores in [0, 1] plus bookkeeping for skipped samples."""

    kind: str
    components: tuple[tuple[str, float], ...]
    skipped: int = 0

    def __post_init__(self):
        if not self.components:
            raise DataError("an evaluation report needs at least one component")
        labels = [label for label, _ in self.components]
        if len(set(labels)) != len(labels):
            raise DataError("report component labels must be unique")
        for label, value in self.components:
            if not (math.isfinite(value) and 0.0 <= value <= 1.0):
                raise DataError(f"report value {label} must be in [0, 1], got {value}")
        if self.skipped < 0:
            raise DataError("skipped count cannot be negative")

    @property
    def mean(self) -> float:
        values = [value for _, value in self.components]
        return float(sum(values) / len(values))

    def __getitem__(self, label: str) -> float:
        for name, value in self.components:
            if name == label:
                return value
        raise KeyError(label)

    def lines(self) -> list[str]:
        rows = [f"{label}: {value:.4f}" for label, value in self.components]
        rows.append(f"mean: {self.mean:.4f}")
        if self.skipped:
            rows.append(f"skipped: {self.skipped}")
        return rows


def oks(pred: KeypointSet, gt: KeypointSet, area: float,
        k: Sequence[float]) -> float:
    """Object keypoint similarity averaged over labeled ground-truth joints.

    ``area`` is the object's scale squared (s^2); per joint the similarity is
    exp(-d^2 / (2 s^2 k_i^2)).  Joints with ground-truth visibility 0 are
    excluded from both numerator and denominator.
    """
    if pred.K != gt.K:
        raise DataError(f"keypoint counts differ: {pred.K} vs {gt.K}")
    if len(k) != gt.K:
        raise DataError(f"need {gt.K} per-joint constants, got {len(k)}")
    if area <= 0.0:
        raise DataError("OKS needs a positive ground-truth area")
    labeled = gt.visibility > 0
    if not labeled.any():
        raise DataError("OKS needs at least one labeled joint")
    d2 = np.sum((pred.xy - gt.xy) ** 2, axis=1)
    ki2 = np.asarray(k, dtype=np.float64) ** 2
    sim = np.exp(-d2[labeled] / (2.0 * area * ki2[labeled]))
    return float(sim.mean())


def _rank_order(preds: Sequence[PosePrediction]) -> list[int]:
    """Indices in descending score order; equal scores keep ascending id."""
    return sorted(range(len(preds)), key=lambda i: (-preds[i].score, preds[i].id))


def _usable_gts(gts: Sequence[PoseAnnotation]) -> list[PoseAnnotation]:
    crowd = sum(1 for gt in gts if gt.iscrowd)
    if crowd:
        logger.warning("ignoring %d crowd annotations during matching", crowd)
    return [gt for gt in gts if not gt.iscrowd]


def _oks_table(preds: Sequence[PosePrediction], gts: Sequence[PoseAnnotation],
               k: Sequence[float]) -> dict[int, tuple[list[int], list[PoseAnnotation], np.ndarray]]:
    """Per image: prediction ranks, ground truths, and their OKS matrix."""
    order = _rank_order(preds)
    by_image: dict[int, tuple[list[int], list[PoseAnnotation]]] = {}
    for rank, idx in enumerate(order):
        by_image.setdefault(preds[idx].image_id, ([], []))[0].append(rank)
    for gt in sorted(gts, key=lambda g: g.id):
        by_image.setdefault(gt.image_id, ([], []))[1].append(gt)

    tables = {}
    for image_id, (ranks, image_gts) in by_image.items():
        table = np.zeros((len(ranks), len(image_gts)))
        for row, rank in enumerate(ranks):
            pred = preds[order[rank]]
            for col, gt in enumerate(image_gts):
                table[row, col] = oks(pred.keypoints, gt.keypoints, gt.area, k)
        tables[image_id] = (ranks, image_gts, table)
    return tables


def _match_flags(tables, total_preds: int, threshold: float) -> np.ndarray:
    """Greedy matching per image; flags indexed by global prediction rank."""
    flags = np.zeros(total_preds, dtype=bool)
    for ranks, image_gts, table in tables.values():
        taken = [False] * len(image_gts)
        for row, rank in enumerate(ranks):
            best, best_oks = -1, threshold
            for col in range(len(image_gts)):
                if taken[col]:
                    continue
                value = table[row, col]
                # First acceptance needs >= threshold; upgrades need strictly
                # more, so ties keep the earliest annotation id.
                if value < best_oks or (best >= 0 and value == best_oks):
                    continue
                best, best_oks = col, value
            if best >= 0:
                taken[best] = True
                flags[rank] = True
    return flags


def _interpolated_ap(flags: np.ndarray, total_gts: int) -> float:
    """Area under the 101-point interpolated precision-recall curve."""
    if total_gts == 0:
        return 1.0 if len(flags) == 0 else 0.0
    if len(flags) == 0:
        return 0.0
    tp = np.cumsum(flags)
    precision = tp / np.arange(1, len(flags) + 1)
    recall = tp / total_gts
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_GRID, side="left")
    interpolated = np.where(idx < len(flags), envelope[np.minimum(idx, len(flags) - 1)], 0.0)
    return float(interpolated.mean())


def average_precision(preds: Sequence[PosePrediction],
                      gts: Sequence[PoseAnnotation],
                      k: Sequence[float],
                      thresholds: Sequence[float] = OKS_THRESHOLDS) -> EvalReport:
    """COCO-protocol AP per OKS threshold plus their mean.

    With no ground truths the AP is vacuous: 1.0 when there are also no
    predictions, 0.0 otherwise (every prediction is a false positive).
    """
    usable = _usable_gts(gts)
    tables = _oks_table(preds, usable, k)
    components = []
    for threshold in thresholds:
        flags = _match_flags(tables, len(preds), threshold)
        components.append((f"ap@{threshold:.2f}", _interpolated_ap(flags, len(usable))))
    return EvalReport(kind="oks_ap", components=tuple(components))


def pckh(preds: Sequence[KeypointSet], gts: Sequence[PoseAnnotation],
         threshold: float = 0.5,
         joint_names: Sequence[str] | None = None) -> EvalReport:
    """Per-joint PCKh rates over positionally paired predictions and truths.

    A joint counts as correct when its distance is <= threshold * head
    segment length (closed boundary).  Pairs whose annotation carries no head
    length are skipped and counted in the report.
    """
    if len(preds) != len(gts):
        raise DataError(f"got {len(preds)} predictions for {len(gts)} ground truths")
    if not preds:
        raise DataError("PCKh needs at least one sample")
    count = preds[0].K
    if joint_names is not None and len(joint_names) != count:
        raise DataError(f"need {count} joint names, got {len(joint_names)}")
    labels = list(joint_names) if joint_names is not None else [
        f"j{i}" for i in range(count)]

    correct = np.zeros(count)
    labeled = np.zeros(count)
    skipped = 0
    for pred, gt in zip(preds, gts):
        if pred.K != count or gt.keypoints.K != count:
            raise DataError("all samples must share one joint count")
        if gt.head_length is None:
            skipped += 1
            continue
        if gt.head_length <= 0.0:
            raise DataError("head segment length must be positive")
        dist = np.hypot(*(pred.xy - gt.keypoints.xy).T)
        mask = gt.keypoints.visibility > 0
        labeled += mask
        correct += mask & (dist <= threshold * gt.head_length)

    if not labeled.any():
        raise DataError("no labeled joints across the evaluated samples")
    components = tuple(
        (labels[i], float(correct[i] / labeled[i]))
        for i in range(count) if labeled[i] > 0)
    return EvalReport(kind="pckh", components=components, skipped=skipped)
