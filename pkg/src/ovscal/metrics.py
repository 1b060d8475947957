"""Confusion-count accumulation, vanilla IoU/mIoU, and hierarchy-aware IoU.

The hierarchy-aware variant credits pixels predicted as a class's synonyms
or parents (the related set Q), tempered by a balance factor equal to the
accuracy of those related-class predictions, so a model that spams parent
labels gains nothing.

Pixels with ground truth IGNORE are excluded (tallied separately). Pixels
*predicted* IGNORE under a valid ground truth carry no prediction: they are
kept out of the confusion matrix but still count toward each class's
ground-truth total.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from .errors import ConfigError, ShapeError

IGNORE = 65535

# Sentinel for classes with no predicted or ground-truth pixels.
NOT_PRESENT: Optional[float] = None


@dataclass
class AssociationMatrix:
    """relations[q][r] is True iff r is a synonym or parent of q."""

    relations: np.ndarray  # (K, K) bool

    def __post_init__(self):
        rel = np.asarray(self.relations, dtype=bool)
        if rel.ndim != 2 or rel.shape[0] != rel.shape[1]:
            raise ConfigError(f"relations must be square, got {rel.shape}")
        if rel.diagonal().any():
            raise ConfigError("association matrix must be irreflexive")
        self.relations = rel

    @property
    def num_classes(self) -> int:
        return self.relations.shape[0]

    @classmethod
    def empty(cls, num_classes: int) -> "AssociationMatrix":
        return cls(np.zeros((num_classes, num_classes), dtype=bool))

    @classmethod
    def from_mapping(cls, mapping: dict, num_classes: int) -> "AssociationMatrix":
        rel = np.zeros((num_classes, num_classes), dtype=bool)
        for key, related in mapping.items():
            q = int(key)
            if not 0 <= q < num_classes:
                raise ConfigError(f"class id {q} out of range [0, {num_classes})")
            for r in related:
                r = int(r)
                if not 0 <= r < num_classes:
                    raise ConfigError(f"related id {r} out of range [0, {num_classes})")
                if r == q:
                    raise ConfigError(f"class {q} related to itself")
                rel[q, r] = True
        return cls(rel)

    def related(self, q: int) -> np.ndarray:
        return np.flatnonzero(self.relations[q])


def _zero_vec(k: int) -> np.ndarray:
    return np.zeros(k, dtype=np.int64)


@dataclass
class ConfusionCounts:
    """counts[p][g] = pixels predicted p with ground truth g."""

    counts: np.ndarray  # (K, K) int64
    pred_ignored: np.ndarray = None  # (K,) valid-gt pixels with no prediction
    total_ignored: int = 0

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ShapeError(f"counts must be KxK, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise ShapeError("counts must be nonnegative")
        if self.pred_ignored is None:
            self.pred_ignored = _zero_vec(self.counts.shape[0])
        self.pred_ignored = np.asarray(self.pred_ignored, dtype=np.int64)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @classmethod
    def zeros(cls, num_classes: int) -> "ConfusionCounts":
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))

    def merge(self, other: "ConfusionCounts") -> "ConfusionCounts":
        if other.num_classes != self.num_classes:
            raise ShapeError("cannot merge counts with different class counts")
        return ConfusionCounts(
            counts=self.counts + other.counts,
            pred_ignored=self.pred_ignored + other.pred_ignored,
            total_ignored=self.total_ignored + other.total_ignored,
        )

    __add__ = merge

    def predicted_total(self, q: int) -> int:
        return int(self.counts[q].sum())

    def ground_truth_total(self, q: int) -> int:
        return int(self.counts[:, q].sum() + self.pred_ignored[q])


def accumulate_confusion(
    pred: np.ndarray, gt: np.ndarray, num_classes: int
) -> ConfusionCounts:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred {pred.shape} and gt {gt.shape} differ")
    for name, arr in (("pred", pred), ("gt", gt)):
        bad = (arr >= num_classes) & (arr != IGNORE)
        if bad.any():
            raise ShapeError(f"{name} contains labels >= {num_classes}")

    valid = gt != IGNORE
    total_ignored = int((~valid).sum())
    p = pred[valid].astype(np.int64)
    g = gt[valid].astype(np.int64)
    predicted = p != IGNORE
    flat = p[predicted] * num_classes + g[predicted]
    counts = np.bincount(flat, minlength=num_classes * num_classes).reshape(
        num_classes, num_classes
    )
    pred_ignored = np.bincount(g[~predicted], minlength=num_classes)
    return ConfusionCounts(
        counts=counts, pred_ignored=pred_ignored, total_ignored=total_ignored
    )


def iou(counts: ConfusionCounts, q: int) -> Optional[float]:
    inter = int(counts.counts[q, q])
    denom = counts.predicted_total(q) + counts.ground_truth_total(q) - inter
    if denom == 0:
        return NOT_PRESENT
    return inter / denom


def balance_factor(
    counts: ConfusionCounts, assoc: AssociationMatrix, q: int
) -> float:
    """Accuracy of the related-class predictions for q: (related preds on q
    + related preds on related gt) / all related preds, 0 if none exist."""
    if assoc.num_classes != counts.num_classes:
        raise ShapeError("association matrix and counts disagree on K")
    related = assoc.related(q)
    if related.size == 0:
        return 0.0
    p_Q = int(counts.counts[related].sum())
    if p_Q == 0:
        return 0.0
    pq_gq = int(counts.counts[related, q].sum())
    pq_gQ = int(counts.counts[np.ix_(related, related)].sum())
    return (pq_gq + pq_gQ) / p_Q


def sg_iou(
    counts: ConfusionCounts, assoc: AssociationMatrix, q: int
) -> Optional[float]:
    """IoU crediting related-class predictions, scaled by the balance factor."""
    if assoc.num_classes != counts.num_classes:
        raise ShapeError("association matrix and counts disagree on K")
    inter = int(counts.counts[q, q])
    p_q = counts.predicted_total(q)
    g_q = counts.ground_truth_total(q)
    denom = p_q + g_q - inter
    if denom == 0:
        return NOT_PRESENT
    related = assoc.related(q)
    if related.size == 0:
        return inter / denom
    pq_gq = int(counts.counts[related, q].sum())
    return (inter + pq_gq * balance_factor(counts, assoc, q)) / denom


def load_association(path: str | Path, num_classes: int) -> AssociationMatrix:
    """Read a JSON object mapping class-id strings to arrays of related ids."""
    with open(path) as fh:
        mapping = json.load(fh)
    if not isinstance(mapping, dict):
        raise ConfigError("association file must be a JSON object")
    return AssociationMatrix.from_mapping(mapping, num_classes)


def report(
    counts: ConfusionCounts,
    assoc: AssociationMatrix,
    class_names: Optional[List[str]] = None,
    gt_present_only: bool = False,
) -> dict:
    """Per-class IoU / hierarchy-aware IoU plus their means over present classes."""
    k = counts.num_classes
    if class_names is None:
        class_names = [f"class_{i}" for i in range(k)]
    per_class = []
    ious, sg_ious = [], []
    for q in range(k):
        v_iou = iou(counts, q)
        v_sg = sg_iou(counts, assoc, q)
        present = v_iou is not None
        if gt_present_only:
            present = present and counts.ground_truth_total(q) > 0
        per_class.append(
            {
                "id": q,
                "name": class_names[q],
                "iou": v_iou,
                "sg_iou": v_sg,
                "present": present,
            }
        )
        if present:
            ious.append(v_iou)
            sg_ious.append(v_sg)
    return {
        "per_class": per_class,
        "miou": float(np.mean(ious)) if ious else None,
        "msg_iou": float(np.mean(sg_ious)) if sg_ious else None,
        "ignored_pixels": counts.total_ignored,
    }
