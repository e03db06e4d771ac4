"""IOU matching of detected instances against ground truth, and P/R/F."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PolygonScene, rasterize_polygon


def _ratio(a, b):
    return a / b if b else 0.0


@dataclass(frozen=True)
class EvalReport:
    tp: int
    fp: int
    fn: int
    iou_threshold: float = 0.5

    @property
    def precision(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f_measure(self) -> float:
        p, r = self.precision, self.recall
        return _ratio(2 * p * r, p + r)

    def __add__(self, other: "EvalReport") -> "EvalReport":
        if self.iou_threshold != other.iou_threshold:
            raise ValueError("cannot combine reports made at different IOU thresholds")
        return EvalReport(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn,
                          self.iou_threshold)

    def summary(self) -> str:
        return (f"P={self.precision:.6f} R={self.recall:.6f} F={self.f_measure:.6f} "
                f"TP={self.tp} FP={self.fp} FN={self.fn}")


def iou_matrix(detections: np.ndarray, gt_masks) -> tuple[np.ndarray, np.ndarray]:
    """IOU of every detection label against every ground-truth mask.

    Returns ``(det_ids, ious)`` where ``ious[i, j]`` compares detection
    ``det_ids[i]`` with ``gt_masks[j]``.
    """
    detections = np.asarray(detections)
    det_ids = np.unique(detections)
    det_ids = det_ids[det_ids != 0]
    index = np.zeros(int(detections.max(initial=0)) + 1, dtype=np.int64)
    index[det_ids] = np.arange(1, det_ids.size + 1)
    dense = index[detections]
    det_area = np.bincount(dense.ravel(), minlength=det_ids.size + 1)[1:]
    ious = np.zeros((det_ids.size, len(gt_masks)))
    for j, gm in enumerate(gt_masks):
        gm = np.asarray(gm, dtype=bool)
        if gm.shape != detections.shape:
            raise ValueError(f"ground-truth mask {gm.shape} does not match detections {detections.shape}")
        inter = np.bincount(dense[gm], minlength=det_ids.size + 1)[1:]
        union = det_area + np.count_nonzero(gm) - inter
        ious[:, j] = np.where(union > 0, inter / np.maximum(union, 1), 0.0)
    return det_ids, ious


def greedy_match(ious: np.ndarray, iou_threshold: float):
    """One-to-one matching, best IOU first; ties by lower detection then gt index.

    Only pairs with IOU strictly above the threshold are eligible.
    """
    di, gi = np.nonzero(ious > iou_threshold)
    order = np.lexsort((gi, di, -ious[di, gi]))
    used_d, used_g, pairs = set(), set(), []
    for k in order:
        d, g = int(di[k]), int(gi[k])
        if d in used_d or g in used_g:
            continue
        used_d.add(d)
        used_g.add(g)
        pairs.append((d, g, float(ious[d, g])))
    return pairs


def match_masks(detections: np.ndarray, gt_masks, iou_threshold: float = 0.5):
    """Match a label map against ground-truth masks; returns ``(report, pairs)``.

    ``pairs`` lists ``(detection_label, gt_index, iou)`` for every match.
    """
    det_ids, ious = iou_matrix(detections, gt_masks)
    pairs = greedy_match(ious, iou_threshold)
    tp = len(pairs)
    report = EvalReport(tp, det_ids.size - tp, len(gt_masks) - tp, iou_threshold)
    return report, [(int(det_ids[d]), g, iou) for d, g, iou in pairs]


def match_and_score(detections: np.ndarray, truth: PolygonScene,
                    iou_threshold: float = 0.5) -> EvalReport:
    """Score a detection label map against annotated polygons.

    Each polygon is rasterized on its own, so overlapping annotations keep
    their full extent.
    """
    detections = np.asarray(detections)
    if detections.shape != truth.shape:
        raise ValueError(f"detections {detections.shape} do not match scene {truth.shape}")
    masks = [rasterize_polygon(p, truth.width, truth.height) for p in truth.instances]
    return match_masks(detections, masks, iou_threshold)[0]
