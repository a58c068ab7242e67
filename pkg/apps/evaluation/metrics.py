"""
Detection metrics: greedy matching, average precision and F1.
"""
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torchvision.ops import box_iou

from apps.core.utils import config_digest, to_jsonable
from apps.detectors.models import Annotation, Detections
from apps.evaluation.models import EvalConfig, EvalReport, Interpolation

TP = 1
FP = 0
IGNORED = -1


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    if len(boxes_a) == 0 or len(boxes_b) == 0:
        return np.zeros((len(boxes_a), len(boxes_b)), dtype=np.float64)
    a = torch.from_numpy(np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4))
    b = torch.from_numpy(np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4))
    return box_iou(a, b).numpy()


def match_detections(boxes: np.ndarray, labels: np.ndarray, gt_boxes: np.ndarray, gt_labels: np.ndarray,
                     iou_threshold: float, gt_difficult: Optional[np.ndarray] = None) -> np.ndarray:
    """TP/FP/IGNORED flag per detection of one image.

    Detections are taken in the given order (descending score). Each one
    claims the highest-IoU unmatched ground truth of its class with
    IoU >= threshold. Unmatched detections overlapping a difficult box that
    much are IGNORED.
    """
    labels = np.asarray(labels).reshape(-1)
    gt_labels = np.asarray(gt_labels).reshape(-1)
    if gt_difficult is None:
        gt_difficult = np.zeros(len(gt_labels), dtype=bool)
    ious = iou_matrix(boxes, gt_boxes)
    matched = np.zeros(len(gt_labels), dtype=bool)
    flags = np.full(len(labels), FP, dtype=np.int8)
    for d, label in enumerate(labels):
        same_class = gt_labels == label
        candidates = same_class & ~matched & ~gt_difficult & (ious[d] >= iou_threshold)
        if candidates.any():
            best = int(np.argmax(np.where(candidates, ious[d], -1.0)))
            matched[best] = True
            flags[d] = TP
        elif (same_class & gt_difficult & (ious[d] >= iou_threshold)).any():
            flags[d] = IGNORED
    return flags


def average_precision(flags: Sequence[int], num_gt: int,
                      interpolation: str = Interpolation.ALL_POINT) -> Optional[float]:
    """Area under the precision/recall curve of ranked TP/FP flags.

    None when there is nothing to score (no ground truth, no detections).
    """
    flags = np.asarray([f for f in flags if f != IGNORED], dtype=np.float64)
    if num_gt == 0:
        return None if len(flags) == 0 else 0.0
    if len(flags) == 0:
        return 0.0
    tp = np.cumsum(flags == TP)
    fp = np.cumsum(flags == FP)
    recall = tp / float(num_gt)
    precision = tp / np.maximum(tp + fp, np.finfo(np.float64).eps)

    if interpolation == Interpolation.ELEVEN_POINT:
        ap = 0.0
        for t in np.arange(0.0, 1.1, 0.1):
            p = np.max(precision[recall >= t]) if np.any(recall >= t) else 0.0
            ap += p / 11.0
        return float(ap)

    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(mpre.size - 1, 0, -1):
        mpre[i - 1] = max(mpre[i - 1], mpre[i])
    changes = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[changes + 1] - mrec[changes]) * mpre[changes + 1]))


def f1(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _sorted(detections: Detections) -> Detections:
    order = np.argsort(-np.asarray(detections.scores, dtype=np.float64), kind='stable')
    return Detections(detections.boxes[order], detections.scores[order], detections.labels[order])


def evaluate_detections(detections: Sequence[Detections], annotations: Sequence[Annotation],
                        category_names: Sequence[str], config: EvalConfig,
                        dataset_digest: str = '') -> EvalReport:
    """Report from per-image detections; labels index `category_names`"""
    category_names = list(category_names)
    num_gt = {name: 0 for name in category_names}
    ranked: Dict[int, List[Tuple[float, int, int, int]]] = {c: [] for c in range(len(category_names))}
    total_tp = total_fp = 0

    for image_index, (dets, annotation) in enumerate(zip(detections, annotations)):
        dets = _sorted(dets)
        for label, difficult in zip(annotation.labels, annotation.difficult):
            if not difficult:
                num_gt[category_names[label]] += 1
        flags = match_detections(dets.boxes, dets.labels, annotation.boxes, annotation.labels,
                                 config.iou_threshold, annotation.difficult)
        for det_index, (score, label, flag) in enumerate(zip(dets.scores, dets.labels, flags)):
            ranked[int(label)].append((-float(score), image_index, det_index, int(flag)))
            if score >= config.score_threshold:
                total_tp += int(flag == TP)
                total_fp += int(flag == FP)

    per_class_ap, excluded = {}, []
    for label, name in enumerate(category_names):
        entries = sorted(ranked[label])
        ap = average_precision([e[3] for e in entries], num_gt[name], config.ap_interpolation)
        if ap is None:
            excluded.append(name)
        else:
            per_class_ap[name] = ap

    total_gt = sum(num_gt.values())
    precision = total_tp / (total_tp + total_fp) if total_tp + total_fp else 0.0
    recall = total_tp / total_gt if total_gt else 0.0
    mean_ap = float(np.mean(list(per_class_ap.values()))) if per_class_ap else 0.0
    return EvalReport(
        per_class_ap=per_class_ap,
        mAP=mean_ap,
        precision=float(precision),
        recall=float(recall),
        f1=f1(float(precision), float(recall)),
        config_digest=config_digest(config),
        dataset_digest=dataset_digest,
        num_ground_truth=num_gt,
        excluded_categories=excluded,
        config=to_jsonable(config),
    )
