"""
Inference: decode per-pixel predictions, score, and run per-class greedy NMS.
"""
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import Tensor
from torchvision import ops

from apps.core.exceptions import ConfigurationError
from apps.detectors.models import Detections, Detector, HeadOutputs
from apps.detectors.targets import cell_centers

DEFAULT_SCORE_THRESH = 0.05
DEFAULT_NMS_IOU = 0.6
DEFAULT_MAX_DETS = 100
TOPK_PER_LEVEL = 1000


def nms(boxes: Tensor, scores: Tensor, iou_threshold: float) -> Tensor:
    """Greedy NMS; a box survives only if its IoU with every kept box is < threshold"""
    return ops.nms(boxes, scores, math.nextafter(iou_threshold, 0.0))


def batched_nms(boxes: Tensor, scores: Tensor, labels: Tensor, iou_threshold: float) -> Tensor:
    """Per-class NMS; result sorted by descending score"""
    return ops.batched_nms(boxes, scores, labels, math.nextafter(iou_threshold, 0.0))


def decode_image(outputs: HeadOutputs, index: int, strides: Sequence[int],
                 image_size: Tuple[int, int], score_thresh: float) -> Tuple[Tensor, Tensor, Tensor]:
    """Candidate boxes, scores and labels of one batch element before NMS"""
    height, width = image_size
    all_boxes, all_scores, all_labels = [], [], []
    for logits, ctr, reg, stride in zip(outputs.class_logits, outputs.centerness_logits,
                                        outputs.box_regression, strides):
        num_classes = logits.shape[1]
        shape = tuple(logits.shape[-2:])
        xs, ys = cell_centers(shape, stride)
        points = torch.from_numpy(np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1)).float()

        probs = logits[index].sigmoid().permute(1, 2, 0).reshape(-1, num_classes)
        centerness = ctr[index].sigmoid().reshape(-1)
        scores = torch.sqrt(probs * centerness[:, None]).reshape(-1)
        distances = reg[index].permute(1, 2, 0).reshape(-1, 4) * stride

        candidate = scores > score_thresh
        scores = scores[candidate]
        flat = torch.nonzero(candidate).squeeze(1)
        if scores.numel() > TOPK_PER_LEVEL:
            scores, top = scores.topk(TOPK_PER_LEVEL)
            flat = flat[top]
        locations = flat // num_classes
        labels = flat % num_classes
        d = distances[locations]
        p = points[locations]
        boxes = torch.stack([p[:, 0] - d[:, 0], p[:, 1] - d[:, 1],
                             p[:, 0] + d[:, 2], p[:, 1] + d[:, 3]], dim=1)
        boxes[:, [0, 2]] = boxes[:, [0, 2]].clamp(0, width)
        boxes[:, [1, 3]] = boxes[:, [1, 3]].clamp(0, height)
        all_boxes.append(boxes)
        all_scores.append(scores)
        all_labels.append(labels)
    boxes = torch.cat(all_boxes)
    scores = torch.cat(all_scores)
    labels = torch.cat(all_labels)
    valid = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
    return boxes[valid], scores[valid], labels[valid]


def check_thresholds(score_thresh: float, nms_iou: float) -> None:
    if not 0.0 <= score_thresh <= 1.0:
        raise ConfigurationError(f'score_thresh must be in [0, 1], got {score_thresh}')
    if not 0.0 < nms_iou < 1.0:
        raise ConfigurationError(f'nms_iou must be in (0, 1), got {nms_iou}')


@torch.no_grad()
def infer_batch(detector: Detector, images: Tensor, score_thresh: float = DEFAULT_SCORE_THRESH,
                nms_iou: float = DEFAULT_NMS_IOU, max_dets: int = DEFAULT_MAX_DETS,
                image_sizes: Optional[List[Tuple[int, int]]] = None) -> List[Detections]:
    check_thresholds(score_thresh, nms_iou)
    was_training = detector.training
    detector.eval()
    try:
        device = next(detector.parameters()).device
        _, outputs = detector(images.to(device))
    finally:
        detector.train(was_training)
    outputs = HeadOutputs(
        [t.float().cpu() for t in outputs.class_logits],
        [t.float().cpu() for t in outputs.centerness_logits],
        [t.float().cpu() for t in outputs.box_regression],
    )
    sizes = image_sizes or [tuple(images.shape[-2:])] * images.shape[0]
    results = []
    for index, size in enumerate(sizes):
        boxes, scores, labels = decode_image(outputs, index, detector.config.strides, size, score_thresh)
        keep = batched_nms(boxes, scores, labels, nms_iou)[:max_dets]
        results.append(Detections(
            boxes=boxes[keep].numpy().astype(np.float32),
            scores=scores[keep].numpy().astype(np.float32),
            labels=labels[keep].numpy().astype(np.int64),
        ))
    return results


def infer(detector: Detector, image: Tensor, score_thresh: float = DEFAULT_SCORE_THRESH,
          nms_iou: float = DEFAULT_NMS_IOU, max_dets: int = DEFAULT_MAX_DETS) -> Detections:
    """Detections for one C x H x W image"""
    return infer_batch(detector, image.unsqueeze(0), score_thresh, nms_iou, max_dets)[0]
