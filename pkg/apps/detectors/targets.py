"""
Per-pixel target assignment for the anchor-free head.

A location is the centre of a feature cell, ((j + 0.5) * stride,
(i + 0.5) * stride). It is positive for a box when it lies strictly inside
the box and the largest of its four distances falls in the level's
(lo, hi] scale range. Competing boxes resolve to the smallest area, then
the lowest index.
"""
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import torch
from torch import Tensor

from apps.detectors.models import Annotation, check_scale_ranges

BACKGROUND = -1


@dataclass
class TargetMaps:
    """Batched per-level targets; labels use BACKGROUND for negatives"""
    labels: List[Tensor]
    centerness: List[Tensor]
    regression: List[Tensor]

    @property
    def num_positives(self) -> int:
        return int(sum((lvl != BACKGROUND).sum().item() for lvl in self.labels))

    def to(self, device) -> 'TargetMaps':
        return TargetMaps(
            [t.to(device) for t in self.labels],
            [t.to(device) for t in self.centerness],
            [t.to(device) for t in self.regression],
        )


def cell_centers(shape: Tuple[int, int], stride: int) -> Tuple[np.ndarray, np.ndarray]:
    height, width = shape
    ys = (np.arange(height, dtype=np.float64) + 0.5) * stride
    xs = (np.arange(width, dtype=np.float64) + 0.5) * stride
    return np.meshgrid(xs, ys)


def assign_level(annotation: Annotation, shape: Tuple[int, int], stride: int,
                 scale_range: Tuple[float, float]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Targets of one image on one level: labels (H, W), centerness (H, W), regression (4, H, W)"""
    height, width = shape
    labels = np.full((height, width), BACKGROUND, dtype=np.int64)
    centerness = np.zeros((height, width), dtype=np.float32)
    regression = np.zeros((4, height, width), dtype=np.float32)
    if len(annotation) == 0:
        return labels, centerness, regression

    xs, ys = cell_centers(shape, stride)
    boxes = annotation.boxes.astype(np.float64)
    # distances (H, W, M, 4)
    left = xs[..., None] - boxes[:, 0]
    top = ys[..., None] - boxes[:, 1]
    right = boxes[:, 2] - xs[..., None]
    bottom = boxes[:, 3] - ys[..., None]
    distances = np.stack([left, top, right, bottom], axis=-1)

    inside = distances.min(axis=-1) > 0
    max_distance = distances.max(axis=-1)
    lo, hi = scale_range
    in_range = (max_distance > lo) & (max_distance <= hi)
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    candidate_area = np.where(inside & in_range, areas[None, None, :], np.inf)

    matched = candidate_area.argmin(axis=-1)
    positive = np.isfinite(candidate_area.min(axis=-1))
    if not positive.any():
        return labels, centerness, regression

    rows, cols = np.nonzero(positive)
    chosen = matched[rows, cols]
    labels[rows, cols] = annotation.labels[chosen]
    picked = distances[rows, cols, chosen]
    regression[:, rows, cols] = (picked / stride).T.astype(np.float32)
    lr = picked[:, [0, 2]]
    tb = picked[:, [1, 3]]
    centerness[rows, cols] = np.sqrt(
        (lr.min(axis=1) / lr.max(axis=1)) * (tb.min(axis=1) / tb.max(axis=1))
    ).astype(np.float32)
    return labels, centerness, regression


def assign_targets(annotations: Sequence[Annotation], pyramid_shapes: Sequence[Tuple[int, int]],
                   strides: Sequence[int], scale_ranges: Sequence[Tuple[float, float]]) -> TargetMaps:
    check_scale_ranges(scale_ranges, len(strides))
    labels, centerness, regression = [], [], []
    for shape, stride, scale_range in zip(pyramid_shapes, strides, scale_ranges):
        per_image = [assign_level(a, shape, stride, scale_range) for a in annotations]
        labels.append(torch.from_numpy(np.stack([p[0] for p in per_image])))
        centerness.append(torch.from_numpy(np.stack([p[1] for p in per_image])))
        regression.append(torch.from_numpy(np.stack([p[2] for p in per_image])))
    return TargetMaps(labels, centerness, regression)
