"""
Detection loss: sigmoid focal classification + GIoU regression + centerness BCE.
"""
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor
from torchvision.ops import generalized_box_iou_loss, sigmoid_focal_loss

from apps.core.exceptions import ShapeError
from apps.core.utils import ensure_finite
from apps.detectors.models import HeadOutputs
from apps.detectors.targets import BACKGROUND, TargetMaps

FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0


@dataclass
class LossValue:
    classification: Tensor
    regression: Tensor
    centerness: Tensor
    num_positives: int

    @property
    def total(self) -> Tensor:
        return self.classification + self.regression + self.centerness

    def as_dict(self) -> dict:
        return {
            'classification': float(self.classification.detach()),
            'regression': float(self.regression.detach()),
            'centerness': float(self.centerness.detach()),
            'total': float(self.total.detach()),
        }


def _flatten(tensors, channels: int) -> Tensor:
    # N x C x H x W per level -> (N*H*W summed over levels) x C
    return torch.cat([t.permute(0, 2, 3, 1).reshape(-1, channels) for t in tensors], dim=0)


def ltrb_to_boxes(distances: Tensor) -> Tensor:
    """Distances from a point to box sides -> box around the origin"""
    return torch.cat([-distances[:, :2], distances[:, 2:]], dim=1)


def detection_loss(outputs: HeadOutputs, targets: TargetMaps) -> LossValue:
    if len(outputs) != len(targets.labels):
        raise ShapeError(f'{len(outputs)} head levels but {len(targets.labels)} target levels')
    for logits, labels in zip(outputs.class_logits, targets.labels):
        if logits.shape[0] != labels.shape[0] or logits.shape[-2:] != labels.shape[-2:]:
            raise ShapeError(f'Head level {tuple(logits.shape)} vs targets {tuple(labels.shape)}')

    num_classes = outputs.class_logits[0].shape[1]
    logits = ensure_finite(_flatten(outputs.class_logits, num_classes), 'class logits')
    centerness = ensure_finite(_flatten(outputs.centerness_logits, 1).squeeze(1), 'centerness logits')
    regression = ensure_finite(_flatten(outputs.box_regression, 4), 'box regression')

    labels = torch.cat([t.reshape(-1) for t in targets.labels]).to(logits.device)
    centerness_target = torch.cat([t.reshape(-1) for t in targets.centerness]).to(logits.device)
    regression_target = torch.cat(
        [t.permute(0, 2, 3, 1).reshape(-1, 4) for t in targets.regression]
    ).to(logits.device)

    positive = labels != BACKGROUND
    num_positives = int(positive.sum().item())

    class_target = torch.zeros_like(logits)
    class_target[positive, labels[positive]] = 1.0
    classification = sigmoid_focal_loss(
        logits, class_target, alpha=FOCAL_ALPHA, gamma=FOCAL_GAMMA, reduction='sum'
    ) / max(1, num_positives)

    if num_positives == 0:
        zero = logits.sum() * 0.0
        return LossValue(classification, zero, zero, 0)

    pred_boxes = ltrb_to_boxes(regression[positive])
    target_boxes = ltrb_to_boxes(regression_target[positive])
    box_loss = generalized_box_iou_loss(pred_boxes, target_boxes, reduction='sum') / num_positives
    center_loss = F.binary_cross_entropy_with_logits(
        centerness[positive], centerness_target[positive], reduction='sum'
    ) / num_positives
    return LossValue(classification, box_loss, center_loss, num_positives)
