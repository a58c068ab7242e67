"""
Focal and global feature distillation.

Feature tensors are N x C x H x W; masks and spatial attention are N x H x W,
channel attention N x C. Sums run over C, H and W and are averaged over the
batch.
"""
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import Tensor, nn

from apps.core.exceptions import ShapeError
from apps.detectors.models import Annotation, FeaturePyramid
from apps.fgd.models import AttentionMaps, FeatureAdaptor, FGDConfig, FGDMasks, GcBlock


# ==================== MASKS ====================


def box_footprint(box: np.ndarray, level_shape: Tuple[int, int], stride: int) -> Tuple[int, int, int, int]:
    """Inclusive cell range (row0, row1, col0, col1) whose centres fall inside `box`.

    A box that contains no cell centre claims the cell holding its own centre.
    """
    height, width = level_shape
    x1, y1, x2, y2 = (float(v) for v in box)

    def span(lo: float, hi: float, size: int) -> Tuple[int, int]:
        first = math.ceil(lo / stride - 0.5)
        last = math.floor(hi / stride - 0.5)
        first, last = max(first, 0), min(last, size - 1)
        if last < first:
            centre = int(min(max((lo + hi) / 2.0 // stride, 0), size - 1))
            return centre, centre
        return first, last

    col0, col1 = span(x1, x2, width)
    row0, row1 = span(y1, y2, height)
    return row0, row1, col0, col1


def build_masks(annotation: Annotation, level_shape: Tuple[int, int], stride: int) -> FGDMasks:
    """Binary/scale masks of one image on one level; the smallest box wins overlaps"""
    height, width = level_shape
    binary = torch.zeros((height, width), dtype=torch.float32)
    scale = torch.zeros((height, width), dtype=torch.float32)
    if len(annotation):
        boxes = annotation.boxes
        areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
        # paint largest first so smaller boxes overwrite; the lowest index is painted last on ties
        for index in sorted(range(len(boxes)), key=lambda i: (areas[i], i), reverse=True):
            row0, row1, col0, col1 = box_footprint(boxes[index], level_shape, stride)
            footprint = (row1 - row0 + 1) * (col1 - col0 + 1)
            binary[row0:row1 + 1, col0:col1 + 1] = 1.0
            scale[row0:row1 + 1, col0:col1 + 1] = 1.0 / footprint
    inverse_binary = 1.0 - binary
    num_background = inverse_binary.sum()
    if num_background > 0:
        inverse_scale = inverse_binary / num_background
    else:
        inverse_scale = torch.zeros_like(inverse_binary)
    return FGDMasks(binary, scale, inverse_binary, inverse_scale)


def build_batch_masks(annotations: Sequence[Annotation], level_shape: Tuple[int, int], stride: int) -> FGDMasks:
    return FGDMasks.stack([build_masks(a, level_shape, stride) for a in annotations])


# ==================== ATTENTION ====================


def spatial_attention(feature: Tensor, temperature: float) -> Tensor:
    """H*W * softmax over pixels of the channel-mean absolute activation"""
    *batch, c, h, w = feature.shape
    logits = feature.abs().mean(dim=-3).reshape(*batch, h * w) / temperature
    return (h * w * logits.softmax(dim=-1)).reshape(*batch, h, w)


def channel_attention(feature: Tensor, temperature: float) -> Tensor:
    """C * softmax over channels of the pixel-mean absolute activation"""
    c = feature.shape[-3]
    logits = feature.abs().mean(dim=(-2, -1)) / temperature
    return c * logits.softmax(dim=-1)


def attention_maps(feature: Tensor, temperature: float) -> AttentionMaps:
    return AttentionMaps(spatial_attention(feature, temperature), channel_attention(feature, temperature))


# ==================== LOSSES ====================


def _check_pair(teacher: Tensor, student: Tensor) -> None:
    if teacher.shape != student.shape:
        raise ShapeError(
            f'Teacher feature {tuple(teacher.shape)} and student feature {tuple(student.shape)} differ; '
            'an adaptor is required'
        )
    if teacher.dim() != 4:
        raise ShapeError(f'Expected N x C x H x W features, got {tuple(teacher.shape)}')


def focal_distill_loss(teacher: Tensor, student: Tensor, masks: FGDMasks, config: FGDConfig) -> Tensor:
    """Attention-weighted foreground and background imitation plus attention L1.

    Teacher attention weights both branches; gradient reaches `student` only.
    """
    _check_pair(teacher, student)
    teacher = teacher.detach()
    masks = masks.to(device=student.device, dtype=student.dtype)
    n = student.shape[0]

    teacher_attention = attention_maps(teacher, config.temperature)
    student_attention = attention_maps(student, config.temperature)

    weight = teacher_attention.spatial.unsqueeze(1) * teacher_attention.channel[:, :, None, None]
    squared = (teacher - student) ** 2 * weight
    foreground = (squared * (masks.binary * masks.scale).unsqueeze(1)).sum() / n
    background = (squared * (masks.inverse_binary * masks.inverse_scale).unsqueeze(1)).sum() / n
    attention = (
        (teacher_attention.spatial - student_attention.spatial).abs().sum()
        + (teacher_attention.channel - student_attention.channel).abs().sum()
    ) / n
    return config.sigma_fg * foreground + config.beta_bg * background + config.gamma_attn * attention


def gc_block(feature: Tensor, params: GcBlock) -> Tensor:
    return params(feature)


def global_distill_loss(teacher: Tensor, student: Tensor, params: GcBlock, lambda_global: float) -> Tensor:
    """lambda * squared distance between GcBlock outputs of teacher and student"""
    _check_pair(teacher, student)
    if lambda_global == 0:
        return student.sum() * 0.0
    n = student.shape[0]
    difference = gc_block(teacher.detach(), params) - gc_block(student, params)
    return lambda_global * (difference ** 2).sum() / n


@dataclass
class FeatureLossValue:
    focal: Tensor
    global_: Tensor

    @property
    def total(self) -> Tensor:
        return self.focal + self.global_


def feature_distill_loss(teacher: FeaturePyramid, student: FeaturePyramid, annotations: Sequence[Annotation],
                         config: FGDConfig, gc_params: Sequence[GcBlock],
                         masks: Optional[List[FGDMasks]] = None) -> FeatureLossValue:
    """Focal + global terms summed over aligned pyramid levels"""
    if len(teacher) != len(student):
        raise ShapeError(f'Teacher pyramid has {len(teacher)} levels, student {len(student)}')
    if len(gc_params) != len(teacher):
        raise ShapeError(f'{len(gc_params)} GcBlocks for {len(teacher)} levels')
    if list(teacher.strides) != list(student.strides):
        raise ShapeError(f'Pyramid strides differ: {teacher.strides} vs {student.strides}')
    focal = student.features[0].sum() * 0.0
    global_ = focal.clone()
    for level, ((stride, t), s, params) in enumerate(zip(teacher.levels, student.features, gc_params)):
        level_masks = masks[level] if masks is not None else \
            build_batch_masks(annotations, tuple(t.shape[-2:]), stride)
        focal = focal + focal_distill_loss(t, s, level_masks, config)
        global_ = global_ + global_distill_loss(t, s, params, config.lambda_global)
    return FeatureLossValue(focal, global_)


class FGDLoss(nn.Module):
    """Owns the GcBlocks (and adaptor) of one distillation run"""

    def __init__(self, config: FGDConfig, teacher_channels: int, student_channels: int, num_levels: int):
        super().__init__()
        self.config = config
        self.gc_blocks = nn.ModuleList([GcBlock(teacher_channels) for _ in range(num_levels)])
        self.adaptor = None
        if teacher_channels != student_channels:
            self.adaptor = FeatureAdaptor(student_channels, teacher_channels, num_levels)

    def forward(self, teacher: FeaturePyramid, student: FeaturePyramid,
                annotations: Sequence[Annotation]) -> FeatureLossValue:
        if self.adaptor is not None:
            student = FeaturePyramid(list(student.strides), self.adaptor(student.features))
        return feature_distill_loss(teacher, student, annotations, self.config, list(self.gc_blocks))
