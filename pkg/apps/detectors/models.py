"""
Anchor-free per-pixel detector: config, data types and network modules.

A Detector is split into three parameter namespaces - `backbone`, `neck`
and `head` - and the knowledge packet relies on that partition.
"""
import copy
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from django.db import models
from torch import Tensor, nn

from apps.core.exceptions import ConfigurationError, ShapeError

PARTS = ('backbone', 'neck', 'head')
PRIOR_PROB = 0.01


class Tier(models.TextChoices):
    LARGE = 'large', 'Very large model'
    TUTOR = 'tutor', 'Tutor model'
    EDGE = 'edge', 'Edge-AI model'
    TOY = 'toy', 'Toy model'


# ==================== CONFIG ====================


@dataclass(frozen=True)
class DetectorConfig:
    """Detector architecture.

    Backbone stage k (0-based) has stride 2**(k+1); the neck consumes the
    last len(strides) stages, which must carry exactly those strides.
    """
    tier: str
    class_names: Tuple[str, ...]
    backbone_channel_plan: Tuple[int, ...]
    neck_channels: int
    strides: Tuple[int, ...] = (8, 16, 32)
    head_conv_depth: int = 1
    backbone_stage_depth: int = 1
    input_size: int = 96
    scale_ranges: Optional[Tuple[Tuple[float, float], ...]] = None

    def __post_init__(self):
        object.__setattr__(self, 'class_names', tuple(self.class_names))
        object.__setattr__(self, 'backbone_channel_plan', tuple(self.backbone_channel_plan))
        object.__setattr__(self, 'strides', tuple(self.strides))
        if self.scale_ranges is not None:
            object.__setattr__(self, 'scale_ranges', tuple(tuple(r) for r in self.scale_ranges))
        self.validate()

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def stage_strides(self) -> Tuple[int, ...]:
        return tuple(2 ** (k + 1) for k in range(len(self.backbone_channel_plan)))

    def validate(self) -> None:
        if self.tier not in Tier.values:
            raise ConfigurationError(f'Unknown tier {self.tier!r}')
        if self.num_classes < 1:
            raise ConfigurationError('num_classes must be >= 1')
        if len(set(self.class_names)) != self.num_classes:
            raise ConfigurationError('class_names must be unique')
        if not self.backbone_channel_plan or any(c <= 0 for c in self.backbone_channel_plan):
            raise ConfigurationError(
                f'Invalid backbone channel plan {list(self.backbone_channel_plan)}: channels must be positive'
            )
        if self.neck_channels <= 0 or self.head_conv_depth <= 0 or self.backbone_stage_depth <= 0:
            raise ConfigurationError('neck_channels, head_conv_depth and backbone_stage_depth must be positive')
        if not self.strides or any(b <= a for a, b in zip(self.strides, self.strides[1:])):
            raise ConfigurationError(f'Strides must be strictly increasing: {list(self.strides)}')
        if len(self.strides) > len(self.stage_strides) or \
                self.stage_strides[-len(self.strides):] != self.strides:
            raise ConfigurationError(
                f'Strides {list(self.strides)} do not match the last backbone stages '
                f'{list(self.stage_strides)}'
            )
        if self.input_size <= 0 or self.input_size % self.strides[-1] != 0:
            raise ConfigurationError(
                f'input_size {self.input_size} must be a positive multiple of {self.strides[-1]}'
            )
        if self.scale_ranges is not None:
            check_scale_ranges(self.scale_ranges, len(self.strides))

    def resolved_scale_ranges(self) -> Tuple[Tuple[float, float], ...]:
        return self.scale_ranges or default_scale_ranges(self.strides)

    def level_shapes(self, input_size: Optional[int] = None) -> List[Tuple[int, int]]:
        size = input_size or self.input_size
        return [(math.ceil(size / s), math.ceil(size / s)) for s in self.strides]

    def with_classes(self, class_names: Sequence[str]) -> 'DetectorConfig':
        return replace(self, class_names=tuple(class_names))


def default_scale_ranges(strides: Sequence[int]) -> Tuple[Tuple[float, float], ...]:
    """(lo, hi] per level; level i covers max-distance up to 2*stride_(i+1)"""
    bounds = [0.0] + [2.0 * s for s in strides[1:]] + [math.inf]
    return tuple((bounds[i], bounds[i + 1]) for i in range(len(strides)))


def check_scale_ranges(ranges: Sequence[Sequence[float]], num_levels: int) -> None:
    if len(ranges) != num_levels:
        raise ConfigurationError(f'Need {num_levels} scale ranges, got {len(ranges)}')
    if ranges[0][0] != 0 or ranges[-1][1] != math.inf:
        raise ConfigurationError('Scale ranges must start at 0 and end at infinity')
    for (lo, hi), (next_lo, _) in zip(ranges, list(ranges[1:]) + [(math.inf, None)]):
        if hi <= lo:
            raise ConfigurationError(f'Empty scale range ({lo}, {hi}]')
        if next_lo != math.inf and next_lo != hi:
            raise ConfigurationError('Scale ranges must be contiguous')


TIER_PRESETS: Dict[str, Dict] = {
    Tier.LARGE: dict(backbone_channel_plan=(16, 32, 64, 96, 128), neck_channels=48,
                     head_conv_depth=2, backbone_stage_depth=1),
    Tier.TUTOR: dict(backbone_channel_plan=(16, 24, 48, 64, 96), neck_channels=48,
                     head_conv_depth=2, backbone_stage_depth=1),
    Tier.EDGE: dict(backbone_channel_plan=(8, 16, 24, 32, 48), neck_channels=48,
                    head_conv_depth=1, backbone_stage_depth=1),
    Tier.TOY: dict(backbone_channel_plan=(8, 16, 24, 32, 48), neck_channels=32,
                   head_conv_depth=1, backbone_stage_depth=1),
}


def tier_config(tier: str, class_names: Sequence[str], **overrides) -> DetectorConfig:
    """DetectorConfig from a tier preset"""
    if tier not in TIER_PRESETS:
        raise ConfigurationError(f'Unknown tier {tier!r}')
    options = dict(TIER_PRESETS[tier])
    options.update(overrides)
    return DetectorConfig(tier=str(tier), class_names=tuple(class_names), **options)


# ==================== DATA TYPES ====================


@dataclass(eq=False)
class Annotation:
    """Ground truth of one image; labels index the owning category list"""
    image_id: str
    boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), dtype=np.float32))
    labels: np.ndarray = field(default_factory=lambda: np.zeros((0,), dtype=np.int64))
    difficult: Optional[np.ndarray] = None

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float32).reshape(-1, 4)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.difficult is None:
            self.difficult = np.zeros(len(self.labels), dtype=bool)
        self.difficult = np.asarray(self.difficult, dtype=bool).reshape(-1)
        if not (len(self.boxes) == len(self.labels) == len(self.difficult)):
            raise ShapeError(f'Annotation {self.image_id}: boxes/labels/difficult lengths differ')

    def __len__(self):
        return len(self.labels)

    def select(self, mask: np.ndarray) -> 'Annotation':
        mask = np.asarray(mask, dtype=bool)
        return Annotation(self.image_id, self.boxes[mask], self.labels[mask], self.difficult[mask])

    def relabel(self, mapping: Dict[int, int]) -> 'Annotation':
        """Map labels through `mapping`; labels missing from it are dropped"""
        keep = np.array([int(l) in mapping for l in self.labels], dtype=bool)
        kept = self.select(keep)
        kept.labels = np.array([mapping[int(l)] for l in kept.labels], dtype=np.int64)
        return kept

    def clipped(self, width: float, height: float) -> 'Annotation':
        boxes = self.boxes.copy()
        boxes[:, [0, 2]] = boxes[:, [0, 2]].clip(0, width)
        boxes[:, [1, 3]] = boxes[:, [1, 3]].clip(0, height)
        valid = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
        return Annotation(self.image_id, boxes[valid], self.labels[valid], self.difficult[valid])

    def flipped(self, width: float) -> 'Annotation':
        boxes = self.boxes.copy()
        boxes[:, [0, 2]] = width - self.boxes[:, [2, 0]]
        return Annotation(self.image_id, boxes, self.labels.copy(), self.difficult.copy())


@dataclass
class FeaturePyramid:
    """Neck outputs, finest level first; tensors are N x C x H x W"""
    strides: List[int]
    features: List[Tensor]

    def __len__(self):
        return len(self.features)

    def __getitem__(self, index: int) -> Tensor:
        return self.features[index]

    @property
    def levels(self) -> List[Tuple[int, Tensor]]:
        return list(zip(self.strides, self.features))

    @property
    def channels(self) -> int:
        return self.features[0].shape[1]

    def detach(self) -> 'FeaturePyramid':
        return FeaturePyramid(list(self.strides), [f.detach() for f in self.features])


@dataclass
class HeadOutputs:
    """Per-level head predictions; box regression is in stride units (l, t, r, b)"""
    class_logits: List[Tensor]
    centerness_logits: List[Tensor]
    box_regression: List[Tensor]

    def __len__(self):
        return len(self.class_logits)


@dataclass
class Detections:
    boxes: np.ndarray
    scores: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.scores)

    @classmethod
    def empty(cls) -> 'Detections':
        return cls(np.zeros((0, 4), dtype=np.float32), np.zeros((0,), dtype=np.float32),
                   np.zeros((0,), dtype=np.int64))


# ==================== NETWORK ====================


def _group_count(channels: int, limit: int = 8) -> int:
    for groups in range(min(limit, channels), 0, -1):
        if channels % groups == 0:
            return groups
    return 1


class ConvBNAct(nn.Sequential):
    def __init__(self, in_channels: int, out_channels: int, stride: int = 1):
        super().__init__(
            nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
        )


class Backbone(nn.Module):
    """Plain strided conv stages described by a channel plan"""

    def __init__(self, channel_plan: Sequence[int], stage_depth: int = 1):
        super().__init__()
        stages = []
        in_channels = 3
        for out_channels in channel_plan:
            layers = [ConvBNAct(in_channels, out_channels, stride=2)]
            layers += [ConvBNAct(out_channels, out_channels) for _ in range(stage_depth)]
            stages.append(nn.Sequential(*layers))
            in_channels = out_channels
        self.stages = nn.ModuleList(stages)

    def forward(self, x: Tensor) -> List[Tensor]:
        outputs = []
        for stage in self.stages:
            x = stage(x)
            outputs.append(x)
        return outputs


class Neck(nn.Module):
    """FPN: lateral 1x1, top-down nearest upsampling, 3x3 smoothing"""

    def __init__(self, in_channels: Sequence[int], out_channels: int):
        super().__init__()
        self.lateral = nn.ModuleList([nn.Conv2d(c, out_channels, 1) for c in in_channels])
        self.smooth = nn.ModuleList([nn.Conv2d(out_channels, out_channels, 3, padding=1) for _ in in_channels])
        for conv in list(self.lateral) + list(self.smooth):
            nn.init.kaiming_uniform_(conv.weight, a=1)
            nn.init.zeros_(conv.bias)

    def forward(self, features: Sequence[Tensor]) -> List[Tensor]:
        laterals = [conv(f) for conv, f in zip(self.lateral, features)]
        for i in range(len(laterals) - 1, 0, -1):
            laterals[i - 1] = laterals[i - 1] + F.interpolate(
                laterals[i], size=laterals[i - 1].shape[-2:], mode='nearest'
            )
        return [conv(f) for conv, f in zip(self.smooth, laterals)]


class Head(nn.Module):
    """Shared FCOS-style head: class tower, box tower, centerness on the box tower"""

    def __init__(self, channels: int, num_classes: int, depth: int):
        super().__init__()

        def tower():
            layers = []
            for _ in range(depth):
                layers += [
                    nn.Conv2d(channels, channels, 3, padding=1),
                    nn.GroupNorm(_group_count(channels), channels),
                    nn.ReLU(inplace=True),
                ]
            return nn.Sequential(*layers)

        self.cls_tower = tower()
        self.box_tower = tower()
        self.cls_score = nn.Conv2d(channels, num_classes, 3, padding=1)
        self.bbox_pred = nn.Conv2d(channels, 4, 3, padding=1)
        self.centerness = nn.Conv2d(channels, 1, 3, padding=1)
        for module in self.modules():
            if isinstance(module, nn.Conv2d):
                nn.init.normal_(module.weight, mean=0.0, std=0.01)
                nn.init.zeros_(module.bias)
        nn.init.constant_(self.cls_score.bias, prior_bias())

    def forward(self, features: Sequence[Tensor]) -> HeadOutputs:
        logits, centerness, regression = [], [], []
        for feature in features:
            logits.append(self.cls_score(self.cls_tower(feature)))
            box_feature = self.box_tower(feature)
            regression.append(F.relu(self.bbox_pred(box_feature)))
            centerness.append(self.centerness(box_feature))
        return HeadOutputs(logits, centerness, regression)


def prior_bias(prior_prob: float = PRIOR_PROB) -> float:
    return -math.log((1 - prior_prob) / prior_prob)


class Detector(nn.Module):
    """Backbone + neck + head; forward returns (FeaturePyramid, HeadOutputs)"""

    def __init__(self, config: DetectorConfig):
        super().__init__()
        self.config = config
        self.backbone = Backbone(config.backbone_channel_plan, config.backbone_stage_depth)
        used = config.backbone_channel_plan[-len(config.strides):]
        self.neck = Neck(used, config.neck_channels)
        self.head = Head(config.neck_channels, config.num_classes, config.head_conv_depth)

    @property
    def class_names(self) -> Tuple[str, ...]:
        return self.config.class_names

    def forward(self, images: Tensor) -> Tuple[FeaturePyramid, HeadOutputs]:
        if images.dim() != 4 or images.shape[1] != 3:
            raise ShapeError(f'Expected N x 3 x H x W images, got {tuple(images.shape)}')
        height, width = images.shape[-2:]
        if height == 0 or width == 0:
            raise ShapeError('Image resolution must be positive')
        max_stride = self.config.strides[-1]
        pad_h = (-height) % max_stride
        pad_w = (-width) % max_stride
        if pad_h or pad_w:
            images = F.pad(images, (0, pad_w, 0, pad_h))
        stages = self.backbone(images)
        pyramid = FeaturePyramid(list(self.config.strides), self.neck(stages[-len(self.config.strides):]))
        return pyramid, self.head(pyramid.features)

    def named_part_parameters(self, part: str) -> Iterator[Tuple[str, nn.Parameter]]:
        if part not in PARTS:
            raise ConfigurationError(f'Unknown model part {part!r}; expected one of {PARTS}')
        for name, parameter in getattr(self, part).named_parameters():
            yield f'{part}.{name}', parameter

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def clone(self) -> 'Detector':
        return copy.deepcopy(self)
