"""
Evaluation config and report types
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from django.db import models

from apps.core.exceptions import ConfigurationError
from apps.core.utils import config_digest, to_jsonable


class Interpolation(models.TextChoices):
    ALL_POINT = 'all_point', 'All-point'
    ELEVEN_POINT = 'eleven_point', 'Eleven-point'


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.5
    score_threshold: float = 0.3
    ap_interpolation: str = Interpolation.ALL_POINT
    infer_score_threshold: float = 0.05
    nms_iou: float = 0.6
    max_dets: int = 100
    batch_size: int = 16

    def __post_init__(self):
        if not 0 < self.iou_threshold < 1:
            raise ConfigurationError(f'iou_threshold must be in (0, 1), got {self.iou_threshold}')
        if not 0 <= self.score_threshold <= 1:
            raise ConfigurationError(f'score_threshold must be in [0, 1], got {self.score_threshold}')
        if self.ap_interpolation not in Interpolation.values:
            raise ConfigurationError(f'Unknown AP interpolation {self.ap_interpolation!r}')
        if self.max_dets < 1 or self.batch_size < 1:
            raise ConfigurationError('max_dets and batch_size must be positive')

    @property
    def digest(self) -> str:
        return config_digest(self)


@dataclass
class EvalReport:
    """Per-class AP and micro P/R/F1 of one model on one dataset.

    Categories with no ground truth and no detections are listed in
    `excluded_categories` and left out of `per_class_ap` and the mAP.
    """
    per_class_ap: Dict[str, float]
    mAP: float
    precision: float
    recall: float
    f1: float
    config_digest: str
    dataset_digest: str
    num_ground_truth: Dict[str, int] = field(default_factory=dict)
    excluded_categories: List[str] = field(default_factory=list)
    config: Dict[str, Any] = field(default_factory=dict)
    model: Optional[str] = None

    def ap(self, category: str) -> float:
        """AP of `category`; excluded categories count as 0"""
        return self.per_class_ap.get(category, 0.0)

    def mean_ap(self, categories) -> float:
        values = [self.per_class_ap[c] for c in categories if c in self.per_class_ap]
        return sum(values) / len(values) if values else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return to_jsonable(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'EvalReport':
        return cls(**data)
