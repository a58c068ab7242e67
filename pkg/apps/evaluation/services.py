"""Evaluation service layer"""
import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import torch

from apps.core.exceptions import DatasetError
from apps.core.services import BaseService
from apps.core.utils import read_json, write_json
from apps.datasets.loaders import to_tensor
from apps.datasets.models import DetectionDataset
from apps.detectors.inference import infer_batch
from apps.detectors.models import Detections, Detector
from apps.evaluation.metrics import evaluate_detections
from apps.evaluation.models import EvalConfig, EvalReport
from apps.evaluation.serializers import EvalConfigSerializer

logger = logging.getLogger(__name__)


def relabel_detections(detections: Detections, model_classes, category_names) -> Detections:
    """Map model class indices onto dataset categories; unknown classes are dropped"""
    lookup = {i: category_names.index(name) for i, name in enumerate(model_classes) if name in category_names}
    keep = np.array([int(l) in lookup for l in detections.labels], dtype=bool)
    labels = np.array([lookup[int(l)] for l in detections.labels[keep]], dtype=np.int64)
    return Detections(detections.boxes[keep], detections.scores[keep], labels)


def predict(model: Detector, dataset: DetectionDataset, config: EvalConfig) -> List[Detections]:
    """Detections per dataset item, labels in dataset category order"""
    category_names = list(dataset.category_names)
    results = []
    items = dataset.items
    for start in range(0, len(items), config.batch_size):
        chunk = items[start:start + config.batch_size]
        tensors = [to_tensor(item.load_image()) for item in chunk]
        if len({tuple(t.shape) for t in tensors}) == 1:
            batch = infer_batch(model, torch.stack(tensors), config.infer_score_threshold,
                                config.nms_iou, config.max_dets)
        else:
            batch = [infer_batch(model, t.unsqueeze(0), config.infer_score_threshold,
                                 config.nms_iou, config.max_dets)[0] for t in tensors]
        results += [relabel_detections(d, model.class_names, category_names) for d in batch]
    return results


def evaluate(model: Detector, dataset: DetectionDataset, config: Optional[EvalConfig] = None) -> EvalReport:
    config = config or EvalConfig()
    if len(dataset) == 0:
        raise DatasetError('Cannot evaluate on an empty dataset')
    detections = predict(model, dataset, config)
    report = evaluate_detections(detections, dataset.annotations, dataset.category_names, config, dataset.digest)
    logger.info(
        f'Evaluated {model.config.tier} model on {len(dataset)} images: mAP {report.mAP:.3f}, '
        f'P {report.precision:.3f}, R {report.recall:.3f}, F1 {report.f1:.3f}'
    )
    return report


def write_report(report: EvalReport, path: Union[str, Path]) -> Path:
    return write_json(path, report.to_dict())


def read_report(path: Union[str, Path], stage: Optional[str] = None) -> EvalReport:
    return EvalReport.from_dict(read_json(path, stage=stage))


class EvaluationService(BaseService):
    """Service for model evaluation"""

    @classmethod
    def config(cls, data: Optional[Dict]) -> EvalConfig:
        return cls.validate(EvalConfigSerializer, data)

    @classmethod
    def evaluate(cls, model: Detector, dataset: DetectionDataset,
                 config: Optional[EvalConfig] = None) -> EvalReport:
        return evaluate(model, dataset, config)
