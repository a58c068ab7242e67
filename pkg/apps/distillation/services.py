"""
Distillation service layer: forward KD, reverse distillation, re-distillation
fine-tune and plain detection training.
"""
import logging
import warnings
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import torch

from apps.core.exceptions import ConfigurationError, DiRediWarning
from apps.core.services import BaseService
from apps.core.utils import read_json, to_jsonable, write_json
from apps.datasets.models import DetectionDataset
from apps.detectors.models import Detector
from apps.detectors.services import DetectorService
from apps.distillation.engine import detection_terms, fit
from apps.distillation.models import (
    FINETUNE_TEMPERATURE, RDConfig, TrainConfig, TrainRecord, train_preset,
)
from apps.distillation.serializers import RDConfigSerializer, TrainConfigSerializer
from apps.fgd.losses import FGDLoss
from apps.fgd.models import FGDConfig

logger = logging.getLogger(__name__)

Evaluator = Callable[[Detector], float]


def _check_labels(dataset: DetectionDataset, class_names: Sequence[str], role: str) -> None:
    missing = sorted(dataset.label_names() - set(class_names))
    if missing:
        raise ConfigurationError(
            f'Dataset categories {missing} are not in the {role} classes {list(class_names)}'
        )


def _check_pyramids(teacher: Detector, student: Detector) -> None:
    if tuple(teacher.config.strides) != tuple(student.config.strides):
        raise ConfigurationError(
            f'Teacher strides {list(teacher.config.strides)} and student strides '
            f'{list(student.config.strides)} differ'
        )


def _fgd_objective(teacher: Detector, student: Detector, fgd: FGDLoss, feature_weight: float,
                   detect_weight: float):
    def objective(images, annotations):
        with torch.no_grad():
            teacher_pyramid, _ = teacher(images)
        if detect_weight:
            pyramid, detect = detection_terms(student, images, annotations)
            terms = {'detect': detect_weight * detect.total}
        else:
            # head stays out of the graph so it receives no gradient at all
            pyramid, _ = student(images)
            terms = {'detect': pyramid.features[0].sum() * 0.0}
        if feature_weight:
            feature = fgd(teacher_pyramid, pyramid, annotations)
            terms['focal'] = feature_weight * feature.focal
            terms['global'] = feature_weight * feature.global_
        else:
            terms['focal'] = terms['global'] = terms['detect'] * 0.0
        return terms

    return objective


def _feature_distill(name: str, teacher: Detector, student: Detector, dataset: DetectionDataset,
                     fgd_config: FGDConfig, train_config: TrainConfig, feature_weight: float,
                     detect_weight: float, evaluate: Optional[Evaluator], strict_labels: bool,
                     **extra) -> Tuple[Detector, TrainRecord]:
    _check_pyramids(teacher, student)
    teacher.eval()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(train_config.seed)
        fgd = FGDLoss(fgd_config, teacher.config.neck_channels, student.config.neck_channels,
                      len(student.config.strides))
    record = TrainRecord.start(name, train_config, dataset.digest, fgd=fgd_config, **extra)
    objective = _fgd_objective(teacher, student, fgd, feature_weight, detect_weight)
    fit(name, student, dataset, train_config, objective, record, auxiliary=fgd, teacher=teacher,
        evaluate=evaluate, strict_labels=strict_labels)
    return student, record


def distill(teacher: Detector, student: Detector, dataset: DetectionDataset, fgd_config: FGDConfig,
            train_config: TrainConfig, evaluate: Optional[Evaluator] = None,
            name: str = 'distill') -> Tuple[Detector, TrainRecord]:
    """Train `student` on its detection loss plus FGD imitation of `teacher`"""
    _check_labels(dataset, teacher.class_names, 'teacher')
    _check_labels(dataset, student.class_names, 'student')
    logger.info(
        f'{name}: {teacher.config.tier} -> {student.config.tier} on {len(dataset)} images '
        f'for {train_config.max_epochs} epoch(s)'
    )
    return _feature_distill(name, teacher, student, dataset, fgd_config, train_config, 1.0, 1.0,
                            evaluate, strict_labels=True)


def reverse_distill(edge_teacher: Detector, tutor_student: Detector, dataset: DetectionDataset,
                    fgd_config: FGDConfig, rd_config: RDConfig, train_config: TrainConfig,
                    evaluate: Optional[Evaluator] = None,
                    name: str = 'reverse_distill') -> Tuple[Detector, TrainRecord]:
    """Larger tutor imitates the frozen edge model: alpha * feature + beta * detection.

    With beta_rd = 0 the tutor head receives no gradient.
    """
    if tutor_student.parameter_count() < edge_teacher.parameter_count():
        raise ConfigurationError(
            f'Reverse distillation needs the student to be at least as large as the teacher '
            f'({tutor_student.parameter_count()} < {edge_teacher.parameter_count()} parameters)'
        )
    _check_labels(dataset, tutor_student.class_names, 'tutor')
    unseen = sorted(dataset.label_names() - set(edge_teacher.class_names))
    if rd_config.beta_rd == 0 and unseen:
        message = f'{name}: beta_rd is 0, labels of {unseen} cannot influence training'
        logger.warning(message)
        warnings.warn(message, DiRediWarning)
    logger.info(
        f'{name}: edge -> {tutor_student.config.tier} (alpha {rd_config.alpha_rd}, beta {rd_config.beta_rd}) '
        f'on {len(dataset)} images'
    )
    return _feature_distill(name, edge_teacher, tutor_student, dataset, fgd_config, train_config,
                            rd_config.alpha_rd, rd_config.beta_rd, evaluate, strict_labels=True,
                            rd=rd_config)


def redistill_finetune(updated_tutor: Detector, edge_model: Detector, dataset: DetectionDataset,
                       train_config: TrainConfig, fgd_config: Optional[FGDConfig] = None, seed: int = 0,
                       evaluate: Optional[Evaluator] = None,
                       name: str = 'distill_c') -> Tuple[Detector, TrainRecord]:
    """Fine-tune a copy of `edge_model`, re-shaped to the tutor's classes, against `updated_tutor`"""
    _check_labels(dataset, updated_tutor.class_names, 'updated tutor')
    fgd_config = fgd_config or FGDConfig(temperature=FINETUNE_TEMPERATURE)
    student = DetectorService.reshape_head(edge_model, updated_tutor.class_names, seed)
    return _feature_distill(name, updated_tutor, student, dataset, fgd_config, train_config, 1.0, 1.0,
                            evaluate, strict_labels=True, reshape_seed=seed)


def train_direct(model: Detector, dataset: DetectionDataset, train_config: TrainConfig,
                 evaluate: Optional[Evaluator] = None,
                 name: str = 'train_direct') -> Tuple[Detector, TrainRecord]:
    """Detection loss only"""
    _check_labels(dataset, model.class_names, 'model')

    def objective(images, annotations):
        _, detect = detection_terms(model, images, annotations)
        zero = detect.total * 0.0
        return {'detect': detect.total, 'focal': zero, 'global': zero}

    record = TrainRecord.start(name, train_config, dataset.digest)
    fit(name, model, dataset, train_config, objective, record, evaluate=evaluate)
    return model, record


def prepare_customer_tutors(original_tutor: Detector, customer_class_names: Sequence[str],
                            seed: int) -> Tuple[Detector, Detector]:
    """Two aligned copies of the tutor with identical head re-shape"""
    tutor_1 = DetectorService.reshape_head(original_tutor, customer_class_names, seed)
    tutor_2 = DetectorService.reshape_head(original_tutor, customer_class_names, seed)
    return tutor_1, tutor_2


def save_record(record: TrainRecord, path: Union[str, Path]) -> Path:
    return write_json(path, record.to_dict())


def load_record(path: Union[str, Path], stage: Optional[str] = None) -> TrainRecord:
    return TrainRecord.from_dict(read_json(path, stage=stage))


class DistillationService(BaseService):
    """Service for the training procedures"""

    @classmethod
    def train_config(cls, data: Optional[Dict] = None, preset: Optional[str] = None) -> TrainConfig:
        """Validated TrainConfig; `data` overrides a named preset when one is given"""
        base = to_jsonable(train_preset(preset)) if preset else {}
        return cls.validate(TrainConfigSerializer, {**base, **(data or {})})

    @classmethod
    def rd_config(cls, data: Optional[Dict] = None) -> RDConfig:
        return cls.validate(RDConfigSerializer, data)

    @classmethod
    def distill(cls, teacher: Detector, student: Detector, dataset: DetectionDataset, fgd_config: FGDConfig,
                train_config: TrainConfig, evaluate: Optional[Evaluator] = None,
                name: str = 'distill') -> Tuple[Detector, TrainRecord]:
        return distill(teacher, student, dataset, fgd_config, train_config, evaluate, name)

    @classmethod
    def reverse_distill(cls, edge_teacher: Detector, tutor_student: Detector, dataset: DetectionDataset,
                        fgd_config: FGDConfig, rd_config: RDConfig, train_config: TrainConfig,
                        evaluate: Optional[Evaluator] = None,
                        name: str = 'reverse_distill') -> Tuple[Detector, TrainRecord]:
        return reverse_distill(edge_teacher, tutor_student, dataset, fgd_config, rd_config, train_config,
                               evaluate, name)

    @classmethod
    def redistill_finetune(cls, updated_tutor: Detector, edge_model: Detector, dataset: DetectionDataset,
                           train_config: TrainConfig, fgd_config: Optional[FGDConfig] = None, seed: int = 0,
                           evaluate: Optional[Evaluator] = None) -> Tuple[Detector, TrainRecord]:
        return redistill_finetune(updated_tutor, edge_model, dataset, train_config, fgd_config, seed, evaluate)

    @classmethod
    def train_direct(cls, model: Detector, dataset: DetectionDataset, train_config: TrainConfig,
                     evaluate: Optional[Evaluator] = None,
                     name: str = 'train_direct') -> Tuple[Detector, TrainRecord]:
        return train_direct(model, dataset, train_config, evaluate, name)

    @classmethod
    def train_large(cls, model: Detector, dataset: DetectionDataset, train_config: TrainConfig,
                    evaluate: Optional[Evaluator] = None) -> Tuple[Detector, TrainRecord]:
        return train_direct(model, dataset, train_config, evaluate, name='train_large')

    @classmethod
    def prepare_customer_tutors(cls, original_tutor: Detector, customer_class_names: Sequence[str],
                                seed: int) -> Tuple[Detector, Detector]:
        return prepare_customer_tutors(original_tutor, customer_class_names, seed)
