"""
Shared optimisation loop for every training procedure.
"""
import logging
import time
from typing import Callable, Dict, List, Optional, Sequence

import torch
from torch import Tensor, nn
from torch.nn.utils import clip_grad_norm_

from apps.core.exceptions import IntegrityError
from apps.core.utils import ensure_finite, get_device, progress, seed_everything
from apps.datasets.loaders import build_loader
from apps.datasets.models import DetectionDataset
from apps.detectors.losses import detection_loss
from apps.detectors.models import Annotation, Detector, HeadOutputs
from apps.detectors.services import DetectorService
from apps.detectors.targets import assign_targets
from apps.distillation.models import EpochRecord, LrSchedule, Optimizer, TrainConfig, TrainRecord

logger = logging.getLogger(__name__)

COMPONENTS = ('detect', 'focal', 'global')

# images, annotations -> weighted loss terms keyed by COMPONENTS
Objective = Callable[[Tensor, List[Annotation]], Dict[str, Tensor]]


def build_optimizer(parameters: Sequence[nn.Parameter], config: TrainConfig) -> torch.optim.Optimizer:
    if config.optimizer == Optimizer.ADAPTIVE:
        return torch.optim.AdamW(parameters, lr=config.learning_rate, weight_decay=config.weight_decay)
    return torch.optim.SGD(parameters, lr=config.learning_rate, momentum=config.momentum,
                           weight_decay=config.weight_decay)


def build_scheduler(optimizer: torch.optim.Optimizer, config: TrainConfig):
    if config.lr_schedule == LrSchedule.STEP:
        return torch.optim.lr_scheduler.MultiStepLR(optimizer, milestones=config.milestones, gamma=0.1)
    return None


def detection_terms(model: Detector, images: Tensor, annotations: Sequence[Annotation]):
    """Forward a model and return (pyramid, detection LossValue)"""
    pyramid, outputs = model(images)
    targets = assign_targets(
        annotations, _level_shapes(outputs), model.config.strides, model.config.resolved_scale_ranges()
    ).to(images.device)
    return pyramid, detection_loss(outputs, targets)


def _level_shapes(outputs: HeadOutputs):
    return [tuple(t.shape[-2:]) for t in outputs.class_logits]


def fit(name: str, student: Detector, dataset: DetectionDataset, config: TrainConfig, objective: Objective,
        record: TrainRecord, auxiliary: Optional[nn.Module] = None, teacher: Optional[Detector] = None,
        evaluate: Optional[Callable[[Detector], float]] = None, strict_labels: bool = True) -> TrainRecord:
    """Minimise `objective` over `dataset`; records per-epoch means of each term.

    `teacher`, when given, is kept in eval mode and checked for immutability.
    """
    device = get_device()
    student.to(device)
    if auxiliary is not None:
        auxiliary.to(device)
    teacher_digest = None
    if teacher is not None:
        teacher.to(device).eval()
        teacher_digest = DetectorService.parameter_digest(teacher)

    seed_everything(config.seed)
    loader = build_loader(dataset, student.class_names, config.batch_size, config.seed,
                          shuffle=True, hflip=config.hflip, strict=strict_labels)
    parameters = [p for p in student.parameters() if p.requires_grad]
    if auxiliary is not None:
        parameters += [p for p in auxiliary.parameters() if p.requires_grad]
    optimizer = build_optimizer(parameters, config)
    scheduler = build_scheduler(optimizer, config)

    started = time.perf_counter()
    if evaluate is not None:
        record.evals.append({'epoch': 0, 'mAP': float(evaluate(student))})

    for epoch in range(1, config.max_epochs + 1):
        student.train()
        if auxiliary is not None:
            auxiliary.train()
        epoch_started = time.perf_counter()
        sums = {key: 0.0 for key in COMPONENTS}
        steps = 0
        learning_rate = optimizer.param_groups[0]['lr']
        for images, annotations in progress(loader, desc=f'{name} {epoch}/{config.max_epochs}'):
            images = images.to(device)
            terms = objective(images, annotations)
            total = sum(terms[key] for key in COMPONENTS)
            ensure_finite(total.detach(), f'{name} loss')
            optimizer.zero_grad(set_to_none=True)
            total.backward()
            clip_grad_norm_(parameters, config.grad_clip_norm)
            optimizer.step()
            for key in COMPONENTS:
                sums[key] += float(terms[key].detach())
            steps += 1
            if config.log_every and steps % config.log_every == 0:
                logger.debug(f'{name} epoch {epoch} step {steps}: loss {float(total.detach()):.4f}')
        if scheduler is not None:
            scheduler.step()

        means = {key: sums[key] / max(1, steps) for key in COMPONENTS}
        entry = EpochRecord(
            epoch=epoch,
            total=sum(means.values()),
            detect=means['detect'],
            focal=means['focal'],
            global_=means['global'],
            learning_rate=learning_rate,
            seconds=time.perf_counter() - epoch_started,
            steps=steps,
        )
        if evaluate is not None and (epoch == config.max_epochs or
                                     (config.eval_every and epoch % config.eval_every == 0)):
            entry.eval_map = float(evaluate(student))
            record.evals.append({'epoch': epoch, 'mAP': entry.eval_map})
        record.epochs.append(entry)
        logger.info(
            f'{name} epoch {epoch}/{config.max_epochs}: total {entry.total:.4f} '
            f'(detect {entry.detect:.4f}, focal {entry.focal:.4f}, global {entry.global_:.4f}) '
            f'lr {learning_rate:.2e}' + (f' mAP {entry.eval_map:.3f}' if entry.eval_map is not None else '')
        )

    student.eval()
    record.wall_clock = time.perf_counter() - started
    record.final_parameter_digest = DetectorService.parameter_digest(student)
    if teacher is not None:
        after = DetectorService.parameter_digest(teacher)
        if after != teacher_digest:
            raise IntegrityError(f'{name}: teacher parameters changed during training')
        record.teacher_parameter_digest = after
    return record
