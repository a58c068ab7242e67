"""
The eleven stages of an experiment run.

Each stage reads earlier artifacts through a RunContext and returns the
extra files it wrote plus any eval snapshots worth recording.
"""
import logging
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

from apps.core.exceptions import VerificationGateError
from apps.datasets.models import DetectionDataset, SplitMode
from apps.datasets.services import dataset_fingerprint, load_dataset, split_by_plan
from apps.detectors.models import Detector, tier_config
from apps.detectors.services import DetectorService
from apps.distillation.models import CUSTOMER_RD, EMULATION_RD, TrainConfig, TrainRecord
from apps.distillation.services import (
    distill, prepare_customer_tutors, redistill_finetune, reverse_distill, save_record, train_direct,
)
from apps.evaluation.models import EvalReport
from apps.evaluation.services import evaluate, write_report
from apps.packets.services import PacketService, write_verification
from apps.pipeline.models import (
    ARTIFACTS, COMPARISON_ROWS, REFERENCE_ROWS, STAGE_OUTPUTS, ExperimentPlan, StageName,
)

logger = logging.getLogger(__name__)

TRAIN_SPLIT = 'train'
EVAL_SPLIT = 'eval'

PRODUCERS: Dict[str, str] = {key: stage for stage, keys in STAGE_OUTPUTS.items() for key in keys}


def eval_report_path(output_dir: Path, key: str, reference: bool = False) -> Path:
    folder = 'reference' if reference else 'customer'
    return output_dir / 'reports' / 'eval' / folder / f'{key}.json'


class RunContext:
    """Artifact access for one run directory"""

    def __init__(self, plan: ExperimentPlan, output_dir: Path):
        self.plan = plan
        self.output_dir = Path(output_dir)
        self.categories = plan.categories

    def path(self, key: str) -> Path:
        return self.output_dir / ARTIFACTS[key]

    @lru_cache(maxsize=None)
    def source(self, split: str) -> DetectionDataset:
        return load_dataset(self.output_dir / 'data' / split, stage='prepare_data')

    @lru_cache(maxsize=None)
    def split(self, mode: str, split: str = TRAIN_SPLIT) -> DetectionDataset:
        return split_by_plan(self.source(split), self.categories, mode)

    def load_model(self, key: str) -> Detector:
        return DetectorService.load(self.path(key), stage=PRODUCERS.get(key))

    def new_model(self, role: str, class_names) -> Detector:
        config = tier_config(self.plan.tiers[role], class_names, input_size=self.plan.input_size)
        return DetectorService.build_detector(config, self.plan.model_seed(role))

    def save_model(self, key: str, model: Detector, stage: str, record: Optional[TrainRecord] = None) -> List[Path]:
        provenance = {'stage': stage, 'plan_id': self.plan.plan_id}
        if record is not None:
            provenance['dataset_digest'] = record.dataset_digest
        written = [DetectorService.save(model, self.path(key), provenance=provenance)]
        if record is not None:
            written.append(save_record(record, self.output_dir / 'records' / f'{stage}.json'))
        return written

    def evaluator(self, train: TrainConfig, dataset: DetectionDataset) -> Optional[Callable[[Detector], float]]:
        if not train.eval_every:
            return None
        return lambda model: evaluate(model, dataset, self.plan.evaluation).mAP

    def evaluate_to(self, model: Detector, dataset: DetectionDataset, path: Path, label: str) -> EvalReport:
        report = evaluate(model, dataset, self.plan.evaluation)
        report.model = label
        write_report(report, path)
        return report


StageResult = Tuple[List[Path], Dict[str, Any]]


def _snapshots(record: TrainRecord) -> Dict[str, Any]:
    return {'train': record.evals} if record.evals else {}


def run_train_large(ctx: RunContext) -> StageResult:
    config = ctx.plan.stage(StageName.TRAIN_LARGE)
    data = ctx.split(SplitMode.TEACHER)
    model = ctx.new_model('large', ctx.categories.teacher_categories)
    model, record = train_direct(model, data, config.train,
                                 ctx.evaluator(config.train, ctx.split(SplitMode.TEACHER, EVAL_SPLIT)),
                                 name=StageName.TRAIN_LARGE)
    return ctx.save_model('large', model, StageName.TRAIN_LARGE, record), _snapshots(record)


def run_distill_a(ctx: RunContext) -> StageResult:
    config = ctx.plan.stage(StageName.DISTILL_A)
    data = ctx.split(SplitMode.MANUFACTURER)
    student = ctx.new_model('tutor', ctx.categories.presumed_categories)
    student, record = distill(ctx.load_model('large'), student, data, config.fgd, config.train,
                              ctx.evaluator(config.train, ctx.split(SplitMode.MANUFACTURER, EVAL_SPLIT)),
                              name=StageName.DISTILL_A)
    return ctx.save_model('tutor', student, StageName.DISTILL_A, record), _snapshots(record)


def run_distill_b(ctx: RunContext) -> StageResult:
    config = ctx.plan.stage(StageName.DISTILL_B)
    data = ctx.split(SplitMode.MANUFACTURER)
    student = ctx.new_model('edge', ctx.categories.presumed_categories)
    student, record = distill(ctx.load_model('tutor'), student, data, config.fgd, config.train,
                              ctx.evaluator(config.train, ctx.split(SplitMode.MANUFACTURER, EVAL_SPLIT)),
                              name=StageName.DISTILL_B)
    return ctx.save_model('edge', student, StageName.DISTILL_B, record), _snapshots(record)


def _reverse(ctx: RunContext, stage: str, index: int, mode: str, default_rd, key: str) -> StageResult:
    config = ctx.plan.stage(stage)
    tutors = prepare_customer_tutors(ctx.load_model('tutor'), ctx.categories.updated_class_names,
                                     ctx.plan.new_row_seed)
    data = ctx.split(mode)
    tutor, record = reverse_distill(
        ctx.load_model('edge'), tutors[index], data, config.fgd, config.rd or default_rd, config.train,
        ctx.evaluator(config.train, ctx.split(SplitMode.CUSTOMER_ACTUAL, EVAL_SPLIT)), name=stage,
    )
    return ctx.save_model(key, tutor, stage, record), _snapshots(record)


def run_rd_emulation(ctx: RunContext) -> StageResult:
    return _reverse(ctx, StageName.RD_EMULATION, 0, SplitMode.PRESUMED, EMULATION_RD, 'tutor_1')


def run_rd_customer(ctx: RunContext) -> StageResult:
    return _reverse(ctx, StageName.RD_CUSTOMER, 1, SplitMode.CUSTOMER_ACTUAL, CUSTOMER_RD, 'tutor_2')


def run_extract_delta(ctx: RunContext) -> StageResult:
    noise_seed = ctx.plan.seed * 1000 + 300 if ctx.plan.inject_noise_delta else None
    packet = PacketService.build(
        ctx.load_model('tutor_1'), ctx.load_model('tutor_2'),
        known_class_names=ctx.load_model('tutor').class_names,
        substitution=ctx.plan.substitution,
        new_row_init_seed=ctx.plan.new_row_seed,
        presumed_fingerprint=dataset_fingerprint(ctx.split(SplitMode.MANUFACTURER)),
        inject_noise_seed=noise_seed,
    )
    PacketService.save(packet, ctx.path('packet'))
    return [], {'delta_norm': packet.delta.norm(), 'noise_injected': noise_seed is not None}


def run_apply_delta(ctx: RunContext) -> StageResult:
    packet = PacketService.load(ctx.path('packet'), stage=StageName.EXTRACT_DELTA)
    updated = PacketService.apply_packet(ctx.load_model('tutor'), packet, ctx.plan.substitution,
                                         slot_names=ctx.categories.private_categories)
    return ctx.save_model('updated_tutor', updated, StageName.APPLY_DELTA), {}


def run_verify(ctx: RunContext) -> StageResult:
    report = PacketService.verify(
        ctx.load_model('tutor'), ctx.load_model('updated_tutor'),
        ctx.split(SplitMode.VERIFICATION, EVAL_SPLIT), ctx.plan.thresholds, ctx.plan.evaluation,
    )
    write_verification(report, ctx.path('verification'))
    if not report.passed:
        failing = [c for c in report.regressed if c not in report.waived_regressions]
        raise VerificationGateError(f'Verification failed for {failing}; update terminated')
    return [], {'verdict': report.verdict, 'regressed': report.regressed}


def run_distill_c(ctx: RunContext) -> StageResult:
    config = ctx.plan.stage(StageName.DISTILL_C)
    data = ctx.split(SplitMode.CUSTOMER_ACTUAL)
    edge, record = redistill_finetune(
        ctx.load_model('updated_tutor'), ctx.load_model('edge'), data, config.train, config.fgd,
        seed=ctx.plan.new_row_seed,
        evaluate=ctx.evaluator(config.train, ctx.split(SplitMode.CUSTOMER_ACTUAL, EVAL_SPLIT)),
    )
    return ctx.save_model('updated_edge', edge, StageName.DISTILL_C, record), _snapshots(record)


def run_evaluate_all(ctx: RunContext) -> StageResult:
    written, snapshots = [], {}
    reference_data = ctx.split(SplitMode.MANUFACTURER, EVAL_SPLIT)
    customer_data = ctx.split(SplitMode.CUSTOMER_ACTUAL, EVAL_SPLIT)
    for label, key in REFERENCE_ROWS:
        path = eval_report_path(ctx.output_dir, key, reference=True)
        report = ctx.evaluate_to(ctx.load_model(key), reference_data, path, label)
        written.append(path)
        snapshots[f'reference/{key}'] = report.mAP
    for label, key in COMPARISON_ROWS:
        if PRODUCERS[key] == StageName.BASELINE_DIRECT:
            continue
        path = eval_report_path(ctx.output_dir, key)
        report = ctx.evaluate_to(ctx.load_model(key), customer_data, path, label)
        written.append(path)
        snapshots[key] = report.mAP
    return written, snapshots


def run_baseline_direct(ctx: RunContext) -> StageResult:
    config = ctx.plan.stage(StageName.BASELINE_DIRECT)
    data = ctx.split(SplitMode.CUSTOMER_ACTUAL)
    customer_eval = ctx.split(SplitMode.CUSTOMER_ACTUAL, EVAL_SPLIT)
    model = DetectorService.reshape_head(ctx.load_model('edge'), ctx.categories.updated_class_names,
                                         ctx.plan.new_row_seed)
    model, record = train_direct(model, data, config.train, ctx.evaluator(config.train, customer_eval),
                                 name=StageName.BASELINE_DIRECT)
    written = ctx.save_model('edge_direct', model, StageName.BASELINE_DIRECT, record)
    label = next(label for label, key in COMPARISON_ROWS if key == 'edge_direct')
    path = eval_report_path(ctx.output_dir, 'edge_direct')
    report = ctx.evaluate_to(model, customer_eval, path, label)
    return written + [path], {'edge_direct': report.mAP, **_snapshots(record)}


STAGE_RUNNERS: Dict[str, Callable[[RunContext], StageResult]] = {
    StageName.TRAIN_LARGE: run_train_large,
    StageName.DISTILL_A: run_distill_a,
    StageName.DISTILL_B: run_distill_b,
    StageName.RD_EMULATION: run_rd_emulation,
    StageName.RD_CUSTOMER: run_rd_customer,
    StageName.EXTRACT_DELTA: run_extract_delta,
    StageName.APPLY_DELTA: run_apply_delta,
    StageName.VERIFY: run_verify,
    StageName.DISTILL_C: run_distill_c,
    StageName.EVALUATE_ALL: run_evaluate_all,
    StageName.BASELINE_DIRECT: run_baseline_direct,
}
