"""
Pipeline service: data preparation, stage scheduling with resume, and the
final comparison report.
"""
import json
import logging
import time
from pathlib import Path
from typing import Dict, List, Optional, Union

from django.conf import settings

from apps.core.exceptions import ConfigurationError, DiRediError, VerificationGateError
from apps.core.services import BaseService
from apps.core.utils import config_digest, read_json, sha256_file, write_json
from apps.datasets.models import DetectionDataset
from apps.datasets.services import load_dataset, save_dataset
from apps.datasets.toy import generate_toy_dataset
from apps.datasets.voc import load_voc
from apps.evaluation.reports import comparison_rows_json, render_comparison_table, write_ap_charts
from apps.evaluation.services import read_report
from apps.pipeline.models import (
    ARTIFACTS, COMPARISON_ROWS, REFERENCE_ROWS, STAGE_DEPENDENCIES, STAGE_ORDER, STAGE_OUTPUTS,
    DataSource, ExperimentPlan, RunManifest, StageConfig, StageName, StageStatus,
)
from apps.pipeline.presets import PRESETS
from apps.pipeline.serializers import ExperimentPlanSerializer, StageConfigSerializer
from apps.pipeline.stages import EVAL_SPLIT, STAGE_RUNNERS, TRAIN_SPLIT, RunContext, eval_report_path

logger = logging.getLogger(__name__)

DATA_KEYS = {TRAIN_SPLIT: 'data_train', EVAL_SPLIT: 'data_eval'}

# plan sections beyond the stage's own config that change a stage's result
STAGE_SECTIONS: Dict[str, tuple] = {
    StageName.EXTRACT_DELTA: ('substitution', 'inject_noise_delta'),
    StageName.APPLY_DELTA: ('substitution',),
    StageName.VERIFY: ('thresholds', 'evaluation'),
    StageName.EVALUATE_ALL: ('evaluation',),
    StageName.BASELINE_DIRECT: ('evaluation',),
}


def run_directory(plan: ExperimentPlan, output_dir: Optional[Union[str, Path]] = None) -> Path:
    if output_dir:
        return Path(output_dir)
    if plan.output_dir:
        return Path(plan.output_dir)
    return Path(settings.DIREDI['OUTPUT_ROOT']) / plan.plan_id


def stage_digest(plan: ExperimentPlan, name: str) -> str:
    """Digest of everything in the plan that feeds stage `name`"""
    payload = {
        'stage': name,
        'config': plan.stage(name),
        'categories': plan.categories,
        'tiers': plan.tiers,
        'input_size': plan.input_size,
        'seed': plan.seed,
    }
    for section in STAGE_SECTIONS.get(name, ()):
        payload[section] = getattr(plan, section)
    return config_digest(payload)


def _digests(output_dir: Path, paths) -> Dict[str, str]:
    return {str(Path(p).relative_to(output_dir)): sha256_file(p) for p in paths}


def _inputs(output_dir: Path, manifest: RunManifest, name: str) -> Dict[str, str]:
    """Digests of the data splits and every output of the stages `name` depends on"""
    inputs = {ARTIFACTS[key]: sha256_file(output_dir / ARTIFACTS[key]) for key in DATA_KEYS.values()}
    for dependency in STAGE_DEPENDENCIES[name]:
        if dependency in manifest.stages:
            inputs.update(manifest.stages[dependency].outputs)
    return dict(sorted(inputs.items()))


def _up_to_date(output_dir: Path, manifest: RunManifest, name: str, digest: str, inputs: Dict[str, str]) -> bool:
    record = manifest.stages.get(name)
    if record is None or record.status not in (StageStatus.COMPLETED, StageStatus.SKIPPED):
        return False
    if record.config_digest != digest or record.inputs != inputs or not record.outputs:
        return False
    for relative, expected in record.outputs.items():
        path = output_dir / relative
        if not path.exists() or sha256_file(path) != expected:
            return False
    return True


def _load_manifest(plan: ExperimentPlan, output_dir: Path, resume: bool) -> RunManifest:
    path = output_dir / 'manifest.json'
    if resume and path.exists():
        manifest = RunManifest.from_dict(read_json(path))
        if manifest.plan_id == plan.plan_id:
            manifest.plan_digest = plan.digest
            manifest.seed = plan.seed
            manifest.output_dir = str(output_dir)
            return manifest
        logger.warning(f'Manifest in {output_dir} belongs to plan {manifest.plan_id}; starting afresh')
    return RunManifest(plan_id=plan.plan_id, plan_digest=plan.digest, seed=plan.seed, output_dir=str(output_dir))


def write_manifest(manifest: RunManifest) -> Path:
    return write_json(manifest.path, manifest.to_dict())


def read_manifest(output_dir: Union[str, Path]) -> RunManifest:
    return RunManifest.from_dict(read_json(Path(output_dir) / 'manifest.json', stage='run'))


# ==================== DATA ====================


def build_source(plan: ExperimentPlan, split: str) -> DetectionDataset:
    if plan.source == DataSource.TOY:
        return generate_toy_dataset(plan.toy, split)
    voc = plan.voc
    categories = plan.categories.teacher_categories + tuple(
        c for c in plan.categories.private_categories if c not in plan.categories.teacher_categories
    )
    voc_split = voc.eval_split if split == EVAL_SPLIT else voc.train_split
    return load_voc(voc.root, voc.years, voc_split, categories, plan.input_size)


def prepare_data(plan: ExperimentPlan, output_dir: Path, manifest: RunManifest) -> Dict[str, str]:
    """Materialise both splits under data/; reused while the data digest and files match"""
    digest = plan.data_digest()
    recorded = manifest.data
    current = all((output_dir / ARTIFACTS[key]).exists() for key in DATA_KEYS.values())
    if current and recorded.get('digest') == digest and all(
        sha256_file(output_dir / ARTIFACTS[key]) == recorded.get(key) for key in DATA_KEYS.values()
    ):
        logger.info('Datasets up to date; reusing data/')
        return recorded
    for split, key in DATA_KEYS.items():
        dataset = build_source(plan, split)
        if not len(dataset):
            raise ConfigurationError(f'The {split} split of plan {plan.plan_id} is empty')
        save_dataset(dataset, output_dir / 'data' / split)
        logger.info(f'Saved {split} split: {len(dataset)} images')
    manifest.data = {'digest': digest, **{key: sha256_file(output_dir / ARTIFACTS[key])
                                          for key in DATA_KEYS.values()}}
    return manifest.data


# ==================== RUN ====================


def _abort(output_dir: Path, manifest: RunManifest, name: str, reason: str) -> None:
    record = manifest.record(name)
    record.status = StageStatus.ABORTED
    record.message = reason
    record.outputs = {}
    for key in STAGE_OUTPUTS[name]:
        (output_dir / ARTIFACTS[key]).unlink(missing_ok=True)
    logger.warning(f'Stage {name} aborted: {reason}')


def run_plan(plan: ExperimentPlan, output_dir: Optional[Union[str, Path]] = None, resume: bool = True,
             stages: Optional[List[str]] = None) -> RunManifest:
    """Run every stage of `plan` in order.

    Completed stages whose config and input digests still match are skipped
    unless `resume` is off. A failed verification aborts the stages that
    depend on it, the manifest is written, and VerificationGateError is raised.
    """
    output_dir = run_directory(plan, output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    manifest = _load_manifest(plan, output_dir, resume)
    manifest.status = StageStatus.PENDING
    selected = set(stages or STAGE_ORDER)
    logger.info(f'Running plan {plan.plan_id} (digest {plan.digest[:12]}) in {output_dir}')

    prepare_data(plan, output_dir, manifest)
    write_manifest(manifest)
    context = RunContext(plan, output_dir)
    gate_error = None

    for name in STAGE_ORDER:
        if name not in selected:
            continue
        blocked = [d for d in STAGE_DEPENDENCIES[name]
                   if manifest.status_of(d) in (StageStatus.FAILED, StageStatus.ABORTED)]
        if blocked:
            _abort(output_dir, manifest, name, f'upstream stage(s) {blocked} did not complete')
            write_manifest(manifest)
            continue

        digest = stage_digest(plan, name)
        inputs = _inputs(output_dir, manifest, name)
        record = manifest.record(name)
        if resume and _up_to_date(output_dir, manifest, name, digest, inputs):
            record.status = StageStatus.SKIPPED
            logger.info(f'Stage {name} up to date; skipped')
            write_manifest(manifest)
            continue

        logger.info(f'Stage {name} started')
        started = time.perf_counter()
        record.config_digest, record.inputs, record.message = digest, inputs, ''
        try:
            extra, evals = STAGE_RUNNERS[name](context)
        except VerificationGateError as exc:
            record.status = StageStatus.FAILED
            record.message = str(exc)
            record.outputs = _digests(output_dir, [output_dir / ARTIFACTS[k] for k in STAGE_OUTPUTS[name]])
            record.wall_clock = time.perf_counter() - started
            gate_error = exc
            write_manifest(manifest)
            continue
        except DiRediError as exc:
            record.status = StageStatus.FAILED
            record.message = str(exc)
            record.wall_clock = time.perf_counter() - started
            manifest.status = StageStatus.FAILED
            write_manifest(manifest)
            raise
        declared = [output_dir / ARTIFACTS[key] for key in STAGE_OUTPUTS[name]]
        record.outputs = _digests(output_dir, list(dict.fromkeys(declared + list(extra))))
        record.evals = evals
        record.wall_clock = time.perf_counter() - started
        record.status = StageStatus.COMPLETED
        logger.info(f'Stage {name} finished in {record.wall_clock:.1f}s')
        write_manifest(manifest)

    if gate_error is not None:
        manifest.status = StageStatus.FAILED
        write_manifest(manifest)
        raise gate_error

    if {StageName.EVALUATE_ALL, StageName.BASELINE_DIRECT} <= selected:
        write_comparison(output_dir, plan.plan_id)
    manifest.status = StageStatus.COMPLETED
    write_manifest(manifest)
    return manifest


# ==================== REPORT ====================


def write_comparison(output_dir: Union[str, Path], title: str = '') -> Dict[str, Path]:
    """Comparison table, JSON rows and AP charts from the stored eval reports"""
    output_dir = Path(output_dir)
    reference = [(label, read_report(eval_report_path(output_dir, key, reference=True), stage='evaluate_all'))
                 for label, key in REFERENCE_ROWS]
    comparison = [(label, read_report(eval_report_path(output_dir, key), stage='evaluate_all'))
                  for label, key in COMPARISON_ROWS]
    reports = output_dir / 'reports'
    text = (render_comparison_table(reference, f'{title} reference models (presumed categories)'.strip())
            + '\n'
            + render_comparison_table(comparison, f'{title} customer categories'.strip()))
    table = reports / 'comparison.txt'
    table.parent.mkdir(parents=True, exist_ok=True)
    table.write_text(text, encoding='utf-8')
    rows = write_json(reports / 'comparison.json', {
        'reference': comparison_rows_json(reference),
        'comparison': comparison_rows_json(comparison),
    })
    write_ap_charts(dict(comparison), reports / 'charts')
    logger.info(f'Comparison report written to {table}')
    return {'table': table, 'rows': rows}


class PipelineService(BaseService):
    """Service for experiment plans and end-to-end runs"""

    @classmethod
    def plan(cls, data: Dict) -> ExperimentPlan:
        return cls.validate(ExperimentPlanSerializer, data)

    @classmethod
    def stage_config(cls, data: Optional[Dict] = None) -> StageConfig:
        return cls.validate(StageConfigSerializer, data)

    @classmethod
    def plan_from_file(cls, path: Union[str, Path]) -> ExperimentPlan:
        path = Path(path)
        try:
            data = read_json(path, stage='config')
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f'{path} is not valid JSON: {exc}') from exc
        return cls.plan(data)

    @classmethod
    def preset(cls, name: str) -> ExperimentPlan:
        if name not in PRESETS:
            raise ConfigurationError(f'Unknown preset {name!r}; choose from {sorted(PRESETS)}')
        return PRESETS[name]()

    @classmethod
    def run(cls, plan: ExperimentPlan, output_dir=None, resume: bool = True,
            stages: Optional[List[str]] = None) -> RunManifest:
        return run_plan(plan, output_dir, resume, stages)

    @classmethod
    def report(cls, output_dir: Union[str, Path]) -> Dict[str, Path]:
        manifest = read_manifest(output_dir)
        return write_comparison(output_dir, manifest.plan_id)

    @classmethod
    def manifest(cls, output_dir: Union[str, Path]) -> RunManifest:
        return read_manifest(output_dir)

    @classmethod
    def load_dataset(cls, output_dir: Union[str, Path], split: str = TRAIN_SPLIT) -> DetectionDataset:
        return load_dataset(Path(output_dir) / 'data' / split, stage='prepare_data')

