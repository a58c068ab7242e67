"""
Experiment plans, stage graph and run manifests
"""
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from django.db import models

from apps.core.exceptions import ConfigurationError
from apps.core.utils import config_digest, to_jsonable
from apps.datasets.models import CategoryPlan, ToySpec, VocSource
from apps.detectors.models import Tier
from apps.distillation.models import RDConfig, TrainConfig
from apps.evaluation.models import EvalConfig
from apps.fgd.models import FGDConfig
from apps.packets.models import SubstitutionConfig, VerificationThresholds


class StageName(models.TextChoices):
    TRAIN_LARGE = 'train_large', 'Train the large model'
    DISTILL_A = 'distill_a', 'Distill A: large -> tutor'
    DISTILL_B = 'distill_b', 'Distill B: tutor -> edge'
    RD_EMULATION = 'rd_emulation', 'Reverse distillation, tutor 1 (presumed data)'
    RD_CUSTOMER = 'rd_customer', 'Reverse distillation, tutor 2 (customer data)'
    EXTRACT_DELTA = 'extract_delta', 'Extract the knowledge packet'
    APPLY_DELTA = 'apply_delta', 'Apply the packet to the original tutor'
    VERIFY = 'verify', 'Manufacturer verification'
    DISTILL_C = 'distill_c', 'Distill C: updated tutor -> edge'
    EVALUATE_ALL = 'evaluate_all', 'Evaluate every model'
    BASELINE_DIRECT = 'baseline_direct', 'Updated edge by direct training'


class StageStatus(models.TextChoices):
    PENDING = 'pending', 'Pending'
    COMPLETED = 'completed', 'Completed'
    SKIPPED = 'skipped', 'Skipped (up to date)'
    FAILED = 'failed', 'Failed'
    ABORTED = 'aborted', 'Aborted'


class DataSource(models.TextChoices):
    TOY = 'toy', 'Synthetic shapes'
    VOC = 'voc', 'PASCAL VOC'


STAGE_ORDER: Tuple[str, ...] = tuple(StageName.values)

STAGE_DEPENDENCIES: Dict[str, Tuple[str, ...]] = {
    StageName.TRAIN_LARGE: (),
    StageName.DISTILL_A: (StageName.TRAIN_LARGE,),
    StageName.DISTILL_B: (StageName.DISTILL_A,),
    StageName.RD_EMULATION: (StageName.DISTILL_A, StageName.DISTILL_B),
    StageName.RD_CUSTOMER: (StageName.DISTILL_A, StageName.DISTILL_B),
    StageName.EXTRACT_DELTA: (StageName.DISTILL_A, StageName.RD_EMULATION, StageName.RD_CUSTOMER),
    StageName.APPLY_DELTA: (StageName.DISTILL_A, StageName.EXTRACT_DELTA),
    StageName.VERIFY: (StageName.DISTILL_A, StageName.APPLY_DELTA),
    StageName.DISTILL_C: (StageName.DISTILL_B, StageName.APPLY_DELTA, StageName.VERIFY),
    StageName.EVALUATE_ALL: (
        StageName.TRAIN_LARGE, StageName.DISTILL_A, StageName.DISTILL_B, StageName.RD_EMULATION,
        StageName.RD_CUSTOMER, StageName.APPLY_DELTA, StageName.DISTILL_C,
    ),
    StageName.BASELINE_DIRECT: (StageName.DISTILL_B,),
}

# other names the reverse-distillation runs go by
STAGE_ALIASES: Dict[str, Tuple[str, ...]] = {
    StageName.RD_EMULATION: ('reverse_distillation_a', 'tutor_1_after_redi_b'),
    StageName.RD_CUSTOMER: ('reverse_distillation_b', 'tutor_2_after_redi_a'),
}

# output paths relative to the run directory
ARTIFACTS: Dict[str, str] = {
    'large': 'models/large.ckpt',
    'tutor': 'models/tutor.ckpt',
    'edge': 'models/edge.ckpt',
    'tutor_1': 'models/tutor_1.ckpt',
    'tutor_2': 'models/tutor_2.ckpt',
    'packet': 'packets/knowledge.drdp',
    'updated_tutor': 'models/updated_tutor.ckpt',
    'verification': 'reports/verification.json',
    'updated_edge': 'models/updated_edge.ckpt',
    'edge_direct': 'models/edge_direct.ckpt',
    'data_train': 'data/train/annotations.json',
    'data_eval': 'data/eval/annotations.json',
}

STAGE_OUTPUTS: Dict[str, Tuple[str, ...]] = {
    StageName.TRAIN_LARGE: ('large',),
    StageName.DISTILL_A: ('tutor',),
    StageName.DISTILL_B: ('edge',),
    StageName.RD_EMULATION: ('tutor_1',),
    StageName.RD_CUSTOMER: ('tutor_2',),
    StageName.EXTRACT_DELTA: ('packet',),
    StageName.APPLY_DELTA: ('updated_tutor',),
    StageName.VERIFY: ('verification',),
    StageName.DISTILL_C: ('updated_edge',),
    StageName.EVALUATE_ALL: (),
    StageName.BASELINE_DIRECT: ('edge_direct',),
}

# (row label, artifact); reference rows are evaluated on presumed data and listed first
REFERENCE_ROWS: Tuple[Tuple[str, str], ...] = (
    ('Large model', 'large'),
    ('Tutor after Distill A', 'tutor'),
    ('Edge after Distill B', 'edge'),
)
COMPARISON_ROWS: Tuple[Tuple[str, str], ...] = (
    ('Original tutor', 'tutor'),
    ('Tutor 1 (emulation)', 'tutor_1'),
    ('Tutor 2 (customer)', 'tutor_2'),
    ('Updated tutor', 'updated_tutor'),
    ('Original edge', 'edge'),
    ('Updated edge (direct training)', 'edge_direct'),
    ('Updated edge (Distill C)', 'updated_edge'),
)


def check_stage_graph(order=STAGE_ORDER, dependencies=STAGE_DEPENDENCIES) -> None:
    """Every dependency names a known stage that runs earlier"""
    seen = set()
    for stage in order:
        missing = [d for d in dependencies.get(stage, ()) if d not in seen]
        if missing:
            raise ConfigurationError(f'Stage {stage} depends on {missing}, which do not run before it')
        seen.add(stage)


# ==================== PLAN ====================


@dataclass(frozen=True)
class StageConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    fgd: FGDConfig = field(default_factory=FGDConfig)
    rd: Optional[RDConfig] = None


@dataclass(frozen=True)
class ExperimentPlan:
    """Everything one end-to-end run needs; `digest` covers all of it"""
    plan_id: str
    categories: CategoryPlan
    source: str = DataSource.TOY
    toy: ToySpec = field(default_factory=ToySpec)
    voc: Optional[VocSource] = None
    tiers: Dict[str, str] = field(default_factory=lambda: {
        'large': Tier.LARGE, 'tutor': Tier.TUTOR, 'edge': Tier.EDGE,
    })
    input_size: int = 96
    stages: Dict[str, StageConfig] = field(default_factory=dict)
    substitution: SubstitutionConfig = field(default_factory=SubstitutionConfig)
    thresholds: VerificationThresholds = field(default_factory=VerificationThresholds)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    output_dir: Optional[str] = None
    inject_noise_delta: bool = False

    def __post_init__(self):
        check_stage_graph()
        unknown = sorted(set(self.stages) - set(STAGE_ORDER))
        if unknown:
            raise ConfigurationError(f'Unknown stage(s) in plan: {unknown}')
        if self.source not in DataSource.values:
            raise ConfigurationError(f'Unknown data source {self.source!r}')
        if self.source == DataSource.VOC and self.voc is None:
            raise ConfigurationError('VOC plans need a voc section')
        if set(self.tiers) != {'large', 'tutor', 'edge'}:
            raise ConfigurationError('tiers must name the large, tutor and edge tiers')
        if self.source == DataSource.TOY:
            missing = sorted(set(self.categories.teacher_categories + self.categories.private_categories)
                             - set(self.toy.class_names))
            if missing:
                raise ConfigurationError(f'Toy spec does not render {missing}')

    def stage(self, name: str) -> StageConfig:
        """Stage config with the stage seed derived from the plan seed"""
        config = self.stages.get(name, StageConfig())
        return replace(config, train=config.train.with_seed(self.stage_seed(name)))

    def stage_seed(self, name: str) -> int:
        return self.seed * 1000 + STAGE_ORDER.index(name)

    def model_seed(self, role: str) -> int:
        return self.seed * 1000 + 100 + ('large', 'tutor', 'edge').index(role)

    @property
    def new_row_seed(self) -> int:
        return self.seed * 1000 + 200

    @property
    def digest(self) -> str:
        return config_digest(self.without_runtime())

    def without_runtime(self) -> 'ExperimentPlan':
        """Plan minus fields that do not change results"""
        return replace(self, output_dir=None)

    def data_digest(self) -> str:
        return config_digest({'source': self.source, 'toy': self.toy, 'voc': self.voc,
                              'input_size': self.input_size})

    def to_dict(self) -> Dict[str, Any]:
        return to_jsonable(self)


# ==================== MANIFEST ====================


@dataclass
class StageRecord:
    name: str
    status: str = StageStatus.PENDING
    config_digest: str = ''
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    wall_clock: float = 0.0
    evals: Dict[str, Any] = field(default_factory=dict)
    aliases: List[str] = field(default_factory=list)
    message: str = ''


@dataclass
class RunManifest:
    """Per-stage digests and timings of one run; rewritten after every stage"""
    plan_id: str
    plan_digest: str
    seed: int
    output_dir: str
    data: Dict[str, Any] = field(default_factory=dict)
    stages: Dict[str, StageRecord] = field(default_factory=dict)
    status: str = StageStatus.PENDING
    format_version: int = 1

    def record(self, name: str) -> StageRecord:
        if name not in self.stages:
            self.stages[name] = StageRecord(name=name, aliases=list(STAGE_ALIASES.get(name, ())))
        return self.stages[name]

    def status_of(self, name: str) -> str:
        return self.stages[name].status if name in self.stages else StageStatus.PENDING

    @property
    def path(self) -> Path:
        return Path(self.output_dir) / 'manifest.json'

    def to_dict(self) -> Dict[str, Any]:
        return to_jsonable(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RunManifest':
        data = dict(data)
        data['stages'] = {k: StageRecord(**v) for k, v in data.get('stages', {}).items()}
        return cls(**data)
