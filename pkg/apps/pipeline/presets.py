"""
Built-in experiment plans
"""
from pathlib import Path
from typing import Callable, Dict

from django.conf import settings

from apps.core.exceptions import ConfigurationError
from apps.datasets.models import CategoryPlan, VocSource
from apps.distillation.models import CUSTOMER_RD, EMULATION_RD, FINETUNE_TEMPERATURE, train_preset
from apps.fgd.models import FGDConfig
from apps.packets.models import VerificationThresholds
from apps.pipeline.models import DataSource, ExperimentPlan, StageConfig, StageName

FINETUNE_FGD = FGDConfig(temperature=FINETUNE_TEMPERATURE)


def _stages(kd_large: str, kd_tutor: str, kd_edge: str, rd: str, finetune: str) -> Dict[str, StageConfig]:
    return {
        StageName.TRAIN_LARGE: StageConfig(train=train_preset(kd_large)),
        StageName.DISTILL_A: StageConfig(train=train_preset(kd_tutor)),
        StageName.DISTILL_B: StageConfig(train=train_preset(kd_edge)),
        StageName.RD_EMULATION: StageConfig(train=train_preset(rd), rd=EMULATION_RD),
        StageName.RD_CUSTOMER: StageConfig(train=train_preset(rd), rd=CUSTOMER_RD),
        StageName.DISTILL_C: StageConfig(train=train_preset(finetune), fgd=FINETUNE_FGD),
        StageName.BASELINE_DIRECT: StageConfig(train=train_preset(finetune)),
    }


TOY_STAGES = _stages('toy_train', 'toy_kd', 'toy_kd', 'toy_rd', 'toy_finetune')
VOC_STAGES = _stages('kd_tutor', 'kd_tutor', 'kd_edge', 'rd', 'finetune')


def toy_experiment_1() -> ExperimentPlan:
    """Learn a new category"""
    return ExperimentPlan(plan_id='toy-exp1', categories=CategoryPlan.toy_experiment_1(), stages=TOY_STAGES)


def toy_experiment_2() -> ExperimentPlan:
    """Learn one category, forget another; the forgotten one is waived at the gate"""
    categories = CategoryPlan.toy_experiment_2()
    return ExperimentPlan(
        plan_id='toy-exp2',
        categories=categories,
        stages=TOY_STAGES,
        thresholds=VerificationThresholds(waived_categories=categories.removed_categories),
    )


def _voc_source() -> VocSource:
    root = settings.DIREDI['VOC_ROOT']
    if not root:
        raise ConfigurationError('VOC plans need DIREDI_VOC_ROOT to point at a VOCdevkit directory')
    return VocSource(root=Path(root), input_size=320)


def voc_experiment_1() -> ExperimentPlan:
    return ExperimentPlan(plan_id='voc-exp1', categories=CategoryPlan.voc_experiment_1(),
                          source=DataSource.VOC, voc=_voc_source(), input_size=320, stages=VOC_STAGES)


def voc_experiment_2() -> ExperimentPlan:
    categories = CategoryPlan.voc_experiment_2()
    return ExperimentPlan(
        plan_id='voc-exp2',
        categories=categories,
        source=DataSource.VOC,
        voc=_voc_source(),
        input_size=320,
        stages=VOC_STAGES,
        thresholds=VerificationThresholds(waived_categories=categories.removed_categories),
    )


PRESETS: Dict[str, Callable[[], ExperimentPlan]] = {
    'toy-exp1': toy_experiment_1,
    'toy-exp2': toy_experiment_2,
    'voc-exp1': voc_experiment_1,
    'voc-exp2': voc_experiment_2,
}


def preset(name: str) -> ExperimentPlan:
    if name not in PRESETS:
        raise ConfigurationError(f'Unknown preset {name!r}; choose from {sorted(PRESETS)}')
    return PRESETS[name]()
