"""
Pytest configuration and fixtures
"""
import pytest
import torch

from apps.datasets.models import CategoryPlan, ToySpec
from apps.datasets.toy import generate_toy_dataset
from apps.detectors.models import Tier, tier_config
from apps.detectors.services import DetectorService
from apps.distillation.models import TrainConfig
from apps.pipeline.models import StageName
from apps.pipeline.services import PipelineService

TOY_TEST_CLASSES = ('disc', 'square', 'triangle')

# stages that train; everything else in a plan runs without a TrainConfig
TRAINED_STAGES = (
    StageName.TRAIN_LARGE,
    StageName.DISTILL_A,
    StageName.DISTILL_B,
    StageName.RD_EMULATION,
    StageName.RD_CUSTOMER,
    StageName.DISTILL_C,
    StageName.BASELINE_DIRECT,
)


@pytest.fixture
def toy_spec():
    """Small three-class toy spec on a 64 pixel canvas"""
    return ToySpec(
        train_images=8,
        eval_images=4,
        canvas_size=64,
        class_names=TOY_TEST_CLASSES,
        objects_per_image=(1, 2),
        object_size=(16, 32),
    )


@pytest.fixture
def toy_dataset(toy_spec):
    return generate_toy_dataset(toy_spec, 'train')


@pytest.fixture
def category_plan():
    """disc and square are presumed, triangle is the customer's private class"""
    return CategoryPlan(
        teacher_categories=('disc', 'square'),
        presumed_categories=('disc', 'square'),
        private_categories=('triangle',),
    )


@pytest.fixture
def detector_config():
    return tier_config(Tier.TOY, ('disc', 'square'), input_size=64)


@pytest.fixture
def detector(detector_config):
    return DetectorService.build_detector(detector_config, seed=0)


@pytest.fixture
def images():
    generator = torch.Generator().manual_seed(0)
    return torch.randn((2, 3, 64, 64), generator=generator)


@pytest.fixture
def tiny_train():
    return TrainConfig(learning_rate=1e-3, max_epochs=1, batch_size=4, hflip=False)


@pytest.fixture
def tiny_plan_data():
    """Plan document for a full run that finishes in seconds"""
    return {
        'plan_id': 'tiny',
        'categories': {
            'teacher_categories': ['disc', 'square'],
            'presumed_categories': ['disc', 'square'],
            'private_categories': ['triangle'],
        },
        'toy': {
            'train_images': 16,
            'eval_images': 8,
            'canvas_size': 64,
            'class_names': list(TOY_TEST_CLASSES),
            'objects_per_image': [2, 3],
            'object_size': [16, 32],
        },
        'tiers': {'large': 'toy', 'tutor': 'toy', 'edge': 'toy'},
        'input_size': 64,
        'stages': {
            name: {'train': {'learning_rate': 1e-3, 'max_epochs': 1, 'batch_size': 4, 'hflip': False}}
            for name in TRAINED_STAGES
        },
        'thresholds': {'default_max_drop': 1.0},
        'evaluation': {'batch_size': 8},
    }


@pytest.fixture
def tiny_plan(tiny_plan_data):
    return PipelineService.plan(tiny_plan_data)


@pytest.fixture
def run_dir(tmp_path):
    return tmp_path / 'run'
