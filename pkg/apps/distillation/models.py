"""
Training configs and records
"""
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional

from django.db import models

from apps.core.exceptions import ConfigurationError
from apps.core.utils import config_digest, to_jsonable


class Optimizer(models.TextChoices):
    SGD_MOMENTUM = 'sgd_momentum', 'SGD with momentum'
    ADAPTIVE = 'adaptive', 'AdamW'


class LrSchedule(models.TextChoices):
    CONSTANT = 'constant', 'Constant'
    STEP = 'step', 'Step decay at 2/3 and 8/9 of training'


@dataclass(frozen=True)
class TrainConfig:
    """One training run; `max_epochs` = 0 leaves the model untouched"""
    learning_rate: float = 1e-2
    max_epochs: int = 20
    batch_size: int = 16
    seed: int = 0
    optimizer: str = Optimizer.SGD_MOMENTUM
    weight_decay: float = 1e-4
    lr_schedule: str = LrSchedule.CONSTANT
    momentum: float = 0.9
    grad_clip_norm: float = 10.0
    hflip: bool = True
    eval_every: int = 0
    log_every: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError(f'learning_rate must be positive, got {self.learning_rate}')
        if self.max_epochs < 0:
            raise ConfigurationError(f'max_epochs must be non-negative, got {self.max_epochs}')
        if self.batch_size < 1:
            raise ConfigurationError(f'batch_size must be positive, got {self.batch_size}')
        if self.optimizer not in Optimizer.values:
            raise ConfigurationError(f'Unknown optimizer {self.optimizer!r}')
        if self.lr_schedule not in LrSchedule.values:
            raise ConfigurationError(f'Unknown lr_schedule {self.lr_schedule!r}')
        if self.weight_decay < 0 or self.grad_clip_norm <= 0:
            raise ConfigurationError('weight_decay must be >= 0 and grad_clip_norm > 0')

    @property
    def milestones(self) -> List[int]:
        if self.lr_schedule != LrSchedule.STEP:
            return []
        return sorted({max(1, round(self.max_epochs * 2 / 3)), max(1, round(self.max_epochs * 8 / 9))})

    def with_seed(self, seed: int) -> 'TrainConfig':
        return replace(self, seed=seed)


@dataclass(frozen=True)
class RDConfig:
    """Weights of the reverse-distillation objective: alpha * feature + beta * detection"""
    alpha_rd: float = 1.0
    beta_rd: float = 1.0

    def __post_init__(self):
        if self.alpha_rd < 0 or self.beta_rd < 0:
            raise ConfigurationError('alpha_rd and beta_rd must be non-negative')
        if self.alpha_rd == 0 and self.beta_rd == 0:
            raise ConfigurationError('alpha_rd and beta_rd cannot both be zero')


EMULATION_RD = RDConfig(alpha_rd=1.0, beta_rd=0.0)
CUSTOMER_RD = RDConfig(alpha_rd=1.0, beta_rd=1.0)

FINETUNE_TEMPERATURE = 1.5

# learning rates, epochs and batch sizes of the full-scale runs
TRAIN_PRESETS: Dict[str, TrainConfig] = {
    'kd_tutor': TrainConfig(learning_rate=1e-3, max_epochs=100, batch_size=16, lr_schedule=LrSchedule.STEP),
    'kd_edge': TrainConfig(learning_rate=1e-2, max_epochs=100, batch_size=16, lr_schedule=LrSchedule.STEP),
    'rd': TrainConfig(learning_rate=1e-3, max_epochs=100, batch_size=16, lr_schedule=LrSchedule.STEP),
    'finetune': TrainConfig(learning_rate=1e-4, max_epochs=20, batch_size=8),
    'toy_train': TrainConfig(learning_rate=1e-2, max_epochs=14, batch_size=16, lr_schedule=LrSchedule.STEP),
    'toy_kd': TrainConfig(learning_rate=1e-2, max_epochs=12, batch_size=16, lr_schedule=LrSchedule.STEP),
    'toy_rd': TrainConfig(learning_rate=1e-2, max_epochs=14, batch_size=16, lr_schedule=LrSchedule.STEP),
    'toy_finetune': TrainConfig(learning_rate=1e-2, max_epochs=8, batch_size=8),
}


def train_preset(name: str, **overrides) -> TrainConfig:
    if name not in TRAIN_PRESETS:
        raise ConfigurationError(f'Unknown training preset {name!r}; choose from {sorted(TRAIN_PRESETS)}')
    return replace(TRAIN_PRESETS[name], **overrides)


@dataclass
class EpochRecord:
    epoch: int
    total: float
    detect: float
    focal: float
    global_: float
    learning_rate: float
    seconds: float
    steps: int
    eval_map: Optional[float] = None

    @property
    def feature(self) -> float:
        return self.focal + self.global_


@dataclass
class TrainRecord:
    """Per-epoch loss components and provenance of one training run"""
    name: str
    config: Dict[str, Any]
    config_digest: str
    dataset_digest: str
    epochs: List[EpochRecord] = field(default_factory=list)
    evals: List[Dict[str, float]] = field(default_factory=list)
    final_parameter_digest: str = ''
    teacher_parameter_digest: Optional[str] = None
    wall_clock: float = 0.0

    @classmethod
    def start(cls, name: str, config: Any, dataset_digest: str, **extra) -> 'TrainRecord':
        payload = {'train': to_jsonable(config)}
        payload.update({k: to_jsonable(v) for k, v in extra.items()})
        return cls(name=name, config=payload, config_digest=config_digest(payload), dataset_digest=dataset_digest)

    @property
    def initial_map(self) -> Optional[float]:
        return self.evals[0]['mAP'] if self.evals else None

    @property
    def final_map(self) -> Optional[float]:
        return self.evals[-1]['mAP'] if self.evals else None

    def to_dict(self) -> Dict[str, Any]:
        return to_jsonable(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TrainRecord':
        data = dict(data)
        data['epochs'] = [EpochRecord(**e) for e in data.get('epochs', [])]
        return cls(**data)
