"""
Weight sets, knowledge packets and verification types
"""
import hashlib
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import torch
from django.db import models
from torch import Tensor

from apps.core.exceptions import ConfigurationError, IntegrityError
from apps.core.utils import to_jsonable

TRANSFER_PARTS = ('neck', 'head')

# anything else in a packet manifest is rejected on write and on read
PACKET_MANIFEST_FIELDS = frozenset({
    'architecture_digest',
    'known_class_names',
    'new_slots',
    'new_row_init_seed',
    'gamma_delta',
    'created_at',
    'presumed_fingerprint',
    'payload_sha256',
    'entries',
    'dtype',
})


class PadMode(models.TextChoices):
    INIT = 'init', 'Same initialization as the customer tutors'
    ZERO = 'zero', 'Zero rows'


class Verdict(models.TextChoices):
    PASS = 'pass', 'Pass'
    FAIL = 'fail', 'Fail'


def weight_architecture_digest(shapes: Sequence[Tuple[str, Sequence[int]]]) -> str:
    """Same digest as DetectorService.architecture_digest over (name, shape) pairs"""
    digest = hashlib.sha256()
    for name, shape in sorted(shapes):
        digest.update(f'{name}:{tuple(shape)};'.encode('utf-8'))
    return digest.hexdigest()


class WeightSet:
    """Named neck/head tensors in lexicographic order"""

    def __init__(self, entries: Mapping[str, Tensor]):
        foreign = sorted(n for n in entries if n.split('.', 1)[0] not in TRANSFER_PARTS)
        if foreign:
            raise ConfigurationError(f'Weight set entries outside {TRANSFER_PARTS}: {foreign}')
        self._entries: Dict[str, Tensor] = {name: entries[name] for name in sorted(entries)}

    def __len__(self):
        return len(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def items(self):
        return self._entries.items()

    @property
    def names(self) -> List[str]:
        return list(self._entries)

    @property
    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: tuple(t.shape) for name, t in self._entries.items()}

    @property
    def architecture_digest(self) -> str:
        return weight_architecture_digest(self.shapes.items())

    def numel(self) -> int:
        return sum(t.numel() for t in self._entries.values())

    def norm(self) -> float:
        return math.sqrt(sum(float((t.double() ** 2).sum()) for t in self._entries.values()))

    def to(self, dtype: torch.dtype) -> 'WeightSet':
        return WeightSet({name: t.to(dtype) for name, t in self._entries.items()})

    def equal(self, other: 'WeightSet') -> bool:
        """Bit-exact comparison (names, dtypes and values)"""
        return self.names == other.names and all(
            self[n].dtype == other[n].dtype and torch.equal(self[n], other[n]) for n in self.names
        )


@dataclass(frozen=True)
class SubstitutionConfig:
    """gamma scales tutor 2 in the delta, delta_update scales the delta on apply"""
    gamma_delta: float = 1.0
    delta_update: float = 1.0
    pad_mode: str = PadMode.INIT

    def __post_init__(self):
        for name in ('gamma_delta', 'delta_update'):
            if not math.isfinite(getattr(self, name)):
                raise ConfigurationError(f'{name} must be finite')
        if self.pad_mode not in PadMode.values:
            raise ConfigurationError(f'Unknown pad_mode {self.pad_mode!r}')


@dataclass
class KnowledgePacket:
    """Delta plus a whitelisted manifest; nothing customer-private is stored.

    New classes appear only as a count of anonymous slots after
    `known_class_names`.
    """
    delta: WeightSet
    manifest: Dict[str, Any]

    def __post_init__(self):
        check_manifest(self.manifest)

    @property
    def known_class_names(self) -> Tuple[str, ...]:
        return tuple(self.manifest['known_class_names'])

    @property
    def new_slots(self) -> int:
        return int(self.manifest['new_slots'])

    @property
    def architecture_digest(self) -> str:
        return self.manifest['architecture_digest']

    def slot_class_names(self, slot_names: Optional[Sequence[str]] = None) -> Tuple[str, ...]:
        """Class order the packet expects: known classes, then one name per slot"""
        if slot_names is None:
            slot_names = [f'new_{i}' for i in range(self.new_slots)]
        slot_names = tuple(slot_names)
        if len(slot_names) != self.new_slots:
            raise ConfigurationError(f'Packet has {self.new_slots} new slot(s), got names {list(slot_names)}')
        if set(slot_names) & set(self.known_class_names):
            raise ConfigurationError('Slot names collide with known class names')
        return self.known_class_names + slot_names

    def equal(self, other: 'KnowledgePacket') -> bool:
        return self.manifest == other.manifest and self.delta.equal(other.delta)


def check_manifest(manifest: Mapping[str, Any]) -> None:
    unknown = sorted(set(manifest) - PACKET_MANIFEST_FIELDS)
    if unknown:
        raise IntegrityError(f'Packet manifest carries non-whitelisted fields {unknown}')
    missing = sorted(PACKET_MANIFEST_FIELDS - set(manifest))
    if missing:
        raise IntegrityError(f'Packet manifest lacks {missing}')


@dataclass(frozen=True)
class VerificationThresholds:
    """Largest tolerated absolute AP drop per retained category"""
    default_max_drop: float = 0.10
    per_category: Dict[str, float] = field(default_factory=dict)
    waived_categories: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'waived_categories', tuple(self.waived_categories))
        object.__setattr__(self, 'per_category', dict(self.per_category))
        for value in [self.default_max_drop, *self.per_category.values()]:
            if not 0 <= value <= 1:
                raise ConfigurationError(f'AP drop thresholds must be in [0, 1], got {value}')

    def max_drop(self, category: str) -> float:
        return self.per_category.get(category, self.default_max_drop)


@dataclass
class VerificationReport:
    """Per-category AP before/after an update and the gate verdict.

    A waived category is still flagged when it regresses but does not
    fail the gate.
    """
    ap_before: Dict[str, float]
    ap_after: Dict[str, float]
    drops: Dict[str, float]
    regressed: List[str]
    waived_regressions: List[str]
    verdict: str
    thresholds: Dict[str, Any]
    map_before: float = 0.0
    map_after: float = 0.0
    dataset_digest: str = ''

    @property
    def passed(self) -> bool:
        return self.verdict == Verdict.PASS

    def to_dict(self) -> Dict[str, Any]:
        return to_jsonable(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'VerificationReport':
        return cls(**data)
