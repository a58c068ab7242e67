"""
Dataset types: detection datasets, category plans and toy specs.
"""
import hashlib
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from django.db import models
from PIL import Image

from apps.core.exceptions import ConfigurationError, DatasetError
from apps.detectors.models import Annotation


class Provenance(models.TextChoices):
    VOC = 'voc', 'PASCAL VOC'
    SYNTHETIC = 'synthetic', 'Synthetic toy shapes'


class SplitMode(models.TextChoices):
    PRESUMED = 'presumed', 'Presumed data without removed categories'
    CUSTOMER_ACTUAL = 'customer_actual', 'Customer actual scenario'
    VERIFICATION = 'verification', 'Manufacturer verification'
    MANUFACTURER = 'manufacturer', 'Manufacturer presumed data'
    TEACHER = 'teacher', 'Large-model training data'


# ==================== DATASET ====================


@dataclass(eq=False)
class DatasetItem:
    """One image and its annotation.

    Pixels are either held in memory (H x W x 3 uint8) or read from `path`;
    `resize_to` squares the image on read.
    """
    annotation: Annotation
    pixels: Optional[np.ndarray] = None
    path: Optional[str] = None
    resize_to: Optional[int] = None

    @property
    def image_id(self) -> str:
        return self.annotation.image_id

    def load_image(self) -> np.ndarray:
        if self.pixels is not None:
            return self.pixels
        if self.path is None:
            raise DatasetError(f'Item {self.image_id} has neither pixels nor a path')
        try:
            with Image.open(self.path) as image:
                image = image.convert('RGB')
                if self.resize_to:
                    image = image.resize((self.resize_to, self.resize_to), Image.BILINEAR)
                return np.asarray(image, dtype=np.uint8)
        except OSError as exc:
            raise DatasetError(f'Cannot read image {self.path}: {exc}') from exc

    def with_annotation(self, annotation: Annotation) -> 'DatasetItem':
        return DatasetItem(annotation, self.pixels, self.path, self.resize_to)


@dataclass(eq=False)
class DetectionDataset:
    items: Tuple[DatasetItem, ...]
    category_names: Tuple[str, ...]
    provenance: str = Provenance.SYNTHETIC

    def __post_init__(self):
        self.items = tuple(self.items)
        self.category_names = tuple(self.category_names)
        if len(set(self.category_names)) != len(self.category_names):
            raise DatasetError('Duplicate category names')
        num_categories = len(self.category_names)
        for item in self.items:
            labels = item.annotation.labels
            if len(labels) and (labels.min() < 0 or labels.max() >= num_categories):
                raise DatasetError(f'Item {item.image_id} has a label outside {list(self.category_names)}')

    def __len__(self):
        return len(self.items)

    def __iter__(self) -> Iterator[DatasetItem]:
        return iter(self.items)

    @property
    def annotations(self) -> List[Annotation]:
        return [item.annotation for item in self.items]

    @cached_property
    def digest(self) -> str:
        from apps.datasets.services import dataset_fingerprint

        return dataset_fingerprint(self)

    def label_names(self) -> set:
        return {self.category_names[l] for a in self.annotations for l in a.labels}

    def box_counts(self) -> Dict[str, int]:
        counts = {name: 0 for name in self.category_names}
        for annotation in self.annotations:
            for label in annotation.labels:
                counts[self.category_names[label]] += 1
        return counts


# ==================== CATEGORY PLAN ====================

TOY_CLASSES = ('disc', 'square', 'triangle', 'ring', 'cross', 'star', 'bar', 'diamond', 'crescent', 'chevron',
               'arrow', 'hourglass')

# role each toy shape plays in the VOC experiment layout
TOY_ROLES = {
    'aeroplane': 'disc',
    'bus': 'square',
    'horse': 'triangle',
    'motorbike': 'ring',
    'person': 'cross',
    'cat': 'star',
    'dog': 'bar',
    'bird': 'diamond',
    'car': 'crescent',
    'cow': 'chevron',
    'sheep': 'arrow',
    'tvmonitor': 'hourglass',
}

VOC_TEACHER = ('aeroplane', 'bird', 'bus', 'car', 'cow', 'horse', 'motorbike', 'person', 'sheep', 'tvmonitor')
VOC_PRESUMED = ('aeroplane', 'bus', 'horse', 'motorbike', 'person')


def _unique(names: Sequence[str]) -> Tuple[str, ...]:
    return tuple(dict.fromkeys(names))


@dataclass(frozen=True)
class CategoryPlan:
    """Which categories are presumed, private and removed in one experiment"""
    teacher_categories: Tuple[str, ...]
    presumed_categories: Tuple[str, ...]
    private_categories: Tuple[str, ...] = ()
    removed_categories: Tuple[str, ...] = ()
    eval_categories: Tuple[str, ...] = ()

    def __post_init__(self):
        for name in ('teacher_categories', 'presumed_categories', 'private_categories',
                     'removed_categories', 'eval_categories'):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.eval_categories:
            object.__setattr__(self, 'eval_categories', self.customer_categories)
        self.validate()

    def validate(self) -> None:
        teacher, presumed = set(self.teacher_categories), set(self.presumed_categories)
        if not presumed <= teacher:
            raise ConfigurationError(f'Presumed categories {sorted(presumed - teacher)} are not teacher categories')
        if set(self.private_categories) & presumed:
            raise ConfigurationError('Private categories must not overlap presumed categories')
        if not set(self.removed_categories) <= presumed:
            raise ConfigurationError('Removed categories must be presumed categories')

    @property
    def retained_categories(self) -> Tuple[str, ...]:
        return tuple(c for c in self.presumed_categories if c not in self.removed_categories)

    @property
    def customer_categories(self) -> Tuple[str, ...]:
        return _unique(self.retained_categories + self.private_categories)

    @property
    def updated_class_names(self) -> Tuple[str, ...]:
        """Class order of customer tutors and updated models: presumed, then private"""
        return _unique(self.presumed_categories + self.private_categories)

    def categories_for(self, mode: str) -> Tuple[str, ...]:
        if mode == SplitMode.PRESUMED:
            return self.retained_categories
        if mode == SplitMode.CUSTOMER_ACTUAL:
            return self.customer_categories
        if mode in (SplitMode.VERIFICATION, SplitMode.MANUFACTURER):
            return self.presumed_categories
        if mode == SplitMode.TEACHER:
            return self.teacher_categories
        raise ConfigurationError(f'Unknown split mode {mode!r}')

    @classmethod
    def voc_experiment_1(cls) -> 'CategoryPlan':
        return cls(VOC_TEACHER, VOC_PRESUMED, private_categories=('cat',))

    @classmethod
    def voc_experiment_2(cls) -> 'CategoryPlan':
        return cls(VOC_TEACHER, VOC_PRESUMED, private_categories=('dog',), removed_categories=('horse',))

    @classmethod
    def toy_experiment_1(cls) -> 'CategoryPlan':
        return cls._toy(cls.voc_experiment_1())

    @classmethod
    def toy_experiment_2(cls) -> 'CategoryPlan':
        return cls._toy(cls.voc_experiment_2())

    @classmethod
    def _toy(cls, voc_plan: 'CategoryPlan') -> 'CategoryPlan':
        teacher = tuple(TOY_ROLES[c] for c in voc_plan.teacher_categories)
        return CategoryPlan(
            teacher_categories=teacher,
            presumed_categories=tuple(TOY_ROLES[c] for c in voc_plan.presumed_categories),
            private_categories=tuple(TOY_ROLES[c] for c in voc_plan.private_categories),
            removed_categories=tuple(TOY_ROLES[c] for c in voc_plan.removed_categories),
        )


# ==================== TOY SPEC ====================


@dataclass(frozen=True)
class ToySpec:
    train_images: int = 480
    eval_images: int = 160
    canvas_size: int = 96
    class_names: Tuple[str, ...] = TOY_CLASSES
    objects_per_image: Tuple[int, int] = (1, 4)
    object_size: Tuple[int, int] = (16, 40)
    noise_level: float = 0.04
    max_overlap: float = 0.3
    max_stride: int = 32
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'class_names', tuple(self.class_names))
        object.__setattr__(self, 'objects_per_image', tuple(self.objects_per_image))
        object.__setattr__(self, 'object_size', tuple(self.object_size))
        self.validate()

    def validate(self) -> None:
        if len(set(self.class_names)) != len(self.class_names) or not self.class_names:
            raise ConfigurationError('Toy classes must be distinct and non-empty')
        unknown = set(self.class_names) - set(TOY_CLASSES)
        if unknown:
            raise ConfigurationError(f'No renderer for toy classes {sorted(unknown)}')
        if self.canvas_size <= 0 or self.canvas_size % self.max_stride:
            raise ConfigurationError(f'Canvas {self.canvas_size} must be a multiple of {self.max_stride}')
        lo, hi = self.objects_per_image
        if lo < 0 or hi < lo:
            raise ConfigurationError(f'Invalid objects_per_image range {self.objects_per_image}')
        smallest, largest = self.object_size
        if smallest < 4 or largest < smallest:
            raise ConfigurationError(f'Invalid object_size range {self.object_size}')
        if largest > self.canvas_size:
            raise DatasetError(f'Canvas {self.canvas_size} is too small for objects up to {largest} pixels')
        if self.train_images < 0 or self.eval_images < 0:
            raise ConfigurationError('Image counts must be non-negative')
        if not 0 <= self.noise_level <= 1 or not 0 <= self.max_overlap < 1:
            raise ConfigurationError('noise_level must be in [0, 1] and max_overlap in [0, 1)')

    def images_for(self, split: str) -> int:
        return self.eval_images if split == 'eval' else self.train_images


@dataclass
class VocSource:
    root: Path
    years: Tuple[str, ...] = ('2007', '2012')
    train_split: str = 'trainval'
    eval_split: str = 'test'
    input_size: int = 96


def fingerprint_item(item: DatasetItem, category_names: Sequence[str]) -> str:
    """Content digest of one item; labels are hashed by category name"""
    digest = hashlib.sha256()
    annotation = item.annotation
    digest.update(annotation.image_id.encode('utf-8'))
    digest.update(np.ascontiguousarray(annotation.boxes, dtype='<f4').tobytes())
    digest.update('|'.join(category_names[l] for l in annotation.labels).encode('utf-8'))
    digest.update(np.packbits(annotation.difficult).tobytes())
    if item.pixels is not None:
        digest.update(hashlib.sha256(np.ascontiguousarray(item.pixels).tobytes()).digest())
    elif item.path is not None:
        digest.update(Path(item.path).name.encode('utf-8'))
    return digest.hexdigest()
