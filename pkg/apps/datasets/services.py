"""Dataset service layer: splitting, fingerprints and persistence."""
import hashlib
import logging
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import torch
from PIL import Image
from torchvision.ops import box_iou

from apps.core.exceptions import DatasetError
from apps.core.services import BaseService
from apps.core.utils import read_json, write_json
from apps.datasets.models import (
    CategoryPlan, DatasetItem, DetectionDataset, ToySpec, fingerprint_item,
)
from apps.datasets.serializers import CategoryPlanSerializer, ToySpecSerializer
from apps.datasets.toy import generate_toy_dataset
from apps.datasets.voc import load_voc
from apps.detectors.models import Annotation

logger = logging.getLogger(__name__)

ANNOTATION_FILE = 'annotations.json'
DEFAULT_DROP_OVERLAP_IOU = 0.3


def dataset_fingerprint(dataset: DetectionDataset) -> str:
    """Order-independent content hash"""
    digest = hashlib.sha256()
    digest.update('|'.join(dataset.category_names).encode('utf-8'))
    for item_digest in sorted(fingerprint_item(item, dataset.category_names) for item in dataset):
        digest.update(item_digest.encode('ascii'))
    return digest.hexdigest()


def _hidden_overlap(annotation: Annotation, keep: np.ndarray, threshold: float) -> bool:
    """True when a dropped box overlaps a kept one above `threshold`"""
    if keep.all() or not keep.any():
        return False
    kept = torch.from_numpy(annotation.boxes[keep])
    dropped = torch.from_numpy(annotation.boxes[~keep])
    return bool((box_iou(dropped, kept) > threshold).any())


def split_by_plan(dataset: DetectionDataset, plan: CategoryPlan, mode: str,
                  drop_overlap_iou: Optional[float] = DEFAULT_DROP_OVERLAP_IOU) -> DetectionDataset:
    """Keep the categories `mode` selects from `plan`.

    Images left without boxes are dropped. With `drop_overlap_iou`, images
    whose excluded objects overlap kept ones above that IoU are dropped too;
    None keeps them.
    """
    categories = plan.categories_for(mode)
    mapping = {
        old: categories.index(name)
        for old, name in enumerate(dataset.category_names) if name in categories
    }
    items = []
    overlapping = 0
    for item in dataset:
        annotation = item.annotation
        keep = np.array([int(l) in mapping for l in annotation.labels], dtype=bool)
        if not keep.any():
            continue
        if drop_overlap_iou is not None and _hidden_overlap(annotation, keep, drop_overlap_iou):
            overlapping += 1
            continue
        items.append(item.with_annotation(annotation.relabel(mapping)))
    logger.info(
        f'Split {mode}: {len(items)}/{len(dataset)} images kept for {list(categories)} '
        f'({overlapping} dropped for hidden overlap)'
    )
    return DetectionDataset(items, categories, dataset.provenance)


def save_dataset(dataset: DetectionDataset, directory: Union[str, Path]) -> Path:
    directory = Path(directory)
    image_dir = directory / 'images'
    image_dir.mkdir(parents=True, exist_ok=True)
    records, saved = [], []
    for item in dataset:
        filename = f'{item.image_id}.png'
        pixels = item.load_image()
        Image.fromarray(pixels).save(image_dir / filename)
        saved.append(DatasetItem(item.annotation, pixels=pixels))
        annotation = item.annotation
        records.append({
            'image_id': annotation.image_id,
            'file': f'images/{filename}',
            'boxes': annotation.boxes.tolist(),
            'labels': annotation.labels.tolist(),
            'difficult': annotation.difficult.tolist(),
        })
    write_json(directory / ANNOTATION_FILE, {
        'category_names': list(dataset.category_names),
        'provenance': dataset.provenance,
        'digest': DetectionDataset(saved, dataset.category_names, dataset.provenance).digest,
        'items': records,
    })
    return directory


def load_dataset(directory: Union[str, Path], stage: Optional[str] = None) -> DetectionDataset:
    directory = Path(directory)
    document = read_json(directory / ANNOTATION_FILE, stage=stage)
    items = []
    for record in document['items']:
        path = directory / record['file']
        try:
            with Image.open(path) as image:
                pixels = np.asarray(image.convert('RGB'), dtype=np.uint8)
        except OSError as exc:
            raise DatasetError(f'Cannot read {path}: {exc}') from exc
        annotation = Annotation(record['image_id'], record['boxes'], record['labels'], record['difficult'])
        items.append(DatasetItem(annotation, pixels=pixels))
    dataset = DetectionDataset(items, document['category_names'], document['provenance'])
    if document.get('digest') and dataset.digest != document['digest']:
        raise DatasetError(f'Dataset {directory} does not match its recorded digest')
    return dataset


class DatasetService(BaseService):
    """Service for dataset construction"""

    @classmethod
    def toy_spec(cls, data: Optional[Dict]) -> ToySpec:
        return cls.validate(ToySpecSerializer, data)

    @classmethod
    def category_plan(cls, data: Dict) -> CategoryPlan:
        return cls.validate(CategoryPlanSerializer, data)

    @classmethod
    def generate_toy(cls, spec: ToySpec, split: str = 'train') -> DetectionDataset:
        return generate_toy_dataset(spec, split)

    @classmethod
    def load_voc(cls, root, years, split, plan_categories, input_size=None) -> DetectionDataset:
        return load_voc(root, years, split, plan_categories, input_size)

    @classmethod
    def split(cls, dataset: DetectionDataset, plan: CategoryPlan, mode: str,
              drop_overlap_iou: Optional[float] = DEFAULT_DROP_OVERLAP_IOU) -> DetectionDataset:
        return split_by_plan(dataset, plan, mode, drop_overlap_iou)

    @classmethod
    def fingerprint(cls, dataset: DetectionDataset) -> str:
        return dataset_fingerprint(dataset)

    @classmethod
    def save(cls, dataset: DetectionDataset, directory) -> Path:
        return save_dataset(dataset, directory)

    @classmethod
    def load(cls, directory, stage: Optional[str] = None) -> DetectionDataset:
        return load_dataset(directory, stage=stage)
