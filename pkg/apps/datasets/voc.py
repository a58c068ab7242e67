"""
PASCAL VOC ingestion (VOCdevkit/VOC<year>/{Annotations,JPEGImages,ImageSets/Main}).
"""
import logging
import xml.etree.ElementTree as ET
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from apps.core.exceptions import DatasetError
from apps.datasets.models import DatasetItem, DetectionDataset, Provenance
from apps.detectors.models import Annotation

logger = logging.getLogger(__name__)


def parse_annotation(path: Path) -> Tuple[Tuple[int, int], List[dict]]:
    """((width, height), objects) of one VOC xml file"""
    tree = ET.parse(path)
    size = tree.find('size')
    width = int(float(size.find('width').text))
    height = int(float(size.find('height').text))
    objects = []
    for obj in tree.findall('object'):
        box = obj.find('bndbox')
        difficult = obj.find('difficult')
        objects.append({
            'name': obj.find('name').text.strip(),
            'difficult': bool(int(difficult.text)) if difficult is not None else False,
            # VOC boxes are 1-based inclusive pixel indices
            'bbox': [float(box.find(k).text) - 1.0 for k in ('xmin', 'ymin')]
                    + [float(box.find(k).text) for k in ('xmax', 'ymax')],
        })
    return (width, height), objects


def read_split(root: Path, year: str, split: str) -> List[str]:
    path = root / f'VOC{year}' / 'ImageSets' / 'Main' / f'{split}.txt'
    if not path.exists():
        raise DatasetError(f'VOC split file {path} not found')
    return [line.strip() for line in path.read_text().splitlines() if line.strip()]


def load_voc(root, years: Sequence[str], split: str, plan_categories: Sequence[str],
             input_size: Optional[int] = None) -> DetectionDataset:
    """Images with at least one box of `plan_categories`; other boxes removed.

    With `input_size`, images are squared to that size on read and boxes
    scaled to match.
    """
    root = Path(root)
    categories = tuple(plan_categories)
    index = {name: i for i, name in enumerate(categories)}
    items, missing = [], []
    for year in years:
        for image_id in read_split(root, year, split):
            xml_path = root / f'VOC{year}' / 'Annotations' / f'{image_id}.xml'
            if not xml_path.exists():
                missing.append(str(xml_path))
                continue
            if not categories:
                continue
            (width, height), objects = parse_annotation(xml_path)
            kept = [o for o in objects if o['name'] in index]
            if not kept:
                continue
            boxes = np.array([o['bbox'] for o in kept], dtype=np.float32)
            if input_size:
                boxes *= np.array([input_size / width, input_size / height] * 2, dtype=np.float32)
            annotation = Annotation(
                f'{year}_{image_id}', boxes,
                [index[o['name']] for o in kept],
                [o['difficult'] for o in kept],
            )
            bound_w, bound_h = (input_size, input_size) if input_size else (width, height)
            items.append(DatasetItem(
                annotation.clipped(bound_w, bound_h),
                path=str(root / f'VOC{year}' / 'JPEGImages' / f'{image_id}.jpg'),
                resize_to=input_size,
            ))
    if missing:
        preview = ', '.join(missing[:10]) + (' ...' if len(missing) > 10 else '')
        raise DatasetError(f'{len(missing)} VOC annotation file(s) missing: {preview}')
    logger.info(f'Loaded VOC {"+".join(years)} {split}: {len(items)} images for {len(categories)} categories')
    return DetectionDataset(items, categories, Provenance.VOC)
