"""
Torch-side access to detection datasets.
"""
from typing import List, Sequence, Tuple

import numpy as np
import torch
from torch import Tensor
from torch.utils.data import DataLoader, Dataset

from apps.core.exceptions import ConfigurationError, ShapeError
from apps.datasets.models import DetectionDataset
from apps.detectors.models import Annotation

PIXEL_MEAN = (0.485, 0.456, 0.406)
PIXEL_STD = (0.229, 0.224, 0.225)


def to_tensor(pixels: np.ndarray) -> Tensor:
    """H x W x 3 uint8 -> normalized 3 x H x W float32"""
    image = torch.from_numpy(np.ascontiguousarray(pixels)).permute(2, 0, 1).float() / 255.0
    mean = torch.tensor(PIXEL_MEAN).view(3, 1, 1)
    std = torch.tensor(PIXEL_STD).view(3, 1, 1)
    return (image - mean) / std


def class_mapping(dataset: DetectionDataset, class_names: Sequence[str], strict: bool = True) -> dict:
    """Dataset label index -> model class index"""
    missing = sorted(dataset.label_names() - set(class_names))
    if missing and strict:
        raise ConfigurationError(
            f'Dataset categories {missing} are not among the model classes {list(class_names)}'
        )
    return {
        old: list(class_names).index(name)
        for old, name in enumerate(dataset.category_names) if name in class_names
    }


class DetectionTorchDataset(Dataset):
    """Yields (image tensor, Annotation in model class order)"""

    def __init__(self, dataset: DetectionDataset, class_names: Sequence[str], hflip: bool = False,
                 seed: int = 0, strict: bool = True):
        self.dataset = dataset
        self.mapping = class_mapping(dataset, class_names, strict=strict)
        self.hflip = hflip
        self.generator = torch.Generator().manual_seed(seed + 1)

    def __len__(self):
        return len(self.dataset)

    def __getitem__(self, index: int) -> Tuple[Tensor, Annotation]:
        item = self.dataset.items[index]
        pixels = item.load_image()
        annotation = item.annotation.relabel(self.mapping)
        if self.hflip and torch.rand(1, generator=self.generator).item() < 0.5:
            pixels = pixels[:, ::-1]
            annotation = annotation.flipped(pixels.shape[1])
        return to_tensor(pixels), annotation


def collate(batch: List[Tuple[Tensor, Annotation]]) -> Tuple[Tensor, List[Annotation]]:
    images, annotations = zip(*batch)
    shapes = {tuple(image.shape) for image in images}
    if len(shapes) != 1:
        raise ShapeError(f'Images in a batch must share one resolution, got {sorted(shapes)}')
    return torch.stack(images), list(annotations)


def build_loader(dataset: DetectionDataset, class_names: Sequence[str], batch_size: int, seed: int,
                 shuffle: bool = True, hflip: bool = False, strict: bool = True) -> DataLoader:
    """Single-process loader whose batch order is a function of `seed`"""
    return DataLoader(
        DetectionTorchDataset(dataset, class_names, hflip=hflip, seed=seed, strict=strict),
        batch_size=batch_size,
        shuffle=shuffle,
        generator=torch.Generator().manual_seed(seed),
        collate_fn=collate,
        num_workers=0,
    )
