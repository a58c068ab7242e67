"""
Synthetic shapes dataset.

Each object is drawn on its own mask so its box is tight (`getbbox`), then
composited onto a noisy background. Classes come from a shuffled balanced
schedule; placements keep pairwise IoU under `max_overlap`, falling back to
the least-overlapping candidate.
"""
import logging
import math
from typing import Callable, Dict, List, Tuple

import numpy as np
import torch
from PIL import Image, ImageDraw
from torchvision.ops import box_iou

from apps.core.exceptions import DatasetError
from apps.datasets.models import DatasetItem, DetectionDataset, Provenance, ToySpec
from apps.detectors.models import Annotation

logger = logging.getLogger(__name__)

SPLITS = ('train', 'eval')
PLACEMENT_ATTEMPTS = 30

# base colour per class; shapes and hue both carry the class identity
PALETTE = {
    'disc': (230, 60, 60),
    'square': (60, 200, 80),
    'triangle': (70, 110, 240),
    'ring': (240, 200, 40),
    'cross': (220, 80, 220),
    'star': (60, 220, 220),
    'bar': (250, 140, 30),
    'diamond': (160, 90, 240),
    'crescent': (240, 240, 240),
    'chevron': (140, 220, 60),
    'arrow': (200, 170, 110),
    'hourglass': (255, 105, 180),
}

Box = Tuple[float, float, float, float]


def _polygon(cx: float, cy: float, radius: float, points: List[Tuple[float, float]]) -> List[Tuple[float, float]]:
    return [(cx + radius * x, cy + radius * y) for x, y in points]


def _star_points(spikes: int = 5, inner: float = 0.45) -> List[Tuple[float, float]]:
    points = []
    for k in range(spikes * 2):
        radius = 1.0 if k % 2 == 0 else inner
        angle = -math.pi / 2 + k * math.pi / spikes
        points.append((radius * math.cos(angle), radius * math.sin(angle)))
    return points


def draw_disc(draw: ImageDraw.ImageDraw, x: float, y: float, s: float) -> None:
    draw.ellipse([x, y, x + s, y + s], fill=255)


def draw_square(draw, x, y, s):
    draw.rectangle([x, y, x + s * 0.9, y + s * 0.9], fill=255)


def draw_triangle(draw, x, y, s):
    draw.polygon([(x + s / 2, y), (x + s, y + s), (x, y + s)], fill=255)


def draw_ring(draw, x, y, s):
    draw.ellipse([x, y, x + s, y + s], outline=255, width=max(2, int(s / 6)))


def draw_cross(draw, x, y, s):
    t = s / 3
    draw.rectangle([x + t, y, x + 2 * t, y + s], fill=255)
    draw.rectangle([x, y + t, x + s, y + 2 * t], fill=255)


def draw_star(draw, x, y, s):
    draw.polygon(_polygon(x + s / 2, y + s / 2, s / 2, _star_points()), fill=255)


def draw_bar(draw, x, y, s):
    draw.rectangle([x, y + s * 0.38, x + s, y + s * 0.62], fill=255)


def draw_diamond(draw, x, y, s):
    draw.polygon([(x + s / 2, y), (x + s, y + s / 2), (x + s / 2, y + s), (x, y + s / 2)], fill=255)


def draw_crescent(draw, x, y, s):
    draw.ellipse([x, y, x + s, y + s], fill=255)
    draw.ellipse([x + s * 0.35, y - s * 0.05, x + s * 1.25, y + s * 0.85], fill=0)


def draw_chevron(draw, x, y, s):
    draw.line([(x, y + s * 0.2), (x + s / 2, y + s * 0.8), (x + s, y + s * 0.2)],
              fill=255, width=max(2, int(s / 5)), joint='curve')


def draw_arrow(draw, x, y, s):
    draw.polygon([(x, y + s * 0.38), (x + s * 0.55, y + s * 0.38), (x + s * 0.55, y + s * 0.1), (x + s, y + s / 2),
                  (x + s * 0.55, y + s * 0.9), (x + s * 0.55, y + s * 0.62), (x, y + s * 0.62)], fill=255)


def draw_hourglass(draw, x, y, s):
    draw.polygon([(x, y), (x + s, y), (x + s / 2, y + s / 2)], fill=255)
    draw.polygon([(x, y + s), (x + s, y + s), (x + s / 2, y + s / 2)], fill=255)


RENDERERS: Dict[str, Callable] = {
    'disc': draw_disc,
    'square': draw_square,
    'triangle': draw_triangle,
    'ring': draw_ring,
    'cross': draw_cross,
    'star': draw_star,
    'bar': draw_bar,
    'diamond': draw_diamond,
    'crescent': draw_crescent,
    'chevron': draw_chevron,
    'arrow': draw_arrow,
    'hourglass': draw_hourglass,
}


def _max_overlap(box: Box, others: List[Box]) -> float:
    if not others:
        return 0.0
    return float(box_iou(torch.tensor([box]), torch.tensor(others)).max())


def render_object(name: str, canvas_size: int, x: float, y: float, size: float) -> Tuple[Image.Image, Box]:
    mask = Image.new('L', (canvas_size, canvas_size), 0)
    RENDERERS[name](ImageDraw.Draw(mask), x, y, size)
    bbox = mask.getbbox()
    if bbox is None:
        raise DatasetError(f'Shape {name!r} of size {size} rendered no pixels')
    return mask, tuple(float(v) for v in bbox)


def class_schedule(counts: List[int], num_classes: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Per-image label arrays drawn from one shuffled, balanced pool"""
    total = int(sum(counts))
    pool = np.tile(np.arange(num_classes), -(-total // num_classes))[:total] if total else np.zeros(0, int)
    rng.shuffle(pool)
    schedule, start = [], 0
    for count in counts:
        schedule.append(pool[start:start + count])
        start += count
    return schedule


def render_image(spec: ToySpec, labels: np.ndarray, rng: np.random.Generator, image_id: str) -> DatasetItem:
    size = spec.canvas_size
    background = rng.integers(20, 60, size=3)
    canvas = np.empty((size, size, 3), dtype=np.float64)
    canvas[:] = background
    boxes: List[Box] = []
    for label in labels:
        name = spec.class_names[label]
        best = None
        for _ in range(PLACEMENT_ATTEMPTS):
            extent = float(rng.uniform(*spec.object_size))
            x = float(rng.uniform(0, size - extent))
            y = float(rng.uniform(0, size - extent))
            mask, box = render_object(name, size, x, y, extent)
            overlap = _max_overlap(box, boxes)
            if best is None or overlap < best[0]:
                best = (overlap, mask, box)
            if overlap <= spec.max_overlap:
                break
        _, mask, box = best
        colour = np.clip(np.array(PALETTE[name]) + rng.integers(-25, 26, size=3), 0, 255)
        alpha = np.asarray(mask, dtype=np.float64)[..., None] / 255.0
        canvas = canvas * (1 - alpha) + colour * alpha
        boxes.append(box)
    if spec.noise_level > 0:
        canvas = canvas + rng.normal(0.0, spec.noise_level * 255.0, size=canvas.shape)
    pixels = np.clip(np.rint(canvas), 0, 255).astype(np.uint8)
    annotation = Annotation(image_id, np.array(boxes, dtype=np.float32).reshape(-1, 4), labels)
    return DatasetItem(annotation, pixels=pixels)


def generate_toy_dataset(spec: ToySpec, split: str = 'train') -> DetectionDataset:
    """One split of the toy dataset; each split has its own seed stream"""
    if split not in SPLITS:
        raise DatasetError(f'Unknown toy split {split!r}; expected one of {SPLITS}')
    rng = np.random.default_rng([spec.seed, SPLITS.index(split)])
    num_images = spec.images_for(split)
    lo, hi = spec.objects_per_image
    counts = rng.integers(lo, hi + 1, size=num_images).tolist()
    schedule = class_schedule(counts, len(spec.class_names), rng)
    items = [render_image(spec, labels, rng, f'{split}_{index:05d}') for index, labels in enumerate(schedule)]
    dataset = DetectionDataset(items, spec.class_names, Provenance.SYNTHETIC)
    logger.info(f'Generated toy {split} split: {len(dataset)} images, {sum(counts)} objects')
    return dataset
