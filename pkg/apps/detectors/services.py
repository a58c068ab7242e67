"""Detector service layer: construction, head re-shaping and digests."""
import hashlib
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence, Tuple, Union

import torch
from torch import Tensor

from apps.core.exceptions import ConfigurationError
from apps.core.services import BaseService
from apps.detectors import checkpoints
from apps.detectors.models import (
    PARTS, Detector, DetectorConfig, FeaturePyramid, HeadOutputs, prior_bias,
)
from apps.detectors.serializers import DetectorConfigSerializer

logger = logging.getLogger(__name__)

NEW_ROW_STD = 0.01


class DetectorService(BaseService):
    """Service for detector lifecycle operations"""

    @classmethod
    def config_from_dict(cls, data: Dict[str, Any]) -> DetectorConfig:
        return cls.validate(DetectorConfigSerializer, data)

    @classmethod
    def build_detector(cls, config: DetectorConfig, seed: int) -> Detector:
        """Detector whose initial parameters depend only on (config, seed)"""
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            detector = Detector(config)
        logger.debug(f'Built {config.tier} detector with {detector.parameter_count()} parameters (seed {seed})')
        return detector

    @classmethod
    def forward(cls, detector: Detector, images: Tensor) -> Tuple[FeaturePyramid, HeadOutputs]:
        return detector(images)

    @classmethod
    def new_class_rows(cls, channels: int, num_classes: int, seed: int) -> Tuple[Tensor, Tensor]:
        """Initial classification rows for every slot of a head with `num_classes` outputs.

        Row i depends only on (seed, i), so two heads re-shaped with the same
        seed get identical fresh rows at identical positions.
        """
        generator = torch.Generator().manual_seed(seed)
        weight = torch.randn((num_classes, channels, 3, 3), generator=generator) * NEW_ROW_STD
        bias = torch.full((num_classes,), prior_bias())
        return weight, bias

    @classmethod
    def reshape_head(cls, detector: Detector, class_names: Sequence[str], seed: int,
                     zero_new_rows: bool = False) -> Detector:
        """Copy of `detector` whose class rows follow `class_names`.

        Rows of already-known categories are copied by name; new rows are
        freshly initialized from `seed` (or zero-filled).
        """
        class_names = tuple(class_names)
        if not class_names:
            raise ConfigurationError('Cannot re-shape a head to zero classes')
        config = detector.config.with_classes(class_names)
        with torch.random.fork_rng(devices=[]):
            reshaped = Detector(config)
        state = {k: v for k, v in detector.state_dict().items() if not k.startswith('head.cls_score.')}
        reshaped.load_state_dict(state, strict=False)

        old_weight = detector.head.cls_score.weight.detach()
        old_bias = detector.head.cls_score.bias.detach()
        fresh_weight, fresh_bias = cls.new_class_rows(config.neck_channels, len(class_names), seed)
        if zero_new_rows:
            fresh_weight.zero_()
            fresh_bias.zero_()
        old_index = {name: i for i, name in enumerate(detector.class_names)}
        with torch.no_grad():
            for row, name in enumerate(class_names):
                if name in old_index:
                    reshaped.head.cls_score.weight[row] = old_weight[old_index[name]]
                    reshaped.head.cls_score.bias[row] = old_bias[old_index[name]]
                else:
                    reshaped.head.cls_score.weight[row] = fresh_weight[row]
                    reshaped.head.cls_score.bias[row] = fresh_bias[row]
        reshaped.train(detector.training)
        added = [n for n in class_names if n not in old_index]
        if added:
            logger.info(f'Head re-shaped: {len(added)} new class row(s) {added}')
        return reshaped

    @classmethod
    def _part_entries(cls, detector: Detector, parts: Iterable[str], with_buffers: bool):
        parts = list(parts)
        for part in parts:
            if part not in PARTS:
                raise ConfigurationError(f'Unknown model part {part!r}; expected one of {PARTS}')
        source = detector.state_dict() if with_buffers else dict(detector.named_parameters())
        for name in sorted(source):
            if name.split('.', 1)[0] in parts:
                yield name, source[name]

    @classmethod
    def parameter_digest(cls, detector: Detector, parts: Iterable[str] = PARTS) -> str:
        """SHA-256 over names, shapes and bytes of the requested parts (buffers included)"""
        digest = hashlib.sha256()
        for name, tensor in cls._part_entries(detector, parts, with_buffers=True):
            digest.update(name.encode('utf-8'))
            digest.update(str(tuple(tensor.shape)).encode('utf-8'))
            digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
        return digest.hexdigest()

    @classmethod
    def architecture_digest(cls, detector: Detector, parts: Iterable[str] = ('neck', 'head')) -> str:
        """SHA-256 over parameter names and shapes only"""
        digest = hashlib.sha256()
        for name, tensor in cls._part_entries(detector, parts, with_buffers=False):
            digest.update(f'{name}:{tuple(tensor.shape)};'.encode('utf-8'))
        return digest.hexdigest()

    @classmethod
    def save(cls, detector: Detector, path: Union[str, Path], provenance: Optional[Dict[str, Any]] = None,
             seed: Optional[int] = None) -> Path:
        return checkpoints.save_checkpoint(detector, path, provenance, seed)

    @classmethod
    def load(cls, path: Union[str, Path], stage: Optional[str] = None) -> Detector:
        return checkpoints.load_checkpoint(path, stage=stage)
