"""
Checkpoint files: detector config, parameter manifest and tensors in one archive.
"""
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

from django.conf import settings

from apps.core.archives import CHECKPOINT_MAGIC, read_archive, write_archive
from apps.core.exceptions import IntegrityError, ShapeError
from apps.core.utils import require_file, to_jsonable
from apps.detectors.models import PARTS, Detector

logger = logging.getLogger(__name__)


def checkpoint_manifest(detector: Detector, seed: Optional[int], provenance: Dict[str, Any]) -> Dict[str, Any]:
    from apps.detectors.services import DetectorService

    state = detector.state_dict()
    return {
        'config': to_jsonable(detector.config),
        'class_names': list(detector.class_names),
        'parameters': [
            {'name': name, 'shape': list(tensor.shape), 'dtype': str(tensor.dtype).replace('torch.', '')}
            for name, tensor in sorted(state.items())
        ],
        'part_digests': {part: DetectorService.parameter_digest(detector, [part]) for part in PARTS},
        'seed': seed,
        'provenance': provenance,
    }


def save_checkpoint(detector: Detector, path: Union[str, Path], provenance: Optional[Dict[str, Any]] = None,
                    seed: Optional[int] = None) -> Path:
    manifest = checkpoint_manifest(detector, seed, provenance or {})
    path = write_archive(path, CHECKPOINT_MAGIC, settings.DIREDI['CHECKPOINT_FORMAT_VERSION'],
                         manifest, detector.state_dict())
    logger.info(f'Checkpoint written to {path} ({detector.parameter_count()} parameters)')
    return path


def read_checkpoint(path: Union[str, Path], stage: Optional[str] = None):
    """Decoded archive of a checkpoint; raises the integrity errors of the container"""
    require_file(path, stage=stage)
    archive = read_archive(path, CHECKPOINT_MAGIC)
    if archive.version != settings.DIREDI['CHECKPOINT_FORMAT_VERSION']:
        raise IntegrityError(f'Unsupported checkpoint version {archive.version} in {path}')
    return archive


def load_checkpoint(path: Union[str, Path], stage: Optional[str] = None) -> Detector:
    from apps.detectors.services import DetectorService

    archive = read_checkpoint(path, stage=stage)
    config = DetectorService.config_from_dict(archive.manifest['config'])
    detector = Detector(config)
    state = detector.state_dict()

    problems = []
    declared = {entry['name']: tuple(entry['shape']) for entry in archive.manifest['parameters']}
    for name, tensor in state.items():
        stored = archive.tensors.get(name)
        if stored is None:
            problems.append(f'{name}: missing')
        elif tuple(stored.shape) != tuple(tensor.shape) or declared.get(name) != tuple(tensor.shape):
            problems.append(f'{name}: stored {tuple(stored.shape)}, expected {tuple(tensor.shape)}')
    extra = sorted(set(archive.tensors) - set(state))
    problems += [f'{name}: unexpected' for name in extra]
    if problems:
        raise ShapeError(f'Checkpoint {path} does not fit its config: ' + '; '.join(problems))

    detector.load_state_dict({name: archive.tensors[name].to(state[name].dtype) for name in state})
    for part, digest in archive.manifest.get('part_digests', {}).items():
        if DetectorService.parameter_digest(detector, [part]) != digest:
            raise IntegrityError(f'Checkpoint {path}: {part} digest does not match manifest')
    detector.eval()
    return detector
