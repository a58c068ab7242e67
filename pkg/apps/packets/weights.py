"""
Neck/head weight arithmetic: extraction, delta and substitution.

Deltas are held in float64 so that apply(compute(a, b, 1), 1) lands back
on b exactly once cast to the model's precision.
"""
import logging
import math
from typing import Iterable, Optional, Sequence

import torch

from apps.core.exceptions import ArchitectureMismatchError, ConfigurationError, ShapeError
from apps.detectors.models import PARTS, Detector
from apps.detectors.services import DetectorService
from apps.packets.models import TRANSFER_PARTS, WeightSet

logger = logging.getLogger(__name__)

DELTA_DTYPE = torch.float64

# final box and centerness layers of the head; injected noise concentrates here
BOX_OUTPUTS = ('head.bbox_pred.', 'head.centerness.')


def extract_weights(model: Detector, parts: Iterable[str] = TRANSFER_PARTS) -> WeightSet:
    """Copy of the parameters under `parts`; the backbone is never extracted"""
    parts = set(parts)
    unknown = sorted(parts - set(PARTS))
    if unknown:
        raise ConfigurationError(f'Unknown model part(s) {unknown}; expected a subset of {TRANSFER_PARTS}')
    if 'backbone' in parts:
        raise ConfigurationError('Backbone weights are not transferable')
    if not parts:
        raise ConfigurationError('No model part requested')
    entries = {}
    for part in sorted(parts):
        for name, parameter in model.named_part_parameters(part):
            entries[name] = parameter.detach().clone()
    return WeightSet(entries)


def _alignment_problems(a: WeightSet, b: WeightSet):
    problems = [f'{name}: only in first set' for name in a.names if name not in b]
    problems += [f'{name}: only in second set' for name in b.names if name not in a]
    problems += [
        f'{name}: {tuple(a[name].shape)} vs {tuple(b[name].shape)}'
        for name in a.names if name in b and a[name].shape != b[name].shape
    ]
    return problems


def compute_delta(w_t1: WeightSet, w_t2: WeightSet, gamma_delta: float = 1.0) -> WeightSet:
    """gamma * w_t2 - w_t1 per entry"""
    problems = _alignment_problems(w_t1, w_t2)
    if problems:
        raise ShapeError('Weight sets are not aligned: ' + '; '.join(problems))
    return WeightSet({
        name: gamma_delta * w_t2[name].to(DELTA_DTYPE) - w_t1[name].to(DELTA_DTYPE)
        for name in w_t1.names
    })


def apply_delta(model: Detector, delta: WeightSet, delta_update: float = 1.0) -> Detector:
    """Copy of `model` with neck/head set to W + delta_update * delta; backbone untouched"""
    expected = DetectorService.architecture_digest(model, TRANSFER_PARTS)
    if delta.architecture_digest != expected:
        current = WeightSet({n: p for n, p in model.named_parameters() if n.split('.', 1)[0] in TRANSFER_PARTS})
        problems = _alignment_problems(current, delta)
        raise ArchitectureMismatchError(
            'Delta does not fit the model architecture: ' + ('; '.join(problems) or 'digest differs')
        )
    updated = model.clone()
    parameters = dict(updated.named_parameters())
    with torch.no_grad():
        for name, change in delta.items():
            target = parameters[name]
            value = target.to(DELTA_DTYPE) + delta_update * change.to(DELTA_DTYPE)
            target.copy_(value.to(target.dtype))
    logger.info(f'Applied delta of {len(delta)} tensors (delta_update {delta_update}, norm {delta.norm():.4f})')
    return updated


def random_like_delta(delta: WeightSet, seed: int, prefixes: Optional[Sequence[str]] = None) -> WeightSet:
    """Gaussian noise with the same overall norm as `delta`.

    Without `prefixes` each tensor is rescaled to the norm of its counterpart.
    With `prefixes` the whole norm goes to the matching tensors and every other
    entry is zero.
    """
    generator = torch.Generator().manual_seed(seed)
    if prefixes is None:
        noisy = {}
        for name, tensor in delta.items():
            noise = torch.randn(tensor.shape, generator=generator, dtype=DELTA_DTYPE)
            target = tensor.to(DELTA_DTYPE).norm()
            current = noise.norm()
            noisy[name] = noise * (target / current) if current > 0 else torch.zeros_like(noise)
            noisy[name] = noisy[name].to(tensor.dtype)
        return WeightSet(noisy)

    selected = [name for name in delta.names if name.startswith(tuple(prefixes))]
    if not selected:
        raise ConfigurationError(f'No delta tensor matches {list(prefixes)}')
    noise = {name: torch.randn(delta[name].shape, generator=generator, dtype=DELTA_DTYPE) for name in selected}
    current = math.sqrt(sum(float(t.pow(2).sum()) for t in noise.values()))
    scale = delta.norm() / current if current > 0 else 0.0
    return WeightSet({
        name: (noise[name] * scale if name in noise else torch.zeros(tensor.shape, dtype=DELTA_DTYPE)).to(tensor.dtype)
        for name, tensor in delta.items()
    })
