"""
Utility functions for the application
"""
import dataclasses
import enum
import hashlib
import json
import logging
import random
import sys
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Union

import numpy as np
import torch
from django.conf import settings
from tqdm import tqdm

from apps.core.exceptions import ArtifactNotFoundError, NumericError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def to_jsonable(value: Any) -> Any:
    """Convert dataclasses, enums, paths and numpy scalars into JSON-ready values"""
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: to_jsonable(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and value == float('inf'):
        return 'inf'
    return value


def canonical_json(value: Any) -> str:
    """Stable JSON text: sorted keys, no whitespace variance"""
    return json.dumps(to_jsonable(value), sort_keys=True, separators=(',', ':'))


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def config_digest(value: Any) -> str:
    """Digest of any config-like value (dataclass, dict, list)"""
    return sha256_bytes(canonical_json(value).encode('utf-8'))


def write_json(path: PathLike, payload: Any) -> Path:
    """Write JSON with sorted keys and a trailing newline; returns the path"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(to_jsonable(payload), sort_keys=True, indent=2)
    path.write_text(text + '\n', encoding='utf-8')
    return path


def read_json(path: PathLike, stage: Optional[str] = None) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ArtifactNotFoundError(path, stage=stage)
    return json.loads(path.read_text(encoding='utf-8'))


def require_file(path: PathLike, stage: Optional[str] = None) -> Path:
    path = Path(path)
    if not path.exists():
        raise ArtifactNotFoundError(path, stage=stage)
    return path


def seed_everything(seed: int) -> torch.Generator:
    """Seed python, numpy and torch; returns a torch generator seeded the same way"""
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    return torch.Generator().manual_seed(seed)


def configure_torch() -> None:
    """Apply thread count and determinism from settings"""
    options = settings.DIREDI
    torch.set_num_threads(options['NUM_THREADS'])
    if options['DETERMINISTIC']:
        torch.use_deterministic_algorithms(True, warn_only=True)


def get_device() -> torch.device:
    return torch.device(settings.DIREDI['DEVICE'])


def ensure_finite(tensor: torch.Tensor, what: str) -> torch.Tensor:
    """Raise NumericError instead of letting NaN/Inf propagate"""
    if not torch.isfinite(tensor).all():
        raise NumericError(f'Non-finite values in {what}')
    return tensor


def progress(iterable: Iterable, **kwargs) -> Iterable:
    """tqdm wrapper honouring the PROGRESS setting"""
    disable = not settings.DIREDI['PROGRESS'] or not sys.stderr.isatty()
    return tqdm(iterable, disable=disable, leave=False, **kwargs)
