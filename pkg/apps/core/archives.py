"""
Binary container shared by checkpoints and knowledge packets.

Layout (all integers little-endian)::

    magic        4 bytes   b'DRDC' (checkpoint) or b'DRDP' (packet)
    version      u16
    manifest_len u32
    manifest     manifest_len bytes, UTF-8 JSON with sorted keys
    payload_len  u64
    payload      payload_len bytes, safetensors encoding of the tensors
    checksum     32 bytes, SHA-256 of every byte before it
"""
import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Union

import torch
from safetensors.torch import load as load_tensors
from safetensors.torch import save as save_tensors

from apps.core.exceptions import ChecksumError, IntegrityError, TruncatedArtifactError
from apps.core.utils import to_jsonable

CHECKPOINT_MAGIC = b'DRDC'
PACKET_MAGIC = b'DRDP'
CHECKSUM_SIZE = 32

_HEAD = struct.Struct('<4sHI')
_PAYLOAD_LEN = struct.Struct('<Q')


@dataclass
class Archive:
    magic: bytes
    version: int
    manifest: Dict[str, Any]
    tensors: Dict[str, torch.Tensor]
    payload: bytes


def encode(magic: bytes, version: int, manifest: Dict[str, Any], tensors: Dict[str, torch.Tensor]) -> bytes:
    manifest_bytes = json.dumps(to_jsonable(manifest), sort_keys=True).encode('utf-8')
    payload = encode_payload(tensors)
    body = b''.join([
        _HEAD.pack(magic, version, len(manifest_bytes)),
        manifest_bytes,
        _PAYLOAD_LEN.pack(len(payload)),
        payload,
    ])
    return body + hashlib.sha256(body).digest()


def encode_payload(tensors: Dict[str, torch.Tensor]) -> bytes:
    # safetensors writes raw little-endian row-major buffers
    return save_tensors({name: t.detach().to('cpu').contiguous() for name, t in sorted(tensors.items())})


def decode(data: bytes, magic: bytes) -> Archive:
    if len(data) < _HEAD.size:
        raise TruncatedArtifactError('Artifact shorter than its header')
    found_magic, version, manifest_len = _HEAD.unpack_from(data, 0)
    if found_magic != magic:
        raise IntegrityError(f'Unexpected magic {found_magic!r}; expected {magic!r}')
    offset = _HEAD.size
    if len(data) < offset + manifest_len + _PAYLOAD_LEN.size:
        raise TruncatedArtifactError('Artifact truncated inside the manifest')
    manifest_bytes = data[offset:offset + manifest_len]
    offset += manifest_len
    (payload_len,) = _PAYLOAD_LEN.unpack_from(data, offset)
    offset += _PAYLOAD_LEN.size
    expected_size = offset + payload_len + CHECKSUM_SIZE
    if len(data) < expected_size:
        raise TruncatedArtifactError(
            f'Artifact truncated: {len(data)} bytes, header declares {expected_size}'
        )
    if len(data) > expected_size:
        raise IntegrityError(f'Trailing bytes after checksum ({len(data) - expected_size})')
    body = data[:offset + payload_len]
    checksum = data[offset + payload_len:]
    if hashlib.sha256(body).digest() != checksum:
        raise ChecksumError('Whole-file checksum does not match contents')
    payload = data[offset:offset + payload_len]
    try:
        manifest = json.loads(manifest_bytes.decode('utf-8'))
    except ValueError as exc:
        raise IntegrityError(f'Manifest is not valid JSON: {exc}') from exc
    return Archive(
        magic=found_magic,
        version=version,
        manifest=manifest,
        tensors=load_tensors(payload),
        payload=payload,
    )


def write_archive(path: Union[str, Path], magic: bytes, version: int,
                  manifest: Dict[str, Any], tensors: Dict[str, torch.Tensor]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = encode(magic, version, manifest, tensors)
    tmp = path.with_suffix(path.suffix + '.part')
    tmp.write_bytes(data)
    tmp.replace(path)
    return path


def read_archive(path: Union[str, Path], magic: bytes) -> Archive:
    return decode(Path(path).read_bytes(), magic)
