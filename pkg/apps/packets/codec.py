"""
Knowledge packet construction and the packet file format.

The file is the shared container with magic b'DRDP'; tensors are stored as
little-endian float32. The manifest is limited to PACKET_MANIFEST_FIELDS.
"""
import logging
from pathlib import Path
from typing import Optional, Sequence, Union

import torch
from django.conf import settings
from django.utils import timezone

from apps.core.archives import PACKET_MAGIC, encode_payload, read_archive, write_archive
from apps.core.exceptions import (
    ArchitectureMismatchError, ChecksumError, ConfigurationError, IntegrityError, ShapeError,
)
from apps.core.utils import require_file, sha256_bytes
from apps.detectors.models import Detector
from apps.detectors.services import DetectorService
from apps.packets.models import (
    TRANSFER_PARTS, KnowledgePacket, PadMode, SubstitutionConfig, WeightSet, check_manifest,
    weight_architecture_digest,
)
from apps.packets.weights import apply_delta, compute_delta, extract_weights

logger = logging.getLogger(__name__)

PACKET_DTYPE = torch.float32


def build_packet(tutor_1: Detector, tutor_2: Detector, known_class_names: Sequence[str],
                 substitution: SubstitutionConfig, new_row_init_seed: int,
                 presumed_fingerprint: str) -> KnowledgePacket:
    """Packet of gamma * W_t2 - W_t1 over neck and head.

    Both tutors must list `known_class_names` first; the classes after them
    travel only as a slot count.
    """
    known = tuple(known_class_names)
    for label, tutor in (('tutor 1', tutor_1), ('tutor 2', tutor_2)):
        if tutor.class_names[:len(known)] != known:
            raise ConfigurationError(
                f'{label} classes {list(tutor.class_names)} do not start with the known classes {list(known)}'
            )
    if tutor_1.class_names != tutor_2.class_names:
        raise ConfigurationError('Tutors must share one class order')

    delta = compute_delta(extract_weights(tutor_1), extract_weights(tutor_2), substitution.gamma_delta)
    stored = delta.to(PACKET_DTYPE)
    tensors = dict(stored.items())
    manifest = {
        'architecture_digest': DetectorService.architecture_digest(tutor_1, TRANSFER_PARTS),
        'known_class_names': list(known),
        'new_slots': len(tutor_1.class_names) - len(known),
        'new_row_init_seed': int(new_row_init_seed),
        'gamma_delta': float(substitution.gamma_delta),
        'created_at': timezone.now().isoformat(),
        'presumed_fingerprint': presumed_fingerprint,
        'payload_sha256': sha256_bytes(encode_payload(tensors)),
        'entries': [{'name': name, 'shape': list(shape)} for name, shape in stored.shapes.items()],
        'dtype': 'float32',
    }
    packet = KnowledgePacket(stored, manifest)
    logger.info(
        f'Built knowledge packet: {len(stored)} tensors, {stored.numel()} values, '
        f'{packet.new_slots} new slot(s), delta norm {delta.norm():.4f}'
    )
    return packet


def with_delta(packet: KnowledgePacket, delta: WeightSet) -> KnowledgePacket:
    """Same manifest, different tensors (fault injection)"""
    stored = delta.to(PACKET_DTYPE)
    manifest = dict(packet.manifest)
    manifest['payload_sha256'] = sha256_bytes(encode_payload(dict(stored.items())))
    return KnowledgePacket(stored, manifest)


def serialize_packet(packet: KnowledgePacket, path: Union[str, Path]) -> Path:
    check_manifest(packet.manifest)
    path = write_archive(path, PACKET_MAGIC, settings.DIREDI['PACKET_FORMAT_VERSION'],
                         packet.manifest, dict(packet.delta.items()))
    logger.info(f'Knowledge packet written to {path} ({path.stat().st_size} bytes)')
    return path


def deserialize_packet(path: Union[str, Path], stage: Optional[str] = None) -> KnowledgePacket:
    require_file(path, stage=stage)
    archive = read_archive(path, PACKET_MAGIC)
    if archive.version != settings.DIREDI['PACKET_FORMAT_VERSION']:
        raise IntegrityError(f'Unsupported packet version {archive.version} in {path}')
    manifest = archive.manifest
    check_manifest(manifest)
    if sha256_bytes(archive.payload) != manifest['payload_sha256']:
        raise ChecksumError(f'Packet {path}: payload checksum does not match manifest')

    declared = {entry['name']: tuple(entry['shape']) for entry in manifest['entries']}
    stored = {name: tuple(t.shape) for name, t in archive.tensors.items()}
    if declared != stored:
        raise ShapeError(f'Packet {path}: tensors do not match the manifest entries')
    if weight_architecture_digest(stored.items()) != manifest['architecture_digest']:
        raise ArchitectureMismatchError(f'Packet {path}: tensor shapes do not match its architecture digest')
    return KnowledgePacket(WeightSet(archive.tensors), manifest)


def pad_for_packet(model: Detector, packet: KnowledgePacket, slot_names: Optional[Sequence[str]] = None,
                   pad_mode: str = PadMode.INIT) -> Detector:
    """Copy of `model` with the packet's slot rows appended to the head"""
    if model.class_names != packet.known_class_names:
        raise ArchitectureMismatchError(
            f'Model classes {list(model.class_names)} differ from the packet\'s known classes '
            f'{list(packet.known_class_names)}'
        )
    class_names = packet.slot_class_names(slot_names)
    return DetectorService.reshape_head(model, class_names, packet.manifest['new_row_init_seed'],
                                        zero_new_rows=pad_mode == PadMode.ZERO)


def apply_packet(model: Detector, packet: KnowledgePacket, delta_update: float = 1.0,
                 slot_names: Optional[Sequence[str]] = None, pad_mode: str = PadMode.INIT) -> Detector:
    """Pad the head to the packet's class count, check the digest, then substitute"""
    padded = pad_for_packet(model, packet, slot_names, pad_mode)
    digest = DetectorService.architecture_digest(padded, TRANSFER_PARTS)
    if digest != packet.architecture_digest:
        raise ArchitectureMismatchError('Packet architecture digest does not match the padded model')
    return apply_delta(padded, packet.delta, delta_update)
