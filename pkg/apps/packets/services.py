"""Knowledge packet service layer"""
import logging
from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence, Union

from apps.core.services import BaseService
from apps.core.utils import read_json, write_json
from apps.datasets.models import DetectionDataset
from apps.detectors.models import Detector
from apps.evaluation.models import EvalConfig
from apps.packets.codec import (
    apply_packet, build_packet, deserialize_packet, serialize_packet, with_delta,
)
from apps.packets.models import (
    TRANSFER_PARTS, KnowledgePacket, SubstitutionConfig, VerificationReport, VerificationThresholds, WeightSet,
)
from apps.packets.serializers import SubstitutionConfigSerializer, VerificationThresholdsSerializer
from apps.packets.verification import verify_update
from apps.packets.weights import BOX_OUTPUTS, apply_delta, compute_delta, extract_weights, random_like_delta

logger = logging.getLogger(__name__)


def write_verification(report: VerificationReport, path: Union[str, Path]) -> Path:
    return write_json(path, report.to_dict())


def read_verification(path: Union[str, Path], stage: Optional[str] = None) -> VerificationReport:
    return VerificationReport.from_dict(read_json(path, stage=stage))


class PacketService(BaseService):
    """Service for delta extraction, transfer and the verification gate"""

    @classmethod
    def substitution_config(cls, data: Optional[Dict] = None) -> SubstitutionConfig:
        return cls.validate(SubstitutionConfigSerializer, data)

    @classmethod
    def thresholds(cls, data: Optional[Dict] = None) -> VerificationThresholds:
        return cls.validate(VerificationThresholdsSerializer, data)

    @classmethod
    def extract(cls, model: Detector, parts: Iterable[str] = TRANSFER_PARTS) -> WeightSet:
        return extract_weights(model, parts)

    @classmethod
    def delta(cls, w_t1: WeightSet, w_t2: WeightSet, gamma_delta: float = 1.0) -> WeightSet:
        return compute_delta(w_t1, w_t2, gamma_delta)

    @classmethod
    def apply(cls, model: Detector, delta: WeightSet, delta_update: float = 1.0) -> Detector:
        return apply_delta(model, delta, delta_update)

    @classmethod
    def build(cls, tutor_1: Detector, tutor_2: Detector, known_class_names: Sequence[str],
              substitution: SubstitutionConfig, new_row_init_seed: int, presumed_fingerprint: str,
              inject_noise_seed: Optional[int] = None) -> KnowledgePacket:
        """Packet from two customer tutors.

        `inject_noise_seed` swaps the delta for noise of the same norm on the box outputs.
        """
        packet = build_packet(tutor_1, tutor_2, known_class_names, substitution, new_row_init_seed,
                              presumed_fingerprint)
        if inject_noise_seed is not None:
            logger.warning(f'Replacing the packet delta with norm-matched noise (seed {inject_noise_seed})')
            packet = with_delta(packet, random_like_delta(packet.delta, inject_noise_seed, BOX_OUTPUTS))
        return packet

    @classmethod
    def apply_packet(cls, model: Detector, packet: KnowledgePacket, substitution: SubstitutionConfig,
                     slot_names: Optional[Sequence[str]] = None) -> Detector:
        return apply_packet(model, packet, substitution.delta_update, slot_names, substitution.pad_mode)

    @classmethod
    def verify(cls, original_tutor: Detector, updated_tutor: Detector, dataset: DetectionDataset,
               thresholds: Optional[VerificationThresholds] = None,
               eval_config: Optional[EvalConfig] = None) -> VerificationReport:
        return verify_update(original_tutor, updated_tutor, dataset, thresholds, eval_config)

    @classmethod
    def save(cls, packet: KnowledgePacket, path: Union[str, Path]) -> Path:
        return serialize_packet(packet, path)

    @classmethod
    def load(cls, path: Union[str, Path], stage: Optional[str] = None) -> KnowledgePacket:
        return deserialize_packet(path, stage=stage)
