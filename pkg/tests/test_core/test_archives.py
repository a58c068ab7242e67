"""
Tests for the shared binary container
"""
import pytest
import torch

from apps.core.archives import CHECKPOINT_MAGIC, PACKET_MAGIC, decode, encode, read_archive, write_archive
from apps.core.exceptions import ChecksumError, IntegrityError, TruncatedArtifactError

pytestmark = pytest.mark.unit


@pytest.fixture
def tensors():
    return {
        'neck.weight': torch.arange(12, dtype=torch.float32).reshape(3, 4),
        'head.bias': torch.tensor([0.5, -1.25], dtype=torch.float64),
    }


class TestArchiveEncoding:
    """Test archive encode/decode"""

    def test_round_trip_keeps_manifest_and_tensors(self, tensors):
        data = encode(PACKET_MAGIC, 1, {'b': 2, 'a': [1, 2]}, tensors)
        archive = decode(data, PACKET_MAGIC)
        assert archive.version == 1
        assert archive.manifest == {'a': [1, 2], 'b': 2}
        assert set(archive.tensors) == set(tensors)
        for name, tensor in tensors.items():
            assert archive.tensors[name].dtype == tensor.dtype
            assert torch.equal(archive.tensors[name], tensor)

    def test_encoding_is_deterministic(self, tensors):
        reordered = dict(reversed(list(tensors.items())))
        assert encode(PACKET_MAGIC, 1, {'x': 1}, tensors) == encode(PACKET_MAGIC, 1, {'x': 1}, reordered)

    def test_wrong_magic(self, tensors):
        data = encode(CHECKPOINT_MAGIC, 1, {}, tensors)
        with pytest.raises(IntegrityError):
            decode(data, PACKET_MAGIC)

    def test_flipped_byte_fails_checksum(self, tensors):
        data = bytearray(encode(PACKET_MAGIC, 1, {'x': 1}, tensors))
        data[-40] ^= 0xFF
        with pytest.raises(ChecksumError):
            decode(bytes(data), PACKET_MAGIC)

    def test_truncated_file(self, tensors):
        data = encode(PACKET_MAGIC, 1, {'x': 1}, tensors)
        with pytest.raises(TruncatedArtifactError):
            decode(data[:-10], PACKET_MAGIC)
        with pytest.raises(TruncatedArtifactError):
            decode(data[:3], PACKET_MAGIC)

    def test_trailing_bytes(self, tensors):
        data = encode(PACKET_MAGIC, 1, {'x': 1}, tensors)
        with pytest.raises(IntegrityError):
            decode(data + b'\x00', PACKET_MAGIC)


class TestArchiveFiles:
    """Test archive file helpers"""

    def test_write_then_read(self, tmp_path, tensors):
        path = write_archive(tmp_path / 'nested' / 'model.ckpt', CHECKPOINT_MAGIC, 1, {'k': 'v'}, tensors)
        assert path.exists()
        assert not path.with_suffix('.ckpt.part').exists()
        archive = read_archive(path, CHECKPOINT_MAGIC)
        assert archive.manifest == {'k': 'v'}
