"""
Custom exceptions for the application
"""
from django.core.management.base import CommandError


class ExitCode:
    """Process exit codes used by the diredi command"""
    SUCCESS = 0
    CONFIGURATION = 3
    GATE_FAILURE = 4
    NUMERIC = 5
    MISSING_ARTIFACT = 6
    INTEGRITY = 7
    SHAPE = 8
    DATASET = 9


class DiRediError(CommandError):
    """Base error; `returncode` is the exit status of the CLI"""
    returncode = 1
    default_detail = 'A framework error occurred.'
    default_code = 'error'

    def __init__(self, detail=None, code=None, returncode=None):
        self.detail = detail if detail is not None else self.default_detail
        self.code = code or self.default_code
        if returncode is None:
            returncode = type(self).returncode
        super().__init__(self.detail, returncode=returncode)

    def __str__(self):
        return str(self.detail)


class ConfigurationError(DiRediError):
    """Invalid config, plan or class-set mismatch"""
    returncode = ExitCode.CONFIGURATION
    default_detail = 'Invalid configuration.'
    default_code = 'configuration'


class VerificationGateError(DiRediError):
    """Manufacturer verification rejected an update"""
    returncode = ExitCode.GATE_FAILURE
    default_detail = 'Verification gate failed; update terminated.'
    default_code = 'gate_failed'


class NumericError(DiRediError):
    """NaN or Inf reached a loss or an input tensor"""
    returncode = ExitCode.NUMERIC
    default_detail = 'Non-finite value encountered.'
    default_code = 'numeric'


class ArtifactNotFoundError(DiRediError):
    """A stage input does not exist"""
    returncode = ExitCode.MISSING_ARTIFACT
    default_detail = 'Input artifact not found.'
    default_code = 'missing_artifact'

    def __init__(self, path, stage=None, **kwargs):
        self.path = str(path)
        self.stage = stage
        detail = f'Input artifact {self.path} not found'
        if stage:
            detail += f" (expected output of stage '{stage}')"
        super().__init__(detail, **kwargs)


class IntegrityError(DiRediError):
    """Checkpoint or packet failed an integrity check"""
    returncode = ExitCode.INTEGRITY
    default_detail = 'Artifact integrity check failed.'
    default_code = 'integrity'


class ChecksumError(IntegrityError):
    default_detail = 'Checksum mismatch.'
    default_code = 'checksum'


class TruncatedArtifactError(IntegrityError):
    default_detail = 'Artifact is truncated.'
    default_code = 'truncated'


class ArchitectureMismatchError(IntegrityError):
    default_detail = 'Architecture digest does not match the target model.'
    default_code = 'architecture_mismatch'


class ShapeError(DiRediError):
    """Tensor or weight-set shapes do not line up"""
    returncode = ExitCode.SHAPE
    default_detail = 'Shape mismatch.'
    default_code = 'shape'


class DatasetError(DiRediError):
    """Dataset could not be built or read"""
    returncode = ExitCode.DATASET
    default_detail = 'Dataset error.'
    default_code = 'dataset'


class DiRediWarning(UserWarning):
    """Non-fatal condition the operator should know about"""
