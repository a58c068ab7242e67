"""
Base service layer for business logic
"""
import logging
from typing import Any, Dict, Optional, Type

from rest_framework import serializers

from apps.core.exceptions import ConfigurationError

logger = logging.getLogger(__name__)


class BaseService:
    """Base service class for common operations"""

    @classmethod
    def validate(cls, serializer_class: Type[serializers.Serializer], data: Optional[Dict[str, Any]]) -> Any:
        """Run a config serializer and return its built object.

        Serializer validation errors become ConfigurationError so every
        caller maps them onto the same exit code.
        """
        serializer = serializer_class(data=data or {})
        if not serializer.is_valid():
            raise ConfigurationError(
                f'{serializer_class.__name__}: {_flatten_errors(serializer.errors)}'
            )
        return serializer.save()


def _flatten_errors(errors: Any, prefix: str = '') -> str:
    if isinstance(errors, dict):
        parts = [_flatten_errors(v, f'{prefix}{k}.') for k, v in errors.items()]
        return '; '.join(p for p in parts if p)
    if isinstance(errors, list):
        if all(not isinstance(e, (dict, list)) for e in errors):
            return f"{prefix.rstrip('.')}: {' '.join(str(e) for e in errors)}"
        return '; '.join(_flatten_errors(e, f'{prefix}{i}.') for i, e in enumerate(errors))
    return f"{prefix.rstrip('.')}: {errors}"
