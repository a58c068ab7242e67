"""
Shared serializer building blocks for config files
"""
from rest_framework import serializers


class ConfigSerializer(serializers.Serializer):
    """Serializer that builds a config dataclass from validated data.

    Subclasses set `config_class`; `save()` returns an instance of it.
    """
    config_class = None

    def create(self, validated_data):
        return self.config_class(**validated_data)

    def update(self, instance, validated_data):
        raise NotImplementedError('Config objects are immutable')


class PositiveIntListField(serializers.ListField):
    child = serializers.IntegerField(min_value=1)


class StringListField(serializers.ListField):
    child = serializers.CharField()


class VersionedSerializer(ConfigSerializer):
    """Config document carrying a format_version field"""
    supported_version = 1
    format_version = serializers.IntegerField(required=False, default=1)

    def validate_format_version(self, value):
        if value != self.supported_version:
            raise serializers.ValidationError(
                f'Unsupported format_version {value}; expected {self.supported_version}'
            )
        return value

    def create(self, validated_data):
        validated_data.pop('format_version', None)
        return super().create(validated_data)
