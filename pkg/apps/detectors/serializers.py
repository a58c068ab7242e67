"""
Detector config serializers
"""
import math

from rest_framework import serializers

from apps.core.serializers import ConfigSerializer, PositiveIntListField, StringListField
from apps.detectors.models import DetectorConfig, Tier, tier_config


class ScaleBoundField(serializers.Field):
    """Float bound that also accepts the string 'inf'"""

    def to_internal_value(self, data):
        if isinstance(data, str) and data.lower() in ('inf', 'infinity'):
            return math.inf
        try:
            value = float(data)
        except (TypeError, ValueError):
            raise serializers.ValidationError(f'Not a number: {data!r}')
        if math.isnan(value) or value < 0:
            raise serializers.ValidationError('Scale bounds must be non-negative numbers')
        return value

    def to_representation(self, value):
        return 'inf' if value == math.inf else value


class DetectorConfigSerializer(ConfigSerializer):
    """Detector architecture; omitted fields come from the tier preset"""
    config_class = DetectorConfig

    tier = serializers.ChoiceField(choices=Tier.choices)
    class_names = StringListField(min_length=1)
    backbone_channel_plan = PositiveIntListField(min_length=1, required=False)
    neck_channels = serializers.IntegerField(min_value=1, required=False)
    strides = PositiveIntListField(min_length=1, required=False)
    head_conv_depth = serializers.IntegerField(min_value=1, required=False)
    backbone_stage_depth = serializers.IntegerField(min_value=1, required=False)
    input_size = serializers.IntegerField(min_value=1, required=False)
    scale_ranges = serializers.ListField(
        child=serializers.ListField(child=ScaleBoundField(), min_length=2, max_length=2),
        required=False, allow_null=True,
    )

    def validate_class_names(self, value):
        if len(set(value)) != len(value):
            raise serializers.ValidationError('Class names must be unique')
        return value

    def create(self, validated_data):
        tier = validated_data.pop('tier')
        class_names = validated_data.pop('class_names')
        return tier_config(tier, class_names, **validated_data)
