"""
Packet and verification config serializers
"""
import math

from rest_framework import serializers

from apps.core.serializers import ConfigSerializer, StringListField
from apps.packets.models import PadMode, SubstitutionConfig, VerificationThresholds


class SubstitutionConfigSerializer(ConfigSerializer):
    config_class = SubstitutionConfig

    gamma_delta = serializers.FloatField(default=1.0)
    delta_update = serializers.FloatField(default=1.0)
    pad_mode = serializers.ChoiceField(choices=PadMode.choices, default=PadMode.INIT)

    def validate(self, attrs):
        for name in ('gamma_delta', 'delta_update'):
            if not math.isfinite(attrs[name]):
                raise serializers.ValidationError({name: 'Must be finite'})
        return attrs


class VerificationThresholdsSerializer(ConfigSerializer):
    config_class = VerificationThresholds

    default_max_drop = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.10)
    per_category = serializers.DictField(
        child=serializers.FloatField(min_value=0.0, max_value=1.0), default=dict
    )
    waived_categories = StringListField(default=list)

    def create(self, validated_data):
        validated_data['waived_categories'] = tuple(validated_data['waived_categories'])
        return super().create(validated_data)
