"""
FGD hyper-parameter serializer
"""
from rest_framework import serializers

from apps.core.serializers import ConfigSerializer
from apps.fgd.models import FGDConfig


class FGDConfigSerializer(ConfigSerializer):
    config_class = FGDConfig

    sigma_fg = serializers.FloatField(min_value=0.0, default=1.6e-3)
    beta_bg = serializers.FloatField(min_value=0.0, default=8e-4)
    gamma_attn = serializers.FloatField(min_value=0.0, default=8e-4)
    lambda_global = serializers.FloatField(min_value=0.0, default=8e-6)
    temperature = serializers.FloatField(default=0.5)

    def validate_temperature(self, value):
        if value <= 0:
            raise serializers.ValidationError('Temperature must be positive')
        return value
