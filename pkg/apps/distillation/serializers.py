"""
Training config serializers
"""
from rest_framework import serializers

from apps.core.serializers import ConfigSerializer
from apps.distillation.models import LrSchedule, Optimizer, RDConfig, TrainConfig


class TrainConfigSerializer(ConfigSerializer):
    config_class = TrainConfig

    learning_rate = serializers.FloatField(default=1e-2)
    max_epochs = serializers.IntegerField(min_value=0, default=20)
    batch_size = serializers.IntegerField(min_value=1, default=16)
    seed = serializers.IntegerField(min_value=0, default=0)
    optimizer = serializers.ChoiceField(choices=Optimizer.choices, default=Optimizer.SGD_MOMENTUM)
    weight_decay = serializers.FloatField(min_value=0.0, default=1e-4)
    lr_schedule = serializers.ChoiceField(choices=LrSchedule.choices, default=LrSchedule.CONSTANT)
    momentum = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.9)
    grad_clip_norm = serializers.FloatField(default=10.0)
    hflip = serializers.BooleanField(default=True)
    eval_every = serializers.IntegerField(min_value=0, default=0)
    log_every = serializers.IntegerField(min_value=0, default=0)

    def validate_learning_rate(self, value):
        if value <= 0:
            raise serializers.ValidationError('Learning rate must be positive')
        return value

    def validate_grad_clip_norm(self, value):
        if value <= 0:
            raise serializers.ValidationError('Clip norm must be positive')
        return value


class RDConfigSerializer(ConfigSerializer):
    config_class = RDConfig

    alpha_rd = serializers.FloatField(min_value=0.0, default=1.0)
    beta_rd = serializers.FloatField(min_value=0.0, default=1.0)

    def validate(self, attrs):
        if attrs['alpha_rd'] == 0 and attrs['beta_rd'] == 0:
            raise serializers.ValidationError('alpha_rd and beta_rd cannot both be zero')
        return attrs
