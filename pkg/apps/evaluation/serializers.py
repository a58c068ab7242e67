"""
Evaluation config serializer
"""
from rest_framework import serializers

from apps.core.serializers import ConfigSerializer
from apps.evaluation.models import EvalConfig, Interpolation


class EvalConfigSerializer(ConfigSerializer):
    config_class = EvalConfig

    iou_threshold = serializers.FloatField(default=0.5)
    score_threshold = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.3)
    ap_interpolation = serializers.ChoiceField(choices=Interpolation.choices, default=Interpolation.ALL_POINT)
    infer_score_threshold = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.05)
    nms_iou = serializers.FloatField(default=0.6)
    max_dets = serializers.IntegerField(min_value=1, default=100)
    batch_size = serializers.IntegerField(min_value=1, default=16)

    def validate_iou_threshold(self, value):
        if not 0 < value < 1:
            raise serializers.ValidationError('Must be strictly between 0 and 1')
        return value

    def validate_nms_iou(self, value):
        if not 0 < value < 1:
            raise serializers.ValidationError('Must be strictly between 0 and 1')
        return value
