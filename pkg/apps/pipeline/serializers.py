"""
Experiment plan serializer
"""
from pathlib import Path

from rest_framework import serializers

from apps.core.serializers import ConfigSerializer, StringListField, VersionedSerializer
from apps.datasets.models import VocSource
from apps.datasets.serializers import CategoryPlanSerializer, ToySpecSerializer
from apps.detectors.models import Tier
from apps.distillation.serializers import RDConfigSerializer, TrainConfigSerializer
from apps.evaluation.serializers import EvalConfigSerializer
from apps.fgd.serializers import FGDConfigSerializer
from apps.packets.serializers import SubstitutionConfigSerializer, VerificationThresholdsSerializer
from apps.pipeline.models import DataSource, ExperimentPlan, StageConfig, StageName


def build(serializer_class, validated_data):
    """Config object from already-validated nested data"""
    if validated_data is None:
        return None
    return serializer_class().create(dict(validated_data))


class VocSourceSerializer(ConfigSerializer):
    config_class = VocSource

    root = serializers.CharField()
    years = StringListField(min_length=1, default=['2007', '2012'])
    train_split = serializers.CharField(default='trainval')
    eval_split = serializers.CharField(default='test')
    input_size = serializers.IntegerField(min_value=32, default=96)

    def create(self, validated_data):
        validated_data['root'] = Path(validated_data['root'])
        validated_data['years'] = tuple(validated_data['years'])
        return super().create(validated_data)


class StageConfigSerializer(ConfigSerializer):
    config_class = StageConfig

    train = TrainConfigSerializer(required=False)
    fgd = FGDConfigSerializer(required=False)
    rd = RDConfigSerializer(required=False, allow_null=True)

    def create(self, validated_data):
        options = {}
        if 'train' in validated_data:
            options['train'] = build(TrainConfigSerializer, validated_data['train'])
        if 'fgd' in validated_data:
            options['fgd'] = build(FGDConfigSerializer, validated_data['fgd'])
        if validated_data.get('rd') is not None:
            options['rd'] = build(RDConfigSerializer, validated_data['rd'])
        return StageConfig(**options)


class ExperimentPlanSerializer(VersionedSerializer):
    """Plan file: one JSON document describing a full run"""
    config_class = ExperimentPlan

    plan_id = serializers.CharField()
    source = serializers.ChoiceField(choices=DataSource.choices, default=DataSource.TOY)
    categories = CategoryPlanSerializer()
    toy = ToySpecSerializer(required=False)
    voc = VocSourceSerializer(required=False, allow_null=True)
    tiers = serializers.DictField(child=serializers.ChoiceField(choices=Tier.choices), required=False)
    input_size = serializers.IntegerField(min_value=32, default=96)
    stages = serializers.DictField(child=StageConfigSerializer(), default=dict)
    substitution = SubstitutionConfigSerializer(required=False)
    thresholds = VerificationThresholdsSerializer(required=False)
    evaluation = EvalConfigSerializer(required=False)
    seed = serializers.IntegerField(min_value=0, default=0)
    output_dir = serializers.CharField(required=False, allow_null=True)
    inject_noise_delta = serializers.BooleanField(default=False)

    def validate_stages(self, value):
        unknown = sorted(set(value) - set(StageName.values))
        if unknown:
            raise serializers.ValidationError(f'Unknown stage(s) {unknown}; expected {StageName.values}')
        return value

    def validate_tiers(self, value):
        if set(value) != {'large', 'tutor', 'edge'}:
            raise serializers.ValidationError('Name exactly the large, tutor and edge tiers')
        return value

    def validate(self, attrs):
        if attrs['source'] == DataSource.VOC and not attrs.get('voc'):
            raise serializers.ValidationError({'voc': 'Required for VOC plans'})
        if attrs['input_size'] % 32:
            raise serializers.ValidationError({'input_size': 'Must be a multiple of 32'})
        return attrs

    def create(self, validated_data):
        validated_data.pop('format_version', None)
        nested = {
            'categories': CategoryPlanSerializer,
            'toy': ToySpecSerializer,
            'voc': VocSourceSerializer,
            'substitution': SubstitutionConfigSerializer,
            'thresholds': VerificationThresholdsSerializer,
            'evaluation': EvalConfigSerializer,
        }
        for key, serializer_class in nested.items():
            if key in validated_data:
                validated_data[key] = build(serializer_class, validated_data[key])
        validated_data['stages'] = {
            name: build(StageConfigSerializer, config) for name, config in validated_data['stages'].items()
        }
        return ExperimentPlan(**validated_data)
