"""
Dataset config serializers
"""
from rest_framework import serializers

from apps.core.serializers import ConfigSerializer, StringListField
from apps.datasets.models import TOY_CLASSES, CategoryPlan, ToySpec


class IntRangeField(serializers.ListField):
    """[lo, hi] pair of non-negative integers"""
    child = serializers.IntegerField(min_value=0)

    def __init__(self, **kwargs):
        super().__init__(min_length=2, max_length=2, **kwargs)

    def to_internal_value(self, data):
        lo, hi = super().to_internal_value(data)
        if hi < lo:
            raise serializers.ValidationError(f'Range upper bound {hi} is below lower bound {lo}')
        return (lo, hi)


class ToySpecSerializer(ConfigSerializer):
    config_class = ToySpec

    train_images = serializers.IntegerField(min_value=0, default=480)
    eval_images = serializers.IntegerField(min_value=0, default=160)
    canvas_size = serializers.IntegerField(min_value=1, default=96)
    class_names = StringListField(min_length=1, default=list(TOY_CLASSES))
    objects_per_image = IntRangeField(default=[1, 4])
    object_size = IntRangeField(default=[16, 40])
    noise_level = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.04)
    max_overlap = serializers.FloatField(min_value=0.0, max_value=0.99, default=0.3)
    max_stride = serializers.IntegerField(min_value=1, default=32)
    seed = serializers.IntegerField(min_value=0, default=0)

    def validate_class_names(self, value):
        unknown = sorted(set(value) - set(TOY_CLASSES))
        if unknown:
            raise serializers.ValidationError(f'No renderer for {unknown}; choose from {list(TOY_CLASSES)}')
        if len(set(value)) != len(value):
            raise serializers.ValidationError('Toy classes must be distinct')
        return value

    def validate(self, attrs):
        if attrs['canvas_size'] % attrs['max_stride']:
            raise serializers.ValidationError(
                {'canvas_size': f'Must be a multiple of the maximum stride {attrs["max_stride"]}'}
            )
        if attrs['object_size'][1] > attrs['canvas_size']:
            raise serializers.ValidationError({'object_size': 'Objects do not fit on the canvas'})
        return attrs


class CategoryPlanSerializer(ConfigSerializer):
    config_class = CategoryPlan

    teacher_categories = StringListField(min_length=1)
    presumed_categories = StringListField(min_length=1)
    private_categories = StringListField(default=list)
    removed_categories = StringListField(default=list)
    eval_categories = StringListField(default=list)

    def validate(self, attrs):
        teacher = set(attrs['teacher_categories'])
        presumed = set(attrs['presumed_categories'])
        if not presumed <= teacher:
            raise serializers.ValidationError(
                {'presumed_categories': f'Not teacher categories: {sorted(presumed - teacher)}'}
            )
        if set(attrs['private_categories']) & presumed:
            raise serializers.ValidationError({'private_categories': 'Must not overlap presumed categories'})
        if not set(attrs['removed_categories']) <= presumed:
            raise serializers.ValidationError({'removed_categories': 'Must be presumed categories'})
        return attrs
