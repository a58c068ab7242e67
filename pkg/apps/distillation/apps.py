from django.apps import AppConfig


class DistillationConfig(AppConfig):
    name = 'apps.distillation'
    label = 'distillation'
    verbose_name = 'Distillation'
