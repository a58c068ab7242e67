from django.apps import AppConfig


class FgdConfig(AppConfig):
    name = 'apps.fgd'
    label = 'fgd'
    verbose_name = 'Feature distillation losses'
