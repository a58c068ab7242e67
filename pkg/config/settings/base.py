"""
Django settings for the DiReDi project.
"""
from pathlib import Path
from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent.parent

# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = config('SECRET_KEY', default='django-insecure-change-me-in-production')

# Application definition
DJANGO_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',
]

THIRD_PARTY_APPS = [
    'rest_framework',
]

LOCAL_APPS = [
    'apps.core.apps.CoreConfig',
    'apps.detectors.apps.DetectorsConfig',
    'apps.fgd.apps.FgdConfig',
    'apps.datasets.apps.DatasetsConfig',
    'apps.evaluation.apps.EvaluationConfig',
    'apps.distillation.apps.DistillationConfig',
    'apps.packets.apps.PacketsConfig',
    'apps.pipeline.apps.PipelineConfig',
]

INSTALLED_APPS = DJANGO_APPS + THIRD_PARTY_APPS + LOCAL_APPS

# No database: every artifact is a file under the run directory
DATABASES = {}

# Internationalization
LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = True
USE_TZ = True

# Default primary key field type
DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# REST Framework (serializers only validate config and plan files)
REST_FRAMEWORK = {
    'UNAUTHENTICATED_USER': None,
    'DEFAULT_AUTHENTICATION_CLASSES': [],
    'DEFAULT_PERMISSION_CLASSES': [],
}

# Pipeline
DIREDI = {
    'OUTPUT_ROOT': Path(config('DIREDI_OUTPUT_ROOT', default=str(BASE_DIR / 'runs'))),
    'VOC_ROOT': config('DIREDI_VOC_ROOT', default=''),
    'DEVICE': config('DIREDI_DEVICE', default='cpu'),
    'NUM_THREADS': config('DIREDI_NUM_THREADS', default=4, cast=int),
    'DETERMINISTIC': config('DIREDI_DETERMINISTIC', default=True, cast=bool),
    'PROGRESS': config('DIREDI_PROGRESS', default=True, cast=bool),
    'LOG_LEVEL': config('DIREDI_LOG_LEVEL', default='INFO'),
    'CHECKPOINT_FORMAT_VERSION': 1,
    'PACKET_FORMAT_VERSION': 1,
    'PLAN_FORMAT_VERSION': 1,
}

# Logging
LOGS_DIR = BASE_DIR / 'logs'
LOGS_DIR.mkdir(exist_ok=True)

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
        'file': {
            'class': 'logging.FileHandler',
            'filename': LOGS_DIR / 'diredi.log',
            'formatter': 'verbose',
        },
    },
    'root': {
        'handlers': ['console', 'file'],
        'level': 'WARNING',
    },
    'loggers': {
        'django': {
            'handlers': ['console', 'file'],
            'level': 'INFO',
            'propagate': False,
        },
        'apps': {
            'handlers': ['console', 'file'],
            'level': DIREDI['LOG_LEVEL'],
            'propagate': False,
        },
    },
}
