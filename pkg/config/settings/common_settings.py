"""
Base settings to build other settings files upon.

vcnode runs as a set of Django management commands; there is no web
frontend and no database. Settings here configure the numerical backend,
filesystem locations and logging.

For the full list of Django settings and their values, see
https://docs.djangoproject.com/en/4.2/ref/settings/
"""

import os
from pathlib import Path


# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent.parent

# Application definition

INSTALLED_APPS = [
    "vcnode",
]

# vcnode keeps all of its state in container directories on disk.
DATABASES = {}

TEST = bool(os.environ.get('TEST', default=False))

# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get('SECRET_KEY', default="vcnode-local-0q7k2h9ws1x8zr4m6e5t3y")

DEBUG = bool(os.environ.get('DEBUG', default=False))

TIME_ZONE = "UTC"
USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.AutoField'

# vcnode settings
VCNODE_DATA_ROOT = os.environ.get('VCNODE_DATA_ROOT', default=os.path.join(BASE_DIR, '.data/'))
# float32 for training runs, float64 for gradient-check suites
VCNODE_PRECISION = os.environ.get('VCNODE_PRECISION', default='float32')
# A single intra-op thread keeps reductions in a fixed order.
VCNODE_NUM_THREADS = int(os.environ.get('VCNODE_NUM_THREADS', default=1))
VCNODE_LOG_LEVEL = os.environ.get('VCNODE_LOG_LEVEL', default='INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'timestamped': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'timestamped',
        },
    },
    'loggers': {
        'dynamics': {
            'handlers': ['console'],
            'level': VCNODE_LOG_LEVEL,
            'propagate': False,
        },
        'vcnode': {
            'handlers': ['console'],
            'level': VCNODE_LOG_LEVEL,
            'propagate': False,
        },
    },
}
