"""
Django settings for arbkit_project.
"""

from pathlib import Path
from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Only used by Django internals; no sessions or signing happen in this project.
SECRET_KEY = config('SECRET_KEY', default='django-insecure-arbkit-local-key')

DEBUG = config('DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = []

# Application definition
INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'rest_framework',
    'arbkit',
]

# Database
DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': config('ARBKIT_DB', default=str(BASE_DIR / 'db.sqlite3')),
    }
}

# Internationalization
LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True

# Default primary key field type
DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# Simulation settings
ARBKIT_THREADS = config('ARBKIT_THREADS', default=1, cast=int)
ARBKIT_CHUNK_PATHS = config('ARBKIT_CHUNK_PATHS', default=2000, cast=int)
ARBKIT_RECORD_RUNS = config('ARBKIT_RECORD_RUNS', default=False, cast=bool)
ARBKIT_DEFAULT_SEED = config('ARBKIT_DEFAULT_SEED', default=20240001, cast=int)

# Logging goes to stderr so that --json reports on stdout stay clean
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'stderr': {
            'class': 'logging.StreamHandler',
            'stream': 'ext://sys.stderr',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'arbkit': {
            'handlers': ['stderr'],
            'level': config('ARBKIT_LOG_LEVEL', default='INFO'),
            'propagate': False,
        },
    },
}
