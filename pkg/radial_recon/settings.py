"""
Django settings for the radial_recon project.

The project has no web surface: Django provides the command-line entry point
(management commands), the settings/config layer and the test runner, and
Django REST framework's serializers validate every JSON document the toolkit
reads or writes.

Values that differ between machines are read from the environment (or a .env
file) through python-decouple.
"""

from pathlib import Path
from decouple import config


# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = config('DJANGO_SECRET_KEY', default='radial-recon-not-served-over-http')

DEBUG = config('DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'rest_framework',
    'ReconCore',
]


# Database
# Nothing in the toolkit is stored in a database; datasets and series live on
# disk as arrays with JSON sidecars. The entry is kept so Django's checks pass.

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': config('DB_NAME', default=str(BASE_DIR / 'db.sqlite3')),
    }
}


# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Logging

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {name} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'ReconCore': {
            'handlers': ['console'],
            'level': config('RECON_LOG_LEVEL', default='INFO'),
            'propagate': False,
        },
    },
}


# Reconstruction toolkit
# Every key can be overridden from the environment; ReconCore.conf falls back
# to its own defaults for keys that are missing here.

RECON_TOOLKIT = {
    'OVERSAMPLING': config('RECON_OVERSAMPLING', default=2.0, cast=float),
    'KERNEL_WIDTH': config('RECON_KERNEL_WIDTH', default=6, cast=int),
    'DC_MAX_ITERS': config('RECON_DC_MAX_ITERS', default=20, cast=int),
    'DC_TOL': config('RECON_DC_TOL', default=1e-2, cast=float),
    'DC_OVERSAMPLING': config('RECON_DC_OVERSAMPLING', default=1.25, cast=float),
    'DC_KERNEL_WIDTH': config('RECON_DC_KERNEL_WIDTH', default=16, cast=int),
    'KAPPA_MODE': config('RECON_KAPPA_MODE', default='l1'),  # 'l1' or 'modulus'
    'NOISE_MODEL': config('RECON_NOISE_MODEL', default='circular'),  # or 'per_component'
    'NOISE_NORM': config('RECON_NOISE_NORM', default='psf'),  # or 'spectral'
    'RESIDUAL_MODE': config('RECON_RESIDUAL_MODE', default='magnitude'),  # or 'complex'
    'PERCENTILE': config('RECON_PERCENTILE', default=6.0, cast=float),
    'WORKERS': config('RECON_WORKERS', default=1, cast=int),
}
