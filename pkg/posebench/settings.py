"""
Django settings for the posebench toolkit.

posebench is a batch toolkit: there is no web surface and no database. Django
provides the management-command CLI, the settings layer and the test runner.

All toolkit defaults live in the POSEBENCH dict below and can be overridden
from the environment or a `.env` file through python-decouple.
"""

from decouple import config, Csv
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Unused by the toolkit itself, but Django refuses to start without one.
SECRET_KEY = config('SECRET_KEY', default='posebench-batch-toolkit-not-a-secret')

DEBUG = config('DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'geometry',
    'evaluation',
    'annotation',
]

# No persistence: every command reads and writes files only.
DATABASES = {}

USE_TZ = True
TIME_ZONE = 'UTC'

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# =============================================================================
# LOGGING
# =============================================================================
# Progress and diagnostics go to standard error; data goes to files/stdout.
LOG_LEVEL = config('POSEBENCH_LOG_LEVEL', default='INFO')

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
        'posebench': {'handlers': ['stderr'], 'level': LOG_LEVEL, 'propagate': False},
        'geometry': {'handlers': ['stderr'], 'level': LOG_LEVEL, 'propagate': False},
        'evaluation': {'handlers': ['stderr'], 'level': LOG_LEVEL, 'propagate': False},
        'annotation': {'handlers': ['stderr'], 'level': LOG_LEVEL, 'propagate': False},
    },
}


# =============================================================================
# POSEBENCH TOOLKIT DEFAULTS
# =============================================================================
# Up-axis convention: object-frame +y, as in the NOCS canonical alignment.
SYMMETRIC_CATEGORIES = config('POSEBENCH_SYMMETRIC_CATEGORIES', default='bottle,bowl,can', cast=Csv())

POSEBENCH = {
    # Surface samples per mesh for chamfer / F-score evaluation.
    'SAMPLE_COUNT': config('POSEBENCH_SAMPLE_COUNT', default=10000, cast=int),
    'SEED': config('POSEBENCH_SEED', default=0, cast=int),
    # 'world' (posed) or 'object' (canonical frame, prior-work convention).
    'FRAME': config('POSEBENCH_FRAME', default='world'),
    'FSCORE_DELTA': config('POSEBENCH_FSCORE_DELTA', default=0.01, cast=float),
    'SYMMETRIC_IOU_STEPS': config('POSEBENCH_SYMMETRIC_IOU_STEPS', default=120, cast=int),
    'SYMMETRY_TABLE': {name: (0.0, 1.0, 0.0) for name in SYMMETRIC_CATEGORIES},
    'DEFAULT_PRESET': config('POSEBENCH_DEFAULT_PRESET', default='real275-suite'),
    'WORKERS': config('POSEBENCH_WORKERS', default=1, cast=int),
    'ANNOTATION': {
        'RESOLUTION': config('POSEBENCH_VOXEL_RESOLUTION', default=0.005, cast=float),
        'CARVING_MARGIN': config('POSEBENCH_CARVING_MARGIN', default=0.005, cast=float),
        'SMOOTHING_ITERATIONS': config('POSEBENCH_SMOOTHING_ITERATIONS', default=10, cast=int),
        'SMOOTHING_LAMBDA': config('POSEBENCH_SMOOTHING_LAMBDA', default=0.5, cast=float),
        'SYMMETRY_REPLICAS': config('POSEBENCH_SYMMETRY_REPLICAS', default=3, cast=int),
        'ICP_MAX_ITERATIONS': config('POSEBENCH_ICP_MAX_ITERATIONS', default=50, cast=int),
        'ICP_REJECT_DISTANCE': config('POSEBENCH_ICP_REJECT_DISTANCE', default=0.02, cast=float),
        'ICP_TOLERANCE': config('POSEBENCH_ICP_TOLERANCE', default=1e-6, cast=float),
        'ICP_CROP_PADDING': config('POSEBENCH_ICP_CROP_PADDING', default=0.02, cast=float),
    },
}
