import os
from pathlib import Path

from dotenv import load_dotenv

BASE_DIR = Path(__file__).resolve().parent.parent

load_dotenv(BASE_DIR / '.env')

SECRET_KEY = os.getenv('DJANGO_SECRET_KEY', 'django-insecure-coarse-id-local-key')
DEBUG = os.getenv('DJANGO_DEBUG', 'False') == 'True'

ALLOWED_HOSTS = []

INSTALLED_APPS = [
    'control.apps.ControlConfig',
]

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [os.path.join(BASE_DIR, 'templates')],
        'APP_DIRS': False,
        'OPTIONS': {
            'context_processors': [],
        },
    },
]

# The toolkit keeps all state in files; no database is configured.
DATABASES = {}

LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True

TEST_RUNNER = 'coarseid_project.test_runner.CoarseIdTestRunner'

COARSE_ID = {
    'CONIC_BACKEND': os.getenv('COARSE_ID_CONIC_BACKEND', 'cvxopt'),
    'CVXPY_SOLVER': os.getenv('COARSE_ID_CVXPY_SOLVER', 'CLARABEL'),
    'SOLVER_TOL': float(os.getenv('COARSE_ID_SOLVER_TOL', '1e-8')),
    'SYNTHESIS_TOL': float(os.getenv('COARSE_ID_SYNTHESIS_TOL', '1e-7')),
    'POOL_SIZE': int(os.getenv('COARSE_ID_POOL_SIZE', '1')),
    'OUTPUT_DIR': Path(os.getenv('COARSE_ID_OUTPUT_DIR', BASE_DIR / 'output')),
}

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{asctime} {levelname} {name}: {message}',
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
        'control': {
            'handlers': ['console'],
            'level': os.getenv('COARSE_ID_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
    },
}
