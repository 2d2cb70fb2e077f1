import os

import django
import pytest

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'coarseid_project.settings')
django.setup()


def pytest_collection_modifyitems(config, items):
    # Mirror coarseid_project.test_runner.CoarseIdTestRunner: tests tagged
    # ``slow`` only run when COARSE_ID_SLOW_TESTS=1.
    if os.getenv('COARSE_ID_SLOW_TESTS') == '1':
        return
    skip_slow = pytest.mark.skip(reason='slow test; set COARSE_ID_SLOW_TESTS=1')
    for item in items:
        test_func = getattr(item, 'obj', None)
        cls = getattr(item, 'cls', None)
        tags = set(getattr(test_func, 'tags', ())) | set(getattr(cls, 'tags', ()))
        if 'slow' in tags:
            item.add_marker(skip_slow)
