import os

from django.test.runner import DiscoverRunner


class CoarseIdTestRunner(DiscoverRunner):
    """Skips tests tagged ``slow`` unless they are asked for."""

    def __init__(self, *args, tags=None, exclude_tags=None, **kwargs):
        tags = set(tags or ())
        exclude_tags = set(exclude_tags or ())
        if 'slow' not in tags and os.getenv('COARSE_ID_SLOW_TESTS') != '1':
            exclude_tags.add('slow')
        super().__init__(*args, tags=tags or None, exclude_tags=exclude_tags, **kwargs)
