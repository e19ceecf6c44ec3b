import logging

import numpy as np
import pytest

from app.cache import db as cache_db
from app.core import config
from app.features.base import ClassFeatures, FeatureBank
from app.schemas import SyntheticSpec


@pytest.fixture(autouse=True)
def setup_test_environment(tmp_path):
    """Point the result cache at a temporary database and disable it by default"""
    # Store original values
    original_db_path = cache_db.DATABASE_PATH
    original_result_cache = config.settings.RESULT_CACHE
    original_progress = config.settings.SHOW_PROGRESS

    cache_db.DATABASE_PATH = str(tmp_path / "results.sqlite")
    config.settings.RESULT_CACHE = False
    config.settings.SHOW_PROGRESS = False

    cache_db.init_db()

    yield

    # Restore original values
    cache_db.DATABASE_PATH = original_db_path
    config.settings.RESULT_CACHE = original_result_cache
    config.settings.SHOW_PROGRESS = original_progress

    # handlers hold the stderr of the test that created them
    engine_logger = logging.getLogger("app")
    for handler in list(engine_logger.handlers):
        if getattr(handler, "_engine_handler", False):
            engine_logger.removeHandler(handler)
    engine_logger.propagate = True
    engine_logger.setLevel(logging.NOTSET)


def build_bank(per_class, source_id="test"):
    """FeatureBank from {class_id: array (n_images, n_views, dim)}"""
    classes = tuple(
        ClassFeatures(class_id=class_id, images=np.asarray(images, dtype=np.float32))
        for class_id, images in per_class.items()
    )
    first = classes[0].images
    return FeatureBank(dim=first.shape[2], n_views=first.shape[1], classes=classes, source_id=source_id)


@pytest.fixture
def make_bank():
    return build_bank


@pytest.fixture
def small_spec():
    """5 well-separated classes, enough images for 5-way 5-shot 15-query tasks"""
    return SyntheticSpec(
        n_classes=5, dim=8, images_per_class=40, n_views=3,
        separation=6.0, sigma=0.5, view_noise=0.3, seed=7,
    )
