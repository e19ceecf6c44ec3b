import os
import sqlite3
import tempfile
import time

import pytest

from app.cache import db as cache_db
from app.core.config import settings
from app.features.synthetic import generate_bank
from app.schemas import Mode, PipelineConfig
from app.services import evaluate as evaluator


class TestCache:
    """Unit tests for the result cache"""

    def setup_method(self):
        """Initialize clean database for each test"""
        self.temp_db = tempfile.NamedTemporaryFile(suffix='.sqlite', delete=False)
        self.temp_db_path = self.temp_db.name
        self.temp_db.close()

        # Temporarily override DATABASE_PATH
        self.original_db_path = cache_db.DATABASE_PATH
        cache_db.DATABASE_PATH = self.temp_db_path

        cache_db.init_db()
        cache_db.clear_all()

    def teardown_method(self):
        """Clean up after each test"""
        cache_db.DATABASE_PATH = self.original_db_path

        try:
            # Windows fix: close all SQLite connections before deleting
            conn = sqlite3.connect(self.temp_db_path)
            conn.close()
            time.sleep(0.1)
            if os.path.exists(self.temp_db_path):
                os.unlink(self.temp_db_path)
        except Exception:
            pass

    def test_cache_set_and_get(self):
        """Test basic cache set and get operations"""
        cache_db.set("abc123", '{"mean_accuracy": 0.5}')
        assert cache_db.get("abc123") == '{"mean_accuracy": 0.5}'

    def test_cache_get_nonexistent(self):
        assert cache_db.get("missing") is None

    def test_cache_replace_existing(self):
        """Test replacing existing cache entry"""
        cache_db.set("key", '{"version": 1}')
        cache_db.set("key", '{"version": 2}')
        assert cache_db.get("key") == '{"version": 2}'

    def test_stats_by_kind(self):
        cache_db.set("a", "{}", kind="evaluate")
        cache_db.set("b", "{}", kind="evaluate")
        cache_db.set("c", "{}", kind="sweep")
        stats = cache_db.get_stats()
        assert stats["total_entries"] == 3
        assert stats["by_kind"] == {"evaluate": 2, "sweep": 1}
        assert stats["database_path"] == self.temp_db_path

    def test_clear_all_cache(self):
        """Test clearing all cache entries"""
        cache_db.set("a", "{}")
        cache_db.set("b", "{}")
        cache_db.clear_all()
        assert cache_db.get("a") is None
        assert cache_db.get_stats()["total_entries"] == 0

    def test_init_creates_directory(self, tmp_path):
        cache_db.DATABASE_PATH = str(tmp_path / "nested" / "results.sqlite")
        cache_db.init_db()
        assert os.path.exists(cache_db.DATABASE_PATH)


class TestEvaluationCache:
    """Fingerprinting and cached evaluation"""

    @pytest.fixture
    def bank(self, small_spec):
        return generate_bank(small_spec)

    @pytest.fixture
    def config(self):
        return PipelineConfig(mode=Mode.TRANSDUCTIVE, n_runs=20, global_seed=3)

    def test_fingerprint_is_stable(self, bank, config):
        assert evaluator.fingerprint([bank], config) == evaluator.fingerprint([bank], config)

    def test_fingerprint_tracks_config_and_contents(self, bank, config, small_spec):
        key = evaluator.fingerprint([bank], config)
        assert evaluator.fingerprint([bank], config.model_copy(update={"beta": 4.0})) != key
        assert evaluator.fingerprint([bank], config, keep_per_run=True) != key
        other = generate_bank(small_spec.model_copy(update={"seed": 99}))
        assert evaluator.fingerprint([other], config) != key

    def test_second_call_hits_cache(self, bank, config):
        first, cached_first = evaluator.evaluate_with_cache([bank], config, use_cache=True)
        second, cached_second = evaluator.evaluate_with_cache([bank], config, use_cache=True)

        assert cached_first is False
        assert cached_second is True
        assert second.mean_accuracy == first.mean_accuracy
        assert second.half_interval == first.half_interval
        assert cache_db.get_stats()["total_entries"] == 1

    def test_disabled_cache_never_stores(self, bank, config):
        assert settings.RESULT_CACHE is False
        _, cached = evaluator.evaluate_with_cache([bank], config)
        assert cached is False
        assert cache_db.get_stats()["total_entries"] == 0

    def test_corrupted_entry_is_recomputed(self, bank, config):
        cache_db.set(evaluator.fingerprint([bank], config), '{"not": "a summary"}')
        summary, cached = evaluator.evaluate_with_cache([bank], config, use_cache=True)
        assert cached is False
        assert 0.0 <= summary.mean_accuracy <= 1.0
