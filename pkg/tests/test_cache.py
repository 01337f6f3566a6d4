"""Tests for the embedder reply cache."""

from datetime import datetime, timedelta

import pytest

from tracer.cache import EmbeddingCache


@pytest.fixture
def cache(tmp_path):
    return EmbeddingCache(db_path=str(tmp_path / "cache.db"), ttl_hours=24)


def test_miss_then_hit(cache):
    assert cache.get("http://e", b"request") is None
    cache.set("http://e", b"request", b"reply")
    hit = cache.get("http://e", b"request")
    assert hit.reply == b"reply"
    assert hit.endpoint == "http://e"
    assert hit.expires_at - hit.created_at == timedelta(hours=24)


def test_key_depends_on_endpoint_and_request(cache):
    cache.set("http://a", b"request", b"from a")
    assert cache.get("http://b", b"request") is None
    assert cache.get("http://a", b"other") is None
    assert EmbeddingCache.request_key("a", b"x") != EmbeddingCache.request_key("a", b"y")


def test_expired_entries_are_ignored_and_cleared(tmp_path):
    cache = EmbeddingCache(db_path=str(tmp_path / "cache.db"), ttl_hours=0)
    cache.set("http://e", b"request", b"reply")
    assert cache.get("http://e", b"request") is None
    assert cache.get_stats()["expired_entries"] == 1
    assert cache.clear_expired() == 1
    assert cache.get_stats()["total_entries"] == 0


def test_stats_by_endpoint(cache):
    cache.set("http://a", b"1", b"r")
    cache.set("http://a", b"2", b"r")
    cache.set("cmd:embed", b"1", b"r")
    stats = cache.get_stats()
    assert stats["active_entries"] == 3
    assert stats["endpoints"] == {"http://a": 2, "cmd:embed": 1}
    assert cache.clear_all() == 3


def test_unusable_database_degrades_to_misses(tmp_path, caplog):
    cache = EmbeddingCache(db_path=str(tmp_path), ttl_hours=1)
    cache.set("http://e", b"request", b"reply")
    assert cache.get("http://e", b"request") is None
    assert cache.get_stats() == {}
    assert "embedding cache" in caplog.text


def test_created_at_is_recent(cache):
    cache.set("http://e", b"r", b"x")
    hit = cache.get("http://e", b"r")
    assert datetime.now() - hit.created_at < timedelta(minutes=1)
