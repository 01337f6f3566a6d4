"""SQLite cache for external embedder replies."""

import hashlib
import logging
import sqlite3
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Optional

logger = logging.getLogger(__name__)


@dataclass
class CachedReply:
    """Cached embedder reply."""

    endpoint: str
    reply: bytes
    created_at: datetime
    expires_at: datetime


class EmbeddingCache:
    """Caches raw embedder replies keyed by endpoint and request bytes."""

    def __init__(self, db_path: str = "embed_cache.db", ttl_hours: int = 24):
        """
        Initialize the cache.

        Args:
            db_path: Path to SQLite database file
            ttl_hours: Time-to-live for cache entries in hours
        """
        self.db_path = db_path
        self.ttl_hours = ttl_hours
        self._init_db()

    def _init_db(self):
        """Initialize the database schema."""
        try:
            conn = sqlite3.connect(self.db_path)
            cursor = conn.cursor()

            cursor.execute("""
                CREATE TABLE IF NOT EXISTS embed_cache (
                    request_hash TEXT PRIMARY KEY,
                    endpoint TEXT NOT NULL,
                    reply BLOB NOT NULL,
                    created_at TIMESTAMP NOT NULL,
                    expires_at TIMESTAMP NOT NULL
                )
            """)
            cursor.execute("""
                CREATE INDEX IF NOT EXISTS idx_embed_expires_at
                ON embed_cache(expires_at)
            """)

            conn.commit()
            conn.close()

            logger.info(f"Embedding cache initialized at {self.db_path}")

        except Exception as e:
            logger.error(f"Failed to initialize embedding cache: {e}")

    @staticmethod
    def request_key(endpoint: str, request: bytes) -> str:
        digest = hashlib.sha256(endpoint.encode())
        digest.update(b"\0")
        digest.update(request)
        return digest.hexdigest()

    def get(self, endpoint: str, request: bytes) -> Optional[CachedReply]:
        """
        Get the cached reply for a request.

        Returns:
            CachedReply if found and not expired, None otherwise
        """
        try:
            conn = sqlite3.connect(self.db_path)
            cursor = conn.cursor()
            cursor.execute("""
                SELECT endpoint, reply, created_at, expires_at
                FROM embed_cache
                WHERE request_hash = ? AND expires_at > ?
            """, (self.request_key(endpoint, request), datetime.now().isoformat()))
            row = cursor.fetchone()
            conn.close()

            if row:
                logger.debug(f"Cache HIT for {endpoint}")
                return CachedReply(
                    endpoint=row[0],
                    reply=bytes(row[1]),
                    created_at=datetime.fromisoformat(row[2]),
                    expires_at=datetime.fromisoformat(row[3]),
                )

            logger.debug(f"Cache MISS for {endpoint}")
            return None

        except Exception as e:
            logger.error(f"Error reading embedding cache: {e}")
            return None

    def set(self, endpoint: str, request: bytes, reply: bytes):
        """Store a reply in the cache."""
        try:
            created_at = datetime.now()
            expires_at = created_at + timedelta(hours=self.ttl_hours)

            conn = sqlite3.connect(self.db_path)
            cursor = conn.cursor()
            cursor.execute("""
                INSERT OR REPLACE INTO embed_cache
                (request_hash, endpoint, reply, created_at, expires_at)
                VALUES (?, ?, ?, ?, ?)
            """, (
                self.request_key(endpoint, request),
                endpoint,
                sqlite3.Binary(reply),
                created_at.isoformat(),
                expires_at.isoformat(),
            ))
            conn.commit()
            conn.close()

        except Exception as e:
            logger.error(f"Error caching embedder reply: {e}")

    def clear_expired(self) -> int:
        """Remove expired cache entries."""
        try:
            conn = sqlite3.connect(self.db_path)
            cursor = conn.cursor()
            cursor.execute(
                "DELETE FROM embed_cache WHERE expires_at <= ?", (datetime.now().isoformat(),)
            )
            deleted_count = cursor.rowcount
            conn.commit()
            conn.close()

            if deleted_count > 0:
                logger.info(f"Cleared {deleted_count} expired cache entries")
            return deleted_count

        except Exception as e:
            logger.error(f"Error clearing expired cache: {e}")
            return 0

    def clear_all(self) -> int:
        """Remove all cache entries."""
        try:
            conn = sqlite3.connect(self.db_path)
            cursor = conn.cursor()
            cursor.execute("DELETE FROM embed_cache")
            deleted_count = cursor.rowcount
            conn.commit()
            conn.close()

            logger.info(f"Cleared all {deleted_count} cache entries")
            return deleted_count

        except Exception as e:
            logger.error(f"Error clearing all cache: {e}")
            return 0

    def get_stats(self) -> dict:
        """
        Get cache statistics.

        Returns:
            Dictionary with cache stats
        """
        try:
            conn = sqlite3.connect(self.db_path)
            cursor = conn.cursor()
            now = datetime.now().isoformat()

            cursor.execute("SELECT COUNT(*) FROM embed_cache")
            total = cursor.fetchone()[0]

            cursor.execute("SELECT COUNT(*) FROM embed_cache WHERE expires_at > ?", (now,))
            active = cursor.fetchone()[0]

            cursor.execute("""
                SELECT endpoint, COUNT(*)
                FROM embed_cache
                WHERE expires_at > ?
                GROUP BY endpoint
            """, (now,))
            endpoints = dict(cursor.fetchall())

            conn.close()

            return {
                "total_entries": total,
                "active_entries": active,
                "expired_entries": total - active,
                "endpoints": endpoints,
            }

        except Exception as e:
            logger.error(f"Error getting cache stats: {e}")
            return {}
