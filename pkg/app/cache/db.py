import os
import sqlite3
from typing import Optional

from app.core.config import settings

DATABASE_PATH = settings.DATABASE_PATH


def init_db():
    """Initialize SQLite database with the results table"""
    directory = os.path.dirname(DATABASE_PATH)
    if directory:
        os.makedirs(directory, exist_ok=True)

    with sqlite3.connect(DATABASE_PATH) as conn:
        conn.execute("""
            CREATE TABLE IF NOT EXISTS results (
                fingerprint TEXT NOT NULL PRIMARY KEY,
                kind TEXT NOT NULL,
                payload TEXT NOT NULL,
                created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
            )
        """)
        conn.execute("CREATE INDEX IF NOT EXISTS idx_results_kind ON results(kind)")
        conn.commit()


def get(fingerprint: str) -> Optional[str]:
    """Get a cached summary payload by evaluation fingerprint"""
    with sqlite3.connect(DATABASE_PATH) as conn:
        cursor = conn.execute(
            "SELECT payload FROM results WHERE fingerprint = ?",
            (fingerprint,)
        )
        result = cursor.fetchone()
        return result[0] if result else None


def set(fingerprint: str, payload: str, kind: str = "evaluate"):
    """Cache a summary payload under its evaluation fingerprint"""
    with sqlite3.connect(DATABASE_PATH) as conn:
        conn.execute(
            "INSERT OR REPLACE INTO results (fingerprint, kind, payload) VALUES (?, ?, ?)",
            (fingerprint, kind, payload)
        )
        conn.commit()


def clear_all():
    """Clear all cached results"""
    with sqlite3.connect(DATABASE_PATH) as conn:
        conn.execute("DELETE FROM results")
        conn.commit()


def get_stats() -> dict:
    """Get cache statistics"""
    with sqlite3.connect(DATABASE_PATH) as conn:
        total_entries = conn.execute("SELECT COUNT(*) FROM results").fetchone()[0]
        by_kind = dict(conn.execute("SELECT kind, COUNT(*) FROM results GROUP BY kind").fetchall())

        return {
            "total_entries": total_entries,
            "by_kind": by_kind,
            "database_path": DATABASE_PATH
        }
