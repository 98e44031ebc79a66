import os
import sqlite3
from typing import Iterable, List, Optional, Tuple
from error_handler import SequencingError
from logger import setup_logger

logger = setup_logger(__name__)


class SeenIndex:
    """On-disk first-seen index of string keys (addresses, node IDs).

    Backed by SQLite so the key set never has to fit in memory. An optional
    height cursor enforces that blocks are registered strictly in order.
    """

    def __init__(self, path: str, cache_kib: int = 20000, compact_every: int = 10000):
        """Open or create the index.

        Args:
            path: Database file; ":memory:" for a throwaway index
            cache_kib: SQLite page cache size in KiB
            compact_every: Run VACUUM after this many committed heights
        """
        self.path = path
        if path != ':memory:':
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        self.conn = sqlite3.connect(path, timeout=10)
        self.conn.execute("PRAGMA journal_mode=WAL")
        self.conn.execute("PRAGMA synchronous=NORMAL")
        self.conn.execute("PRAGMA temp_store=FILE")
        self.conn.execute(f"PRAGMA cache_size=-{int(cache_kib)}")
        self.conn.execute("PRAGMA busy_timeout=5000")
        self.conn.execute(
            "CREATE TABLE IF NOT EXISTS seen (key TEXT PRIMARY KEY, first_height INTEGER NOT NULL, fingerprint TEXT) WITHOUT ROWID"
        )
        self.conn.execute("CREATE TABLE IF NOT EXISTS meta (name TEXT PRIMARY KEY, value TEXT)")
        self.conn.commit()
        self.compact_every = compact_every
        self._commits_since_compact = 0

    @property
    def last_height(self) -> Optional[int]:
        row = self.conn.execute("SELECT value FROM meta WHERE name = 'last_height'").fetchone()
        return int(row[0]) if row else None

    def check_next(self, height: int):
        """Raise unless ``height`` directly follows the last registered height.

        A fresh index accepts any start height.
        """
        last = self.last_height
        if last is not None and height != last + 1:
            state = 'behind' if height > last + 1 else 'ahead of'
            raise SequencingError(f"Index at {self.path} is {state} block {height} (last registered height {last})")

    def register(self, keys: Iterable[str], height: int, sequenced: bool = False) -> List[str]:
        """Record keys at ``height`` and return those never seen before, in first-appearance order.

        Args:
            keys: Keys appearing at this height (duplicates allowed)
            height: Height the keys appeared at
            sequenced: Enforce and advance the height cursor

        Returns:
            List[str]: Newly seen keys
        """
        if sequenced:
            self.check_next(height)

        new_keys = []
        cursor = self.conn.cursor()
        for key in keys:
            cursor.execute("INSERT OR IGNORE INTO seen (key, first_height) VALUES (?, ?)", (key, height))
            if cursor.rowcount == 1:
                new_keys.append(key)

        if sequenced:
            cursor.execute("INSERT OR REPLACE INTO meta (name, value) VALUES ('last_height', ?)", (str(height),))
        self.conn.commit()

        self._commits_since_compact += 1
        if self.compact_every and self._commits_since_compact >= self.compact_every:
            self.compact()
        return new_keys

    def register_rows(self, rows: Iterable[Tuple[str, int, str]]) -> List[Optional[Tuple[int, str]]]:
        """Record (key, height, fingerprint) rows without touching the height cursor.

        Returns:
            List: None for each newly stored key, else the stored (first_height, fingerprint)
        """
        results = []
        cursor = self.conn.cursor()
        for key, height, fingerprint in rows:
            cursor.execute(
                "INSERT OR IGNORE INTO seen (key, first_height, fingerprint) VALUES (?, ?, ?)",
                (key, height, fingerprint),
            )
            if cursor.rowcount == 1:
                results.append(None)
            else:
                results.append(cursor.execute(
                    "SELECT first_height, fingerprint FROM seen WHERE key = ?", (key,)
                ).fetchone())
        self.conn.commit()
        return results

    def contains(self, key: str) -> bool:
        return self.conn.execute("SELECT 1 FROM seen WHERE key = ?", (key,)).fetchone() is not None

    def first_height(self, key: str) -> Optional[int]:
        row = self.conn.execute("SELECT first_height FROM seen WHERE key = ?", (key,)).fetchone()
        return row[0] if row else None

    def compact(self):
        """Fold the write-ahead log back and reclaim free pages."""
        self.conn.execute("PRAGMA wal_checkpoint(TRUNCATE)")
        if self.path != ':memory:':
            self.conn.execute("VACUUM")
        self._commits_since_compact = 0
        logger.debug(f"Compacted seen index {self.path} ({len(self)} keys)")

    def __len__(self) -> int:
        return self.conn.execute("SELECT COUNT(*) FROM seen").fetchone()[0]

    def close(self):
        self.conn.commit()
        self.conn.close()

    def __enter__(self) -> 'SeenIndex':
        return self

    def __exit__(self, *exc):
        self.close()
