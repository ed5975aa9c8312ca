# src/database.py
"""SQLite индекс завершённых ячеек эксперимента."""

import sqlite3
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path


@dataclass
class CellRecord:
    input_len: int
    latent_len: int
    seed: int
    schedule: str
    fingerprint: str
    best_accuracy: float
    stopped_epoch: int
    trail_path: str
    finished_at: str = ''


class RunIndex:
    def __init__(self, db_path: Path):
        self.db_path = db_path
        self._conn: sqlite3.Connection | None = None
        self._init_db()

    def _get_conn(self) -> sqlite3.Connection:
        """Возвращает соединение, создавая его при необходимости."""
        if self._conn is None:
            self.db_path.parent.mkdir(parents=True, exist_ok=True)
            self._conn = sqlite3.connect(self.db_path, check_same_thread=False, timeout=30)
            self._conn.execute('PRAGMA journal_mode=WAL')
            self._conn.row_factory = sqlite3.Row
        return self._conn

    def _init_db(self):
        """Создаёт таблицы, если не существуют."""
        conn = self._get_conn()
        conn.execute('''
            CREATE TABLE IF NOT EXISTS cells (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                input_len INTEGER NOT NULL,
                latent_len INTEGER NOT NULL,
                seed INTEGER NOT NULL,
                schedule TEXT NOT NULL,
                fingerprint TEXT NOT NULL,
                best_accuracy REAL,
                stopped_epoch INTEGER,
                trail_path TEXT,
                finished_at TEXT,
                UNIQUE(input_len, latent_len, seed, schedule, fingerprint)
            )
        ''')
        conn.execute('''
            CREATE INDEX IF NOT EXISTS idx_cells_fingerprint
            ON cells(fingerprint)
        ''')
        conn.commit()

    def close(self):
        """Закрывает соединение с БД."""
        if self._conn:
            self._conn.close()
            self._conn = None

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()

    def add_cell(self, record: CellRecord):
        """Добавляет (или перезаписывает) завершённую ячейку."""
        conn = self._get_conn()
        finished_at = record.finished_at or datetime.now(timezone.utc).isoformat()
        conn.execute('''
            INSERT OR REPLACE INTO cells
            (input_len, latent_len, seed, schedule, fingerprint, best_accuracy, stopped_epoch, trail_path, finished_at)
            VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)
        ''', (
            record.input_len,
            record.latent_len,
            record.seed,
            record.schedule,
            record.fingerprint,
            record.best_accuracy,
            record.stopped_epoch,
            record.trail_path,
            finished_at,
        ))
        conn.commit()

    def get_cell(self, input_len: int, latent_len: int, seed: int, schedule: str, fingerprint: str) -> CellRecord | None:
        """Ищет завершённую ячейку с той же конфигурацией."""
        conn = self._get_conn()
        cursor = conn.execute('''
            SELECT * FROM cells
            WHERE input_len = ? AND latent_len = ? AND seed = ? AND schedule = ? AND fingerprint = ?
        ''', (input_len, latent_len, seed, schedule, fingerprint))
        row = cursor.fetchone()
        if row:
            return self._row_to_record(row)
        return None

    def get_cell_count(self) -> int:
        conn = self._get_conn()
        return conn.execute('SELECT COUNT(*) FROM cells').fetchone()[0]

    def _row_to_record(self, row: sqlite3.Row) -> CellRecord:
        """Конвертирует строку БД в CellRecord."""
        return CellRecord(
            input_len=row['input_len'],
            latent_len=row['latent_len'],
            seed=row['seed'],
            schedule=row['schedule'],
            fingerprint=row['fingerprint'],
            best_accuracy=row['best_accuracy'],
            stopped_epoch=row['stopped_epoch'],
            trail_path=row['trail_path'],
            finished_at=row['finished_at'],
        )
