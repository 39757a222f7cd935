"""DuckDB connection management for persisted run reports."""

from pathlib import Path

import duckdb

from quasilinear_welfare.common.logging import get_logger

logger = get_logger(__name__)

DEFAULT_DB_PATH = Path("data/bound_runs.duckdb")
MEMORY = ":memory:"


class Database:
    """DuckDB connection manager, usable as a context manager."""

    def __init__(self, db_path: Path | str | None = None):
        """
        Args:
            db_path: DuckDB file, DEFAULT_DB_PATH when None, ":memory:" for an in-memory database
        """
        if db_path is None:
            db_path = DEFAULT_DB_PATH
        self.db_path = db_path if db_path == MEMORY else Path(db_path)
        self._connection: duckdb.DuckDBPyConnection | None = None

    @property
    def in_memory(self) -> bool:
        return self.db_path == MEMORY

    def connect(self) -> duckdb.DuckDBPyConnection:
        if self._connection is not None:
            return self._connection

        if not self.in_memory:
            self.db_path.parent.mkdir(parents=True, exist_ok=True)

        self._connection = duckdb.connect(str(self.db_path))
        logger.debug("Connected to database: %s", self.db_path)
        return self._connection

    @property
    def connection(self) -> duckdb.DuckDBPyConnection:
        """Active connection, opened on first use."""
        if self._connection is None:
            return self.connect()
        return self._connection

    def close(self) -> None:
        if self._connection is not None:
            self._connection.close()
            self._connection = None
            logger.debug("Database connection closed")

    def __enter__(self):
        self.connect()
        return self

    def __exit__(self, *args):
        self.close()
