"""Repository for persisted bound-computation run reports."""

import hashlib
import json
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Any

import duckdb

from quasilinear_welfare.common.logging import get_logger
from quasilinear_welfare.load.csv_files import json_safe
from quasilinear_welfare.storage.database import Database

logger = get_logger(__name__)

DDL_PATH = Path(__file__).parent / "sql" / "001_create_bound_runs.sql"


def to_json(data: Any) -> str:
    return json.dumps(json_safe(data), sort_keys=True, separators=(",", ":"))


def compute_content_hash(command: str, parameters: dict[str, Any], report: Any) -> str:
    """SHA-256 of the canonical JSON of (command, parameters, report)."""
    content = to_json({"command": command, "parameters": parameters, "report": report})
    return hashlib.sha256(content.encode()).hexdigest()


@dataclass(frozen=True)
class RunRecord:
    id: int
    command: str
    parameters: dict[str, Any]
    report: Any
    exit_code: int
    content_hash: str
    recorded_at: datetime

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "command": self.command,
            "exit_code": self.exit_code,
            "content_hash": self.content_hash,
            "recorded_at": self.recorded_at.isoformat(),
            "parameters": self.parameters,
            "report": self.report,
        }


class RunRepository:
    """Stores CLI run reports in DuckDB."""

    def __init__(self, database: Database):
        self.db = database
        self._initialized = False

    def initialize(self) -> None:
        """Create tables if they don't exist."""
        if self._initialized:
            return

        self.db.connection.execute(DDL_PATH.read_text())
        self._initialized = True
        logger.debug("bound_runs table initialized")

    def record(self, command: str, parameters: dict[str, Any], report: Any, exit_code: int = 0) -> bool:
        """Insert a run report.

        Returns:
            True if inserted, False if an identical run was already stored
        """
        content_hash = compute_content_hash(command, parameters, report)
        try:
            self.db.connection.execute(
                """
                INSERT INTO bound_runs (command, parameters, report, exit_code, content_hash)
                VALUES (?, ?, ?, ?, ?)
                """,
                [command, to_json(parameters), to_json(report), exit_code, content_hash],
            )
            logger.info("Recorded %s run (hash: %s...)", command, content_hash[:8])
            return True
        except duckdb.ConstraintException:
            logger.info("Skipped duplicate %s run (hash: %s...)", command, content_hash[:8])
            return False

    def _select(self, where: str = "", params: list[Any] | None = None) -> list[RunRecord]:
        rows = self.db.connection.execute(
            f"""
            SELECT id, command, parameters, report, exit_code, content_hash, recorded_at
            FROM bound_runs
            {where}
            ORDER BY id DESC
            """,
            params or [],
        ).fetchall()
        return [
            RunRecord(
                id=row[0],
                command=row[1],
                parameters=json.loads(row[2]),
                report=json.loads(row[3]),
                exit_code=row[4],
                content_hash=row[5],
                recorded_at=row[6],
            )
            for row in rows
        ]

    def list_runs(self, command: str | None = None) -> list[RunRecord]:
        """Stored runs, newest first, optionally for one command."""
        if command is None:
            return self._select()
        return self._select("WHERE command = ?", [command])

    def get_run(self, content_hash: str) -> RunRecord | None:
        runs = self._select("WHERE content_hash = ?", [content_hash])
        return runs[0] if runs else None

    def count_runs(self) -> int:
        result = self.db.connection.execute("SELECT COUNT(*) FROM bound_runs").fetchone()
        return result[0] if result else 0
