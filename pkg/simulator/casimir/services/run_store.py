"""
Run directories: CSV results, plot scripts and the run.json manifest.

CSV files are RFC 4180 style (CRLF line endings, UTF-8, header row) with
floats in scientific notation at a fixed number of significant digits, so
identical inputs produce byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import math
import uuid
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Literal, Optional, Sequence

import numpy as np
import orjson

from casimir import __version__
from casimir.core.logging import get_logger
from casimir.schemas.experiment import ExperimentConfig
from casimir.schemas.run import ManifestEntry, RunRecord

logger = get_logger(__name__)

MANIFEST_NAME = "run.json"


def format_value(value: Any, digits: int = 15) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        number = float(value)
        if math.isnan(number):
            return "nan"
        if math.isinf(number):
            return "inf" if number > 0 else "-inf"
        return f"{number:.{digits - 1}e}"
    return str(value)


def config_snapshot(config: ExperimentConfig) -> dict[str, Any]:
    return config.model_dump(mode="json")


def config_hash(config: ExperimentConfig) -> str:
    payload = orjson.dumps(config_snapshot(config), option=orjson.OPT_SORT_KEYS)
    return hashlib.sha256(payload).hexdigest()


def file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class RunWriter:
    """Collects the files of one command run and writes the manifest last."""

    def __init__(
        self,
        directory: Path,
        command: str,
        config: ExperimentConfig,
        digits: int = 15,
        run_id: Optional[str] = None,
    ):
        self.directory = Path(directory)
        self.digits = digits
        self.directory.mkdir(parents=True, exist_ok=True)
        self.record = RunRecord(
            run_id=run_id or str(uuid.uuid4()),
            command=command,
            version=__version__,
            config_hash=config_hash(config),
            config=config_snapshot(config),
            started_at=datetime.now(timezone.utc),
        )

    @property
    def run_id(self) -> str:
        return self.record.run_id

    @property
    def warnings(self) -> list[str]:
        return self.record.warnings

    def warn(self, message: str) -> None:
        self.record.warnings.append(message)
        logger.warning("run.warning", message=message)

    def _register(
        self, path: Path, rows: Optional[int] = None, columns: Sequence[str] = ()
    ) -> None:
        entry = ManifestEntry(
            path=path.name,
            sha256=file_digest(path),
            bytes=path.stat().st_size,
            rows=rows,
            columns=list(columns),
        )
        self.record.files = [f for f in self.record.files if f.path != entry.path] + [entry]

    def write_csv(self, name: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        path = self.directory / name
        count = 0
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\r\n")
            writer.writerow(columns)
            for row in rows:
                if len(row) != len(columns):
                    raise ValueError(
                        f"{name}: row has {len(row)} fields, header has {len(columns)}"
                    )
                writer.writerow([format_value(v, self.digits) for v in row])
                count += 1
        self._register(path, rows=count, columns=columns)
        logger.debug("run.csv.written", path=str(path), rows=count)
        return path

    def write_text(self, name: str, content: str) -> Path:
        path = self.directory / name
        path.write_text(content, encoding="utf-8")
        self._register(path)
        return path

    def finish(
        self,
        status: Literal["completed", "partial", "failed"] = "completed",
        summary: Optional[dict[str, Any]] = None,
    ) -> RunRecord:
        self.record.status = status
        self.record.finished_at = datetime.now(timezone.utc)
        if summary is not None:
            self.record.summary = summary
        path = self.directory / MANIFEST_NAME
        payload = self.record.model_dump(mode="json")
        options = orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY
        path.write_bytes(orjson.dumps(payload, option=options))
        logger.info(
            "run.manifest.written",
            path=str(path),
            files=len(self.record.files),
            warnings=len(self.record.warnings),
            status=status,
        )
        return self.record


def read_manifest(directory: Path) -> RunRecord:
    return RunRecord.model_validate(orjson.loads((Path(directory) / MANIFEST_NAME).read_bytes()))
