"""Export service - Result envelopes and CSV/JSON payload files.

CSV layout:
    line 1   "# " followed by the envelope as one line of JSON
    line 2   header row (column names carry units, e.g. flux_rad, E0_MHz)
    rest     data rows; floats written with repr() so they re-read exactly

JSON layout:
    {"envelope": {...}, "payload": {"columns": [...], "rows": [[...], ...]}}
    with sorted keys.

Every file is written to a temporary sibling first and renamed into place.
"""

import csv
import hashlib
import io
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional

import numpy as np

from app.models import ResultEnvelope, RunConfig
from app.settings import settings

logger = logging.getLogger(__name__)


@dataclass
class Table:
    """One payload table; name is the file suffix ("" for a single-table job)."""
    columns: list[str]
    rows: list[list[Any]]
    name: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        width = len(self.columns)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise ValueError(f"Row {i} of table {self.name or '<main>'} has {len(row)} cells, expected {width}")
        self.rows = [[plain(cell) for cell in row] for row in self.rows]
        self.metadata = plain(self.metadata)

    def column(self, name: str) -> list[Any]:
        index = self.columns.index(name)
        return [row[index] for row in self.rows]

    @property
    def payload(self) -> dict:
        return {"columns": list(self.columns), "rows": self.rows}


def plain(value: Any) -> Any:
    """Convert numpy scalars/arrays and tuples to JSON-ready Python values."""
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return plain(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    if isinstance(value, Path):
        return str(value)
    return value


def canonical_json(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


def payload_sha256(table: Table) -> str:
    """SHA-256 of the canonical JSON of the payload."""
    return hashlib.sha256(canonical_json(table.payload).encode("utf-8")).hexdigest()


def build_envelope(
    config: RunConfig,
    table: Table,
    started_at: datetime,
    wall_clock_s: float,
    metadata: Optional[dict] = None,
) -> ResultEnvelope:
    """Envelope for one table: config snapshot, version, timing and metadata."""
    return ResultEnvelope(
        version=settings.APP_VERSION,
        table=table.name,
        config=config.model_dump(mode="json"),
        started_at=started_at.astimezone(timezone.utc).isoformat(),
        wall_clock_s=wall_clock_s,
        metadata=plain({**(metadata or {}), **table.metadata}),
        payload_sha256=payload_sha256(table),
    )


def _cell(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_csv(envelope: ResultEnvelope, table: Table) -> str:
    buffer = io.StringIO()
    buffer.write("# " + canonical_json(envelope.model_dump(mode="json")) + "\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([_cell(cell) for cell in row])
    return buffer.getvalue()


def format_json(envelope: ResultEnvelope, table: Table) -> str:
    document = {"envelope": envelope.model_dump(mode="json"), "payload": table.payload}
    return json.dumps(document, sort_keys=True, indent=2) + "\n"


def atomic_write(path: Path, text: str) -> Path:
    """Write text to path through a temporary file in the same directory."""
    path.parent.mkdir(parents=True, exist_ok=True)
    handle = tempfile.NamedTemporaryFile(
        "w", encoding="utf-8", dir=path.parent, prefix=f".{path.name}.", suffix=".tmp", delete=False
    )
    try:
        with handle:
            handle.write(text)
        os.replace(handle.name, path)
    except BaseException:
        Path(handle.name).unlink(missing_ok=True)
        raise
    return path


def output_path(directory: Path, stem: str, table: Table, fmt: str) -> Path:
    suffix = f"_{table.name}" if table.name else ""
    return directory / f"{stem}{suffix}.{fmt}"


def write_tables(
    config: RunConfig,
    tables: list[Table],
    directory: Path,
    fmt: str,
    started_at: datetime,
    wall_clock_s: float,
    metadata: Optional[dict] = None,
) -> list[Path]:
    """
    Write every table of a job as its own file.

    Returns:
        Paths written, in table order
    """
    if fmt not in ("csv", "json"):
        raise ValueError(f"Unknown output format: {fmt}")
    stem = config.output.stem or config.job.kind
    written = []
    for table in tables:
        envelope = build_envelope(config, table, started_at, wall_clock_s, metadata)
        if not is_finite_table(table):
            logger.warning(f"Table {table.name or stem} has non-finite cells")
        text = format_csv(envelope, table) if fmt == "csv" else format_json(envelope, table)
        path = atomic_write(output_path(Path(directory), stem, table, fmt), text)
        logger.info(f"Wrote {len(table.rows)} rows to {path}")
        written.append(path)
    return written


def _parse_cell(text: str) -> Any:
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def read_result(path: Path) -> tuple[dict, Table]:
    """
    Read a file written by write_tables.

    Returns:
        (envelope dict, Table with parsed cells)
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        document = json.loads(text)
        envelope = document["envelope"]
        payload = document["payload"]
        return envelope, Table(payload["columns"], payload["rows"], name=envelope["table"])

    first, rest = text.split("\n", 1)
    if not first.startswith("# "):
        raise ValueError(f"{path} has no envelope line")
    envelope = json.loads(first[2:])
    rows = list(csv.reader(io.StringIO(rest)))
    columns, data = rows[0], rows[1:]
    return envelope, Table(columns, [[_parse_cell(c) for c in row] for row in data], name=envelope["table"])


def is_finite_table(table: Table) -> bool:
    """True when every numeric cell is finite."""
    return all(
        math.isfinite(cell) for row in table.rows for cell in row if isinstance(cell, float)
    )
