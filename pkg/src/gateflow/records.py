"""Record model and CSV line parsing for the ingest path.

A wire line is ``<device-id>,<timestamp-us>,<v1>,...,<vN>`` where the
value columns are declared by a schema. Parsing never raises on bad
input; it returns a structured rejection instead so the listener can
count and log it.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, NamedTuple

# wire keywords of the segment protocol; a device id may not collide
# with them because data rows travel on the same connection
_RESERVED_PREFIXES = ("BEGIN", "EOF")

_RAW_TRUNCATE_BYTES = 1024


class Record(NamedTuple):
    """One accepted row. ``seq`` is assigned by the listener for audit."""

    device_id: str
    timestamp: int  # epoch microseconds
    values: tuple
    seq: int

    def to_line(self) -> str:
        return f"{self.device_id},{self.timestamp}," + ",".join(
            str(v) for v in self.values
        )


class RejectReason(str, Enum):
    ARITY = "Arity"
    TYPE = "Type"
    EMPTY_DEVICE = "EmptyDevice"
    BAD_TIMESTAMP = "BadTimestamp"


@dataclass(frozen=True)
class IngestError:
    """A rejected line, with enough context to debug the producer."""

    line_number: int
    raw_line: str  # truncated to 1 KiB
    reason: RejectReason
    at: int  # clock timestamp, microseconds

    @staticmethod
    def truncate(line: str) -> str:
        raw = line.encode("utf-8", errors="replace")
        if len(raw) <= _RAW_TRUNCATE_BYTES:
            return line
        return raw[:_RAW_TRUNCATE_BYTES].decode("utf-8", errors="ignore")


_CONVERTERS: dict[str, Callable[[str], object]] = {
    "int": int,
    "float": float,
    "str": str,
}


class Schema:
    """Ordered value columns following the two fixed leading columns."""

    def __init__(self, columns: list[tuple[str, str]]) -> None:
        if not columns:
            raise ValueError("schema needs at least one value column")
        for name, kind in columns:
            if kind not in _CONVERTERS:
                raise ValueError(f"unknown column type {kind!r} for {name!r}")
            if not name:
                raise ValueError("empty column name")
        self.columns = list(columns)
        self.converters = [_CONVERTERS[kind] for _, kind in columns]
        self.field_count = 2 + len(columns)

    @classmethod
    def parse_spec(cls, spec: str) -> "Schema":
        """Build a schema from ``name:type,name:type`` notation."""
        columns = []
        for part in spec.split(","):
            part = part.strip()
            if not part:
                continue
            name, sep, kind = part.partition(":")
            if not sep:
                raise ValueError(f"column spec {part!r} is not name:type")
            columns.append((name.strip(), kind.strip()))
        return cls(columns)

    def to_spec(self) -> str:
        return ",".join(f"{n}:{k}" for n, k in self.columns)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Schema) and self.columns == other.columns

    def __repr__(self) -> str:
        return f"Schema({self.to_spec()!r})"


def device_id_ok(device: str) -> bool:
    """A usable device id is non-empty, has no spaces, and does not
    collide with segment wire keywords."""
    if not device or " " in device:
        return False
    return not device.startswith(_RESERVED_PREFIXES)


def parse_record(
    line: str,
    schema: Schema,
    *,
    seq: int = 0,
    line_number: int = 1,
    now_us: int = 0,
) -> Record | IngestError:
    """Parse one CSV line against ``schema``.

    Returns a Record on success, otherwise an IngestError carrying the
    first applicable rejection reason. Checks run in the order: device
    id, column count, timestamp, value types.
    """
    fields = line.split(",")
    if not device_id_ok(fields[0]):
        return IngestError(
            line_number, IngestError.truncate(line), RejectReason.EMPTY_DEVICE, now_us
        )
    if len(fields) != schema.field_count:
        return IngestError(
            line_number, IngestError.truncate(line), RejectReason.ARITY, now_us
        )
    try:
        timestamp = int(fields[1])
    except ValueError:
        timestamp = -1
    if timestamp < 0:
        return IngestError(
            line_number, IngestError.truncate(line), RejectReason.BAD_TIMESTAMP, now_us
        )
    try:
        values = tuple(
            conv(raw) for conv, raw in zip(schema.converters, fields[2:])
        )
    except ValueError:
        return IngestError(
            line_number, IngestError.truncate(line), RejectReason.TYPE, now_us
        )
    return Record(fields[0], timestamp, values, seq)
