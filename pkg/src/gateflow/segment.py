"""Mock segment daemon: the TCP endpoint a slot streams its batches to.

Wire protocol, one connection per slot-segment pair, newline framed:

    client: BEGIN <txn-id> <table>
    server: READY <txn-id>            (after begin latency)
    client: <csv-row> ...             (zero or more)
    client: EOF
    server: COMMITTED <txn-id> <n>    (after commit latency)
    server: ERROR <txn-id> <reason>   (duplicate-txn | unknown-txn |
                                       protocol-order)

Rows become query-visible atomically when the commit latency elapses,
never row-by-row; a connection dropped before EOF aborts its
transaction and nothing from it is ever visible. The latency model
stands in for a real storage engine: starting a transaction costs
begin_latency_ms and committing costs commit_fixed_ms plus
commit_per_row_us per row.
"""

from __future__ import annotations

import asyncio
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .config import SegmentConfig

ERR_DUPLICATE = "duplicate-txn"
ERR_UNKNOWN = "unknown-txn"
ERR_ORDER = "protocol-order"


@dataclass(frozen=True)
class LatencyModel:
    begin_latency_ms: int = 0
    commit_fixed_ms: int = 0
    commit_per_row_us: int = 0

    def __post_init__(self) -> None:
        if min(self.begin_latency_ms, self.commit_fixed_ms, self.commit_per_row_us) < 0:
            raise ValueError("latencies must be non-negative")

    @classmethod
    def from_config(cls, spec: SegmentConfig) -> "LatencyModel":
        return cls(spec.begin_latency_ms, spec.commit_fixed_ms, spec.commit_per_row_us)

    def begin_s(self) -> float:
        return self.begin_latency_ms / 1000

    def commit_s(self, rows: int) -> float:
        return (self.commit_fixed_ms * 1000 + rows * self.commit_per_row_us) / 1_000_000


class TxnState(str, Enum):
    BEGUN = "begun"
    STREAMING = "streaming"
    COMMITTING = "committing"
    COMMITTED = "committed"
    ABORTED = "aborted"


@dataclass
class SegmentTxn:
    txn_id: str
    table: str
    begun_at: float
    state: TxnState = TxnState.BEGUN
    rows: list[str] = field(default_factory=list)
    committed_at: float = 0.0


class SegmentStore:
    """Committed rows of one segment.

    All mutation happens inside ``publish`` under one lock, so a reader
    sees a transaction's rows either not at all or completely. Probe
    methods may be called from any thread.
    """

    def __init__(self, segment_id: str, dump_path: str | None = None) -> None:
        self.segment_id = segment_id
        self._lock = threading.Lock()
        self._lines: list[str] = []
        self._latest: dict[str, tuple[int, tuple[str, ...]]] = {}
        self._txn_rows: dict[str, int] = {}
        self._dump = open(dump_path, "a", encoding="utf-8") if dump_path else None
        self.last_publish_us = 0  # monotonic stamp of the latest commit

    def publish(self, txn_id: str, rows: list[str]) -> None:
        """Make a transaction's rows visible, all at once."""
        with self._lock:
            self._lines.extend(rows)
            for line in rows:
                fields = line.split(",")
                device, ts = fields[0], int(fields[1])
                cur = self._latest.get(device)
                if cur is None or ts >= cur[0]:
                    self._latest[device] = (ts, tuple(fields[2:]))
            self._txn_rows[txn_id] = len(rows)
            self.last_publish_us = time.monotonic_ns() // 1000
            if self._dump is not None:
                self._dump.writelines(f"{txn_id},{line}\n" for line in rows)
                self._dump.flush()

    def visibility_probe(self, device_id: str) -> Optional[tuple[int, tuple[str, ...]]]:
        """Latest committed (timestamp, values) for a device, or None."""
        with self._lock:
            return self._latest.get(device_id)

    def txn_rows(self, txn_id: str) -> int:
        """Committed row count of a transaction; 0 while uncommitted."""
        with self._lock:
            return self._txn_rows.get(txn_id, 0)

    def committed_lines(self) -> list[str]:
        with self._lock:
            return list(self._lines)

    @property
    def total_rows(self) -> int:
        with self._lock:
            return len(self._lines)

    def close(self) -> None:
        if self._dump is not None:
            self._dump.close()
            self._dump = None


class SegmentDaemon:
    """One listening segment. Host several of these in one process to
    emulate a multi-instance deployment on a single node."""

    def __init__(self, spec: SegmentConfig, dump_path: str | None = None) -> None:
        self.spec = spec
        self.latency = LatencyModel.from_config(spec)
        self.store = SegmentStore(spec.id, dump_path)
        self.txns: dict[str, SegmentTxn] = {}
        self._server: asyncio.AbstractServer | None = None
        self._conns: set[asyncio.StreamWriter] = set()
        # a segment applies one commit at a time, like a single-writer
        # storage engine; transaction starts stay concurrent
        self._commit_lock = asyncio.Lock()

    @property
    def bound_port(self) -> int:
        assert self._server is not None, "daemon not started"
        return self._server.sockets[0].getsockname()[1]

    async def start(self) -> None:
        self._server = await asyncio.start_server(
            self._serve_connection, self.spec.host, self.spec.port
        )

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
            self._server = None
        for writer in list(self._conns):
            writer.close()
        self.store.close()

    async def _serve_connection(
        self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter
    ) -> None:
        active: SegmentTxn | None = None
        last_txn = "-"
        loop = asyncio.get_running_loop()
        self._conns.add(writer)

        def reply(text: str) -> None:
            writer.write(text.encode() + b"\n")

        try:
            buf = b""
            while True:
                chunk = await reader.read(65536)
                if not chunk:
                    break
                buf += chunk
                *lines, buf = buf.split(b"\n")
                for raw in lines:
                    line = raw.decode("utf-8", errors="replace")
                    if line.startswith("BEGIN "):
                        parts = line.split(" ")
                        if len(parts) != 3 or not parts[1] or not parts[2]:
                            reply(f"ERROR - {ERR_ORDER}")
                            await writer.drain()
                            continue
                        txn_id, table = parts[1], parts[2]
                        if txn_id in self.txns:
                            reply(f"ERROR {txn_id} {ERR_DUPLICATE}")
                            await writer.drain()
                            continue
                        if active is not None:
                            reply(f"ERROR {txn_id} {ERR_ORDER}")
                            await writer.drain()
                            continue
                        txn = SegmentTxn(txn_id, table, loop.time())
                        self.txns[txn_id] = txn
                        active = txn
                        last_txn = txn_id
                        await asyncio.sleep(self.latency.begin_s())
                        reply(f"READY {txn_id}")
                        await writer.drain()
                    elif line == "EOF":
                        if active is None:
                            reply(f"ERROR {last_txn} {ERR_ORDER}")
                            await writer.drain()
                            continue
                        txn = active
                        txn.state = TxnState.COMMITTING
                        n = len(txn.rows)
                        async with self._commit_lock:
                            await asyncio.sleep(self.latency.commit_s(n))
                            self.store.publish(txn.txn_id, txn.rows)
                        txn.state = TxnState.COMMITTED
                        txn.committed_at = loop.time()
                        txn.rows = []  # the store owns them now
                        active = None
                        reply(f"COMMITTED {txn.txn_id} {n}")
                        await writer.drain()
                    elif line:
                        if active is None:
                            reason = ERR_ORDER if last_txn != "-" else ERR_UNKNOWN
                            reply(f"ERROR {last_txn} {reason}")
                            await writer.drain()
                            continue
                        active.rows.append(line)
                        active.state = TxnState.STREAMING
        except (ConnectionError, OSError):
            pass  # peer vanished; the finally block aborts its txn
        finally:
            if active is not None:
                # dropped mid-transaction: nothing becomes visible
                active.state = TxnState.ABORTED
            self._conns.discard(writer)
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionError, OSError):
                pass


async def start_cluster(
    specs: list[SegmentConfig], dump_dir: str | None = None
) -> list[SegmentDaemon]:
    """Start one daemon per segment spec; caller owns shutdown."""
    daemons = []
    for spec in specs:
        dump = f"{dump_dir}/{spec.id}.dump" if dump_dir else None
        daemon = SegmentDaemon(spec, dump)
        await daemon.start()
        daemons.append(daemon)
    return daemons
