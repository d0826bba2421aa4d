"""Ingest listener: accepts posted CSV lines and feeds the pipeline.

The HTTP layer is a deliberately small hand-rolled HTTP/1.1 server on
asyncio streams (persistent connections, Content-Length bodies only).
Three routes:

    POST /ingest   body: CSV lines -> JSON {accepted, rejected,
                   backpressured}; status 429 when anything was
                   backpressured so producers know to retry
    GET  /healthz  liveness probe
    GET  /metrics  flat key=value counter document

A malformed line is counted, logged, and skipped; it never affects its
neighbors. Accepted records get a per-listener dense sequence number
for audit; a backpressured line does not burn one.
"""

from __future__ import annotations

import asyncio
import json
import time
from collections import deque
from dataclasses import dataclass

from .metrics import Counters
from .pipeline import EnqueueResult, LockFreeQueue
from .records import IngestError, Record, Schema, parse_record

MAX_BODY_BYTES = 8 * 1024 * 1024
ERROR_LOG_LIMIT = 1000


@dataclass(frozen=True)
class IngestReport:
    accepted: int = 0
    rejected: int = 0
    backpressured: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {
                "accepted": self.accepted,
                "rejected": self.rejected,
                "backpressured": self.backpressured,
            }
        )


def _now_us() -> int:
    return time.monotonic_ns() // 1000


class LineIngestor:
    """One listener's parse-and-enqueue worker.

    Owns the dense seq counter for records it accepts. Not safe for
    concurrent calls; each listener task gets its own instance.
    """

    def __init__(
        self,
        queue: LockFreeQueue,
        schema: Schema,
        listener_id: int = 0,
        error_log: deque | None = None,
    ) -> None:
        self.queue = queue
        self.schema = schema
        self.listener_id = listener_id
        self.error_log = error_log if error_log is not None else deque(maxlen=ERROR_LOG_LIMIT)
        self.next_seq = 0

    def handle_post(self, body: str) -> IngestReport:
        accepted = rejected = backpressured = 0
        lines = body.splitlines()
        for line_number, line in enumerate(lines, start=1):
            parsed = parse_record(
                line,
                self.schema,
                seq=self.next_seq,
                line_number=line_number,
                now_us=_now_us(),
            )
            if isinstance(parsed, IngestError):
                self.error_log.append(parsed)
                rejected += 1
            elif self.queue.enqueue(parsed) is EnqueueResult.ACCEPTED:
                self.next_seq += 1
                accepted += 1
            else:
                # stop at the first full-queue signal so the
                # backpressured lines are exactly the tail of the body
                # and the producer can re-post them without duplicates
                backpressured = len(lines) - line_number + 1
                break
        return IngestReport(accepted, rejected, backpressured)


def _http_response(
    status: int,
    body: bytes,
    content_type: str = "text/plain",
    keep_alive: bool = True,
) -> bytes:
    reason = {200: "OK", 404: "Not Found", 405: "Method Not Allowed",
              413: "Payload Too Large", 429: "Too Many Requests",
              400: "Bad Request"}.get(status, "Error")
    conn = "keep-alive" if keep_alive else "close"
    head = (
        f"HTTP/1.1 {status} {reason}\r\n"
        f"Content-Type: {content_type}\r\n"
        f"Content-Length: {len(body)}\r\n"
        f"Connection: {conn}\r\n\r\n"
    )
    return head.encode() + body


class IngestServer:
    """The HTTP front of the gateway. Connections are spread
    round-robin over ``listeners`` ingestor workers sharing one
    pipeline."""

    def __init__(
        self,
        queue: LockFreeQueue,
        schema: Schema,
        counters: Counters,
        host: str = "127.0.0.1",
        port: int = 0,
        listeners: int = 1,
    ) -> None:
        self.queue = queue
        self.counters = counters
        self.error_log: deque[IngestError] = deque(maxlen=ERROR_LOG_LIMIT)
        self.ingestors = [
            LineIngestor(queue, schema, i, self.error_log) for i in range(listeners)
        ]
        self.host = host
        self.port = port
        self._server: asyncio.AbstractServer | None = None
        self._conns: set[asyncio.StreamWriter] = set()
        self._conn_count = 0

    @property
    def bound_port(self) -> int:
        assert self._server is not None, "server not started"
        return self._server.sockets[0].getsockname()[1]

    async def start(self) -> None:
        self._server = await asyncio.start_server(self._serve, self.host, self.port)

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
            self._server = None
        for writer in list(self._conns):
            writer.close()
        # handlers wake on the closed transport and clean themselves up
        await asyncio.sleep(0)

    async def _serve(
        self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter
    ) -> None:
        ingestor = self.ingestors[self._conn_count % len(self.ingestors)]
        self._conn_count += 1
        self._conns.add(writer)
        try:
            while True:
                request = await reader.readline()
                if not request:
                    break
                try:
                    method, path, _ = request.decode().split(" ", 2)
                except ValueError:
                    writer.write(_http_response(400, b"bad request\n", keep_alive=False))
                    await writer.drain()
                    break
                length = 0
                keep_alive = True
                while True:
                    header = await reader.readline()
                    if header in (b"\r\n", b"\n", b""):
                        break
                    name, _, value = header.decode().partition(":")
                    name = name.strip().lower()
                    if name == "content-length":
                        length = int(value.strip())
                    elif name == "connection" and value.strip().lower() == "close":
                        keep_alive = False
                if length > MAX_BODY_BYTES:
                    writer.write(_http_response(413, b"body too large\n", keep_alive=False))
                    await writer.drain()
                    break
                body = await reader.readexactly(length) if length else b""
                response = self._route(method, path, body, ingestor, keep_alive)
                writer.write(response)
                await writer.drain()
                if not keep_alive:
                    break
        except (asyncio.IncompleteReadError, ConnectionError):
            pass
        finally:
            self._conns.discard(writer)
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionError, OSError):
                pass

    def _route(
        self,
        method: str,
        path: str,
        body: bytes,
        ingestor: LineIngestor,
        keep_alive: bool,
    ) -> bytes:
        if method == "POST" and path == "/ingest":
            report = ingestor.handle_post(body.decode("utf-8", errors="replace"))
            self.counters.add("rows_accepted", report.accepted)
            self.counters.add("rows_rejected", report.rejected)
            self.counters.add("rows_backpressured", report.backpressured)
            status = 429 if report.backpressured else 200
            return _http_response(
                status, report.to_json().encode(), "application/json", keep_alive
            )
        if method == "GET" and path == "/healthz":
            return _http_response(200, b"ok\n", keep_alive=keep_alive)
        if method == "GET" and path == "/metrics":
            return _http_response(200, self.counters.render().encode(), keep_alive=keep_alive)
        if path in ("/ingest", "/healthz", "/metrics"):
            return _http_response(405, b"method not allowed\n", keep_alive=keep_alive)
        return _http_response(404, b"not found\n", keep_alive=keep_alive)
