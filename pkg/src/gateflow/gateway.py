"""The live gateway: ingest listener, slot pool, and scheduler loop
wired together on one asyncio event loop.

Each slot is owned by a single task cycling connect -> wait -> send ->
commit against a persistent connection per segment. A batch is kept in
memory until every segment acknowledges its commit; a connection lost
mid-send aborts the segment transaction (nothing became visible) and
the retained rows go back into the pipeline, so no record is silently
lost and none is committed twice. The scheduler tick runs as its own
task and talks to slots through per-slot command queues; slots report
phase changes back by mutating the shared scheduler state, which is
safe because everything lives on one loop.
"""

from __future__ import annotations

import asyncio
import uuid
from dataclasses import dataclass, field

from .clock import WallClock
from .config import GatewayConfig
from .ingest import IngestServer
from .metrics import Counters
from .pipeline import LockFreeQueue
from .records import Record
from .scheduler import (
    AbortSlot,
    ActivateSlot,
    DecisionLog,
    DispatchSender,
    SchedulerState,
    TimingParams,
    logged_tick,
    tick,
    tick_interval_us,
)
from .slot import Initiator, Slot, SlotPhase, Transition, make_txn_id, route_record

TABLE_NAME = "ingest"
DRAIN_CHUNK = 512
SEND_POLL_US = 1000


class SlotProtocolError(RuntimeError):
    pass


@dataclass
class _SegmentLink:
    reader: asyncio.StreamReader
    writer: asyncio.StreamWriter

    def close(self) -> None:
        self.writer.close()


@dataclass
class SlotRunner:
    """Task-side of one slot: owns its sockets and its retained batch."""

    gateway: "Gateway"
    slot: Slot
    commands: asyncio.Queue = field(default_factory=asyncio.Queue)
    links: list[_SegmentLink] = field(default_factory=list)
    batch: list[Record] = field(default_factory=list)
    # link indexes where an EOF write was attempted this cycle; rows
    # routed there are ambiguous after a failure (the commit may have
    # landed) and must not be re-enqueued
    eof_attempted: set = field(default_factory=set)
    task: asyncio.Task | None = None
    # set when the scheduler has already written this slot off; the
    # runner must tear down without further state reports
    doomed: bool = False

    async def run(self) -> None:
        gw = self.gateway
        try:
            await self._open_links()
            while True:
                self.eof_attempted.clear()
                txn = make_txn_id(gw.nonce, self.slot.slot_id, self.slot.cycle)
                await self._begin_txn(txn)
                if self.doomed:
                    self._teardown_doomed()
                    return
                self.slot.transition(SlotPhase.WAIT, Initiator.SCHEDULER, gw.now(), txn)
                gw.state.note_ready(self.slot.slot_id, gw.now())
                if not await self._await_dispatch():
                    return  # aborted out of Wait
                await self._send_window()
                committed = await self._commit(txn)
                if committed is None:
                    return  # retired at the commit boundary
        except (ConnectionError, OSError, asyncio.IncompleteReadError, SlotProtocolError):
            self._fail()
        except asyncio.CancelledError:
            self._close_links()
            raise
        finally:
            gw.runner_done(self)

    # -- phases --------------------------------------------------------

    async def _open_links(self) -> None:
        for seg in self.gateway.config.segments:
            reader, writer = await asyncio.open_connection(seg.host, seg.port)
            self.links.append(_SegmentLink(reader, writer))

    async def _begin_txn(self, txn: str) -> None:
        start = self.gateway.now()
        for link in self.links:
            link.writer.write(f"BEGIN {txn} {TABLE_NAME}\n".encode())
            await link.writer.drain()
        for link in self.links:
            frame = (await link.reader.readline()).decode().split()
            if frame[:2] != ["READY", txn]:
                raise SlotProtocolError(f"expected READY {txn}, got {frame}")
        self.gateway.state.observe_ts(self.gateway.now() - start)

    async def _await_dispatch(self) -> bool:
        while True:
            cmd = await self.commands.get()
            if cmd == "dispatch" and not self.doomed:
                return True
            if cmd == "abort":
                self._teardown_doomed()
                return False

    def _teardown_doomed(self) -> None:
        # the scheduler already dropped this slot from its registry at
        # decision time, so only the local side needs cleaning up
        self.slot.transition(SlotPhase.RETIRED, Initiator.SCHEDULER, self.gateway.now())
        self._close_links()

    async def _send_window(self) -> None:
        gw = self.gateway
        now = gw.now()
        self.slot.transition(SlotPhase.SEND, Initiator.SCHEDULER, now)
        deadline = now + gw.t_d_us
        n_segs = len(self.links)
        buffers: list[list[str]] = [[] for _ in range(n_segs)]
        while True:
            remaining = deadline - gw.now()
            if remaining <= 0:
                break
            room = gw.max_batch_rows - len(self.batch)
            chunk = gw.queue.drain_up_to(min(DRAIN_CHUNK, room)) if room else []
            if chunk:
                self.batch.extend(chunk)
                for rec in chunk:
                    buffers[route_record(rec.device_id, n_segs)].append(rec.to_line())
                for idx, buf in enumerate(buffers):
                    if buf:
                        self.links[idx].writer.write(
                            ("\n".join(buf) + "\n").encode()
                        )
                        buf.clear()
                for link in self.links:
                    await link.writer.drain()
            else:
                # idle stretch of the window: a segment that hung up is
                # only visible on the read side, and noticing it now,
                # before any EOF goes out, keeps the batch re-enqueueable
                for link in self.links:
                    if link.reader.at_eof() or link.reader.exception() is not None:
                        raise ConnectionResetError("segment link lost during send")
                await asyncio.sleep(min(remaining, SEND_POLL_US) / 1_000_000)

    async def _commit(self, txn: str) -> int | None:
        gw = self.gateway
        rows = len(self.batch)
        eof_at = gw.now()
        self.slot.batch_rows = rows
        # the one slot-initiated edge: the collection interval is over
        self.slot.transition(SlotPhase.COMMIT, Initiator.SLOT, eof_at)
        gw.state.note_send_ended(self.slot.slot_id, rows, eof_at)
        if self.slot.marked_for_abort:
            if rows > 0:
                # the idle-cycle premise is void: the batch moved data
                self.slot.marked_for_abort = False
                gw.state.cancel_mark(self.slot.slot_id)
            else:
                # no data this cycle: drop the empty transaction
                # instead of paying its commit cost
                self._retire_marked(committed=False)
                return None
        for idx, link in enumerate(self.links):
            self.eof_attempted.add(idx)
            link.writer.write(b"EOF\n")
            await link.writer.drain()
        total = 0
        for link in self.links:
            frame = (await link.reader.readline()).decode().split()
            if frame[:2] != ["COMMITTED", txn]:
                raise SlotProtocolError(f"expected COMMITTED {txn}, got {frame}")
            total += int(frame[2])
        if total != rows:
            raise SlotProtocolError(f"committed {total} of {rows} rows of {txn}")
        ack_at = gw.now()
        gw.state.observe_tc(ack_at - eof_at)
        gw.state.note_commit_acked(self.slot.slot_id, ack_at)
        gw.counters.add("rows_committed", rows)
        gw.counters.set_gauge("last_commit_ms", ack_at // 1000)
        self.batch.clear()
        if self.slot.marked_for_abort:
            self._retire_marked(committed=True)
            return None
        self.slot.transition(SlotPhase.CONNECT, Initiator.SCHEDULER, ack_at)
        return rows

    # -- teardown ------------------------------------------------------

    def _retire_marked(self, committed: bool) -> None:
        gw = self.gateway
        self.slot.transition(SlotPhase.RETIRED, Initiator.SCHEDULER, gw.now())
        self._close_links()
        gw.state.note_retired(self.slot.slot_id, gw.now())
        if not committed:
            self.batch.clear()

    def _fail(self) -> None:
        """Connection or protocol failure. A segment only publishes on
        EOF, so rows routed to links that never saw an EOF attempt go
        back to the pipeline; rows past an EOF attempt might already be
        committed there, and re-sending them would duplicate."""
        gw = self.gateway
        if not self.slot.retired:
            self.slot.transition(SlotPhase.RETIRED, Initiator.FAILURE, gw.now())
            if not self.doomed:
                gw.state.note_retired(self.slot.slot_id, gw.now())
        n_segs = len(self.links)
        self._close_links()
        if self.batch and n_segs:
            safe = [
                rec
                for rec in self.batch
                if route_record(rec.device_id, n_segs) not in self.eof_attempted
            ]
            if safe:
                gw.queue.extend(safe)
        self.batch.clear()

    def _close_links(self) -> None:
        for link in self.links:
            link.close()
        self.links.clear()


class Gateway:
    """Owns the pipeline, the ingest server, the slot pool, and the
    scheduler tick task."""

    def __init__(self, config: GatewayConfig, *, keep_decision_log: bool = False) -> None:
        self.config = config
        self.clock = WallClock()
        self.queue = LockFreeQueue(capacity=config.queue_capacity)
        self.counters = Counters()
        self.t_d_us = config.interval_ms * 1000
        self.max_batch_rows = 1_000_000
        params = TimingParams(
            t_d_us=self.t_d_us,
            dispatch_cycle_us=config.dispatch_cycle_ms * 1000,
            max_slots=config.max_slots,
        )
        self.decision_log = DecisionLog() if keep_decision_log else None
        self.state = SchedulerState(params, log=self.decision_log)
        self.nonce = uuid.uuid4().hex[:8]
        host, port = config.listen_host_port()
        self.ingest = IngestServer(
            self.queue,
            config.schema_obj(),
            self.counters,
            host,
            port,
            listeners=config.listeners,
        )
        self.runners: dict[int, SlotRunner] = {}
        self.audit_slots: list[Slot] = []
        self._tick_task: asyncio.Task | None = None
        self._running = False

    def now(self) -> int:
        return self.clock.now_us()

    @property
    def ingest_port(self) -> int:
        return self.ingest.bound_port

    # -- lifecycle -----------------------------------------------------

    async def start(self) -> None:
        await self.ingest.start()
        self._running = True
        self._tick_task = asyncio.create_task(self._tick_loop())

    async def stop(self) -> None:
        self._running = False
        if self._tick_task is not None:
            self._tick_task.cancel()
            try:
                await self._tick_task
            except asyncio.CancelledError:
                pass
        for runner in list(self.runners.values()):
            if runner.task is not None:
                runner.task.cancel()
        for runner in list(self.runners.values()):
            if runner.task is not None:
                try:
                    await runner.task
                except asyncio.CancelledError:
                    pass
        await self.ingest.stop()

    async def quiesce(self, timeout_s: float = 30.0) -> bool:
        """Wait until every accepted row has been committed and the
        pipeline is empty. Returns False on timeout."""
        deadline = asyncio.get_running_loop().time() + timeout_s
        while asyncio.get_running_loop().time() < deadline:
            snap = self.counters.snapshot()
            if (
                self.queue.approx_len() == 0
                and snap["rows_accepted"] == snap["rows_committed"]
                and all(not r.batch for r in self.runners.values())
            ):
                return True
            await asyncio.sleep(0.02)
        return False

    # -- scheduler plumbing --------------------------------------------

    async def _tick_loop(self) -> None:
        interval_s = tick_interval_us(self.t_d_us) / 1_000_000
        while self._running:
            now = self.now()
            nonempty = self.queue.approx_len() > 0
            if self.decision_log is not None:
                actions = logged_tick(self.state, now, nonempty)
            else:
                actions = tick(self.state, now, nonempty)
            for action in actions:
                if isinstance(action, ActivateSlot):
                    self._activate(now)
                elif isinstance(action, DispatchSender):
                    # state changes at decision time, not when the
                    # runner wakes, or the next tick could pick a
                    # second sender
                    self.state.note_dispatched(action.slot_id, now)
                    self._command(action.slot_id, "dispatch")
                elif isinstance(action, AbortSlot):
                    self._apply_abort(action, now)
            await asyncio.sleep(interval_s)

    def _activate(self, now: int) -> None:
        sid = self.state.note_activated(now)
        slot = Slot(slot_id=sid, segment_count=len(self.config.segments))
        slot.phase_entered_at = now
        runner = SlotRunner(self, slot)
        runner.task = asyncio.create_task(runner.run())
        self.runners[sid] = runner
        self.audit_slots.append(slot)
        self.counters.add("slots_activated_total")
        self.counters.set_gauge("active_slots", len(self.runners))

    def _command(self, sid: int, cmd: str) -> None:
        runner = self.runners.get(sid)
        if runner is not None:
            runner.commands.put_nowait(cmd)

    def _apply_abort(self, action: AbortSlot, now: int) -> None:
        runner = self.runners.get(action.slot_id)
        if runner is None:
            return
        if action.deferred:
            if not runner.slot.marked_for_abort:
                runner.slot.marked_for_abort = True
                self.state.note_marked(action.slot_id)
        elif not runner.doomed:
            # retire in scheduler state immediately so later ticks
            # cannot dispatch or re-abort it; the runner cleans up its
            # own sockets when it sees the command
            runner.doomed = True
            self.state.note_retired(action.slot_id, now)
            self._command(action.slot_id, "abort")

    def runner_done(self, runner: SlotRunner) -> None:
        sid = runner.slot.slot_id
        if self.runners.pop(sid, None) is not None:
            self.counters.set_gauge("active_slots", len(self.runners))
            if self._running:
                self.counters.add("slots_aborted_total")

    # -- audit -----------------------------------------------------------

    def transitions(self) -> list[Transition]:
        """Every phase transition of every slot ever activated, in
        per-slot order; the raw material for invariant audits."""
        events: list[Transition] = []
        for slot in self.audit_slots:
            events.extend(slot.history)
        return events

    def send_spans(self) -> list[tuple[int, int, int]]:
        """(slot_id, start, end) for every completed send window."""
        spans = []
        for slot in self.audit_slots:
            start: int | None = None
            for tr in slot.history:
                if tr.dst is SlotPhase.SEND:
                    start = tr.at
                elif start is not None:
                    spans.append((slot.slot_id, start, tr.at))
                    start = None
        return spans
