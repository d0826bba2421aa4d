"""Deterministic discrete-event simulation of the slot pipeline.

Virtual time is integer microseconds and every event is totally ordered
by (time, insertion sequence), so a config maps to exactly one trace,
byte for byte. The simulator drives the same ``tick`` code as the live
engine; slots, arrivals and the segment cluster are replaced by timing
models:

  * connecting takes t_s, a send window lasts t_d, committing takes
    commit_fixed + rows * commit_per_row
  * arrivals follow a piecewise-constant rows/sec schedule (optionally
    Poisson-thinned from a seed)
  * while some slot is streaming, arrivals flow straight into its
    batch; otherwise they pile up as backlog

Two strategies are modeled. ``gate`` slots pre-open their transaction
before entering Wait, so a dispatched slot streams immediately. A
``naive`` slot only opens its transaction after being handed the send
window, which puts t_s back on the batch's critical path. Batch latency
is measured from dispatch to commit acknowledgment in both modes.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import math
import random
from dataclasses import dataclass, field, replace
from typing import Any

from .scheduler import (
    AbortSlot,
    ABORT_NO_DATA_CYCLE,
    ActivateSlot,
    DecisionLog,
    DispatchSender,
    SchedulerState,
    Strategy,
    TimingParams,
    logged_tick,
    tick_interval_us,
)
from .slot import SlotPhase

_URQ = 1_000_000  # micro-rows per row: arrival integration unit

# event kinds, processed in (time, seq) order
_TICK = 0
_CONNECT_DONE = 1
_READY_AFTER_DISPATCH = 2  # naive only: txn opened, streaming starts
_SEND_END = 3
_COMMIT_DONE = 4
_RATE_CHANGE = 5
_SEED = 6  # forced activation of a pre-warmed pool


@dataclass(frozen=True)
class SimConfig:
    """Scenario description. Times in ms, rates in rows/sec."""

    t_d_ms: int = 100
    t_s_ms: int = 50
    commit_fixed_ms: int = 0
    commit_per_row_us: int = 0
    arrival: tuple[tuple[int, int], ...] = ((0, 1000),)  # (at_ms, rows_per_sec)
    duration_ms: int = 3000
    seed: int = 0
    strategy: Strategy = Strategy.GATE
    max_slots: int = 64
    dispatch_cycle_ms: int = 10_000
    tick_ms: int | None = None
    # pre-warmed pool: slot k is force-activated at (k-1)*t_d, one per
    # interval, so the seeded rotation starts in phase instead of all
    # slots becoming ready at once and tripping the idle-wait trim
    initial_slots: int = 0
    poisson: bool = False

    def __post_init__(self) -> None:
        if self.t_d_ms <= 0:
            raise ValueError("t_d_ms must be positive")
        if self.t_s_ms < 0 or self.commit_fixed_ms < 0 or self.commit_per_row_us < 0:
            raise ValueError("latencies must be non-negative")
        if self.duration_ms <= 0:
            raise ValueError("duration_ms must be positive")
        if not self.arrival:
            raise ValueError("arrival schedule must have at least one step")
        last = -1
        for at_ms, rate in self.arrival:
            if at_ms <= last:
                raise ValueError("arrival steps must have increasing times")
            if rate < 0:
                raise ValueError("arrival rates must be non-negative")
            last = at_ms
        if self.arrival[0][0] != 0:
            raise ValueError("arrival schedule must start at t=0")
        if self.initial_slots < 0 or self.initial_slots > self.max_slots:
            raise ValueError("initial_slots out of range")
        if self.tick_ms is not None and self.tick_ms < 1:
            raise ValueError("tick_ms must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {
            "t_d_ms": self.t_d_ms,
            "t_s_ms": self.t_s_ms,
            "commit_fixed_ms": self.commit_fixed_ms,
            "commit_per_row_us": self.commit_per_row_us,
            "arrival": [list(step) for step in self.arrival],
            "duration_ms": self.duration_ms,
            "seed": self.seed,
            "strategy": self.strategy.value,
            "max_slots": self.max_slots,
            "dispatch_cycle_ms": self.dispatch_cycle_ms,
            "tick_ms": self.tick_ms,
            "initial_slots": self.initial_slots,
            "poisson": self.poisson,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SimConfig":
        known = dict(data)
        if "arrival" in known:
            known["arrival"] = tuple(tuple(step) for step in known["arrival"])
        if "strategy" in known:
            known["strategy"] = Strategy(known["strategy"])
        return cls(**known)

    def digest(self) -> str:
        raw = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(raw.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class TraceEvent:
    t: int
    kind: str
    slot_id: int
    detail: int = 0
    reason: str = ""


@dataclass(frozen=True)
class BatchStat:
    slot_id: int
    dispatched_at: int
    send_started_at: int
    send_ended_at: int
    committed_at: int
    rows: int

    @property
    def latency_us(self) -> int:
        return self.committed_at - self.dispatched_at


@dataclass
class SimTrace:
    config: SimConfig
    events: list[TraceEvent] = field(default_factory=list)
    batches: list[BatchStat] = field(default_factory=list)
    interval_slots: list[tuple[int, int]] = field(default_factory=list)
    starved_ticks: list[int] = field(default_factory=list)
    arrived_rows: int = 0
    committed_rows: int = 0
    final_slots: int = 0
    decision_log: DecisionLog | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config.to_dict(),
            "config_digest": self.config.digest(),
            "events": [
                [e.t, e.kind, e.slot_id, e.detail, e.reason] for e in self.events
            ],
            "batches": [
                [b.slot_id, b.dispatched_at, b.send_started_at, b.send_ended_at,
                 b.committed_at, b.rows]
                for b in self.batches
            ],
            "interval_slots": [list(pair) for pair in self.interval_slots],
            "starved_ticks": self.starved_ticks,
            "arrived_rows": self.arrived_rows,
            "committed_rows": self.committed_rows,
            "final_slots": self.final_slots,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, raw: str) -> "SimTrace":
        data = json.loads(raw)
        trace = cls(config=SimConfig.from_dict(data["config"]))
        trace.events = [
            TraceEvent(t, kind, slot, detail, reason)
            for t, kind, slot, detail, reason in data["events"]
        ]
        trace.batches = [
            BatchStat(*row) for row in data["batches"]
        ]
        trace.interval_slots = [tuple(pair) for pair in data["interval_slots"]]
        trace.starved_ticks = data["starved_ticks"]
        trace.arrived_rows = data["arrived_rows"]
        trace.committed_rows = data["committed_rows"]
        trace.final_slots = data["final_slots"]
        return trace

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def mean_batch_latency_us(self) -> float:
        if not self.batches:
            return 0.0
        return sum(b.latency_us for b in self.batches) / len(self.batches)

    def send_spans(self) -> list[tuple[int, int, int]]:
        """(slot_id, start, end) of every completed streaming window."""
        spans = []
        open_at: dict[int, int] = {}
        for e in self.events:
            if e.kind == "send_start":
                open_at[e.slot_id] = e.t
            elif e.kind == "send_end" and e.slot_id in open_at:
                spans.append((e.slot_id, open_at.pop(e.slot_id), e.t))
        return spans


@dataclass
class _SimSlot:
    slot_id: int
    phase: SlotPhase = SlotPhase.CONNECT
    alive: bool = True
    marked: bool = False
    mark_reason: str = ""
    connect_started_at: int = 0
    dispatched_at: int = 0
    send_started_at: int = 0
    send_ended_at: int = 0
    batch_rows: int = 0


class _Sim:
    def __init__(self, config: SimConfig) -> None:
        self.config = config
        self.t_d = config.t_d_ms * 1000
        self.t_s = config.t_s_ms * 1000
        self.commit_fixed = config.commit_fixed_ms * 1000
        self.per_row = config.commit_per_row_us
        self.duration = config.duration_ms * 1000
        self.tick_us = (
            config.tick_ms * 1000 if config.tick_ms else tick_interval_us(self.t_d)
        )
        self.gate = config.strategy is Strategy.GATE
        params = TimingParams(
            t_d_us=self.t_d,
            dispatch_cycle_us=config.dispatch_cycle_ms * 1000,
            max_slots=config.max_slots,
        )
        self.log = DecisionLog()
        self.state = SchedulerState(params, log=self.log)
        self.trace = SimTrace(config=config, decision_log=self.log)
        self.slots: dict[int, _SimSlot] = {}
        self.heap: list[tuple[int, int, int, int]] = []
        self.seq = 0
        self.rng = random.Random(config.seed)
        # arrival integration state
        self.schedule = list(config.arrival)
        self.rate = 0
        self.backlog = 0
        self.carry = 0
        self.last_mat = 0
        self.drainer: int | None = None
        self.arrived = 0
        self.committed = 0

    # -- event plumbing ----------------------------------------------

    def push(self, t: int, kind: int, slot_id: int = 0) -> None:
        self.seq += 1
        heapq.heappush(self.heap, (t, self.seq, kind, slot_id))

    def emit(self, t: int, kind: str, slot_id: int = 0, detail: int = 0, reason: str = "") -> None:
        self.trace.events.append(TraceEvent(t, kind, slot_id, detail, reason))

    # -- arrivals ------------------------------------------------------

    def materialize(self, now: int) -> None:
        """Turn elapsed arrival-rate time into whole rows."""
        dt = now - self.last_mat
        if dt > 0:
            if self.config.poisson:
                lam = self.rate * dt / _URQ
                rows = _poisson(self.rng, lam)
            else:
                self.carry += self.rate * dt
                rows = self.carry // _URQ
                self.carry -= rows * _URQ
            if rows:
                self.arrived += rows
                if self.drainer is not None:
                    self.slots[self.drainer].batch_rows += rows
                else:
                    self.backlog += rows
            self.last_mat = now
        elif dt == 0:
            return
        else:
            raise AssertionError("time went backwards")

    def commit_us(self, rows: int) -> int:
        return self.commit_fixed + rows * self.per_row

    # -- main loop -----------------------------------------------------

    def run(self) -> SimTrace:
        for at_ms, _ in self.schedule:
            self.push(at_ms * 1000, _RATE_CHANGE)
        for k in range(self.config.initial_slots):
            self.push(k * self.t_d, _SEED)
        self.push(0, _TICK)

        while self.heap:
            t, _, kind, slot_id = heapq.heappop(self.heap)
            if t > self.duration:
                break
            if kind == _TICK:
                self.on_tick(t)
            elif kind == _RATE_CHANGE:
                self.on_rate_change(t)
            elif kind == _CONNECT_DONE:
                self.on_connect_done(t, slot_id)
            elif kind == _READY_AFTER_DISPATCH:
                self.on_ready_after_dispatch(t, slot_id)
            elif kind == _SEND_END:
                self.on_send_end(t, slot_id)
            elif kind == _COMMIT_DONE:
                self.on_commit_done(t, slot_id)
            elif kind == _SEED:
                self.apply_activate(t)

        self.finish()
        return self.trace

    def on_rate_change(self, now: int) -> None:
        self.materialize(now)
        while self.schedule and self.schedule[0][0] * 1000 <= now:
            _, self.rate = self.schedule.pop(0)
        self.emit(now, "rate", 0, self.rate)

    def on_tick(self, now: int) -> None:
        self.materialize(now)
        nonempty = self.backlog > 0
        actions = logged_tick(self.state, now, nonempty)
        for action in actions:
            if isinstance(action, ActivateSlot):
                self.apply_activate(now)
            elif isinstance(action, DispatchSender):
                self.apply_dispatch(now, action.slot_id)
            elif isinstance(action, AbortSlot):
                self.apply_abort(now, action)
        if nonempty and self.state.current_sender is None:
            self.trace.starved_ticks.append(now)
        nxt = now + self.tick_us
        if nxt <= self.duration:
            self.push(nxt, _TICK)

    def apply_activate(self, now: int) -> None:
        sid = self.state.note_activated(now)
        slot = _SimSlot(sid, connect_started_at=now)
        self.slots[sid] = slot
        self.emit(now, "activated", sid)
        if self.gate:
            self.push(now + self.t_s, _CONNECT_DONE, sid)
        else:
            slot.phase = SlotPhase.WAIT
            self.state.note_ready(sid, now)
            self.emit(now, "ready", sid)

    def apply_dispatch(self, now: int, sid: int) -> None:
        slot = self.slots[sid]
        slot.dispatched_at = now
        slot.phase = SlotPhase.SEND
        self.state.note_dispatched(sid, now)
        self.emit(now, "dispatched", sid)
        if self.gate:
            self.start_streaming(now, slot)
        else:
            self.push(now + self.t_s, _READY_AFTER_DISPATCH, sid)

    def start_streaming(self, now: int, slot: _SimSlot) -> None:
        self.materialize(now)
        slot.batch_rows = self.backlog
        self.backlog = 0
        slot.send_started_at = now
        self.drainer = slot.slot_id
        self.emit(now, "send_start", slot.slot_id)
        self.push(now + self.t_d, _SEND_END, slot.slot_id)

    def apply_abort(self, now: int, action: AbortSlot) -> None:
        slot = self.slots.get(action.slot_id)
        if slot is None or not slot.alive:
            return
        if action.deferred:
            slot.marked = True
            slot.mark_reason = action.reason
            self.state.note_marked(slot.slot_id)
            self.emit(now, "marked", slot.slot_id, 0, action.reason)
        else:
            self.retire(now, slot, action.reason)

    def retire(self, now: int, slot: _SimSlot, reason: str) -> None:
        slot.alive = False
        slot.phase = SlotPhase.RETIRED
        if self.drainer == slot.slot_id:
            self.drainer = None
        self.state.note_retired(slot.slot_id, now)
        del self.slots[slot.slot_id]
        self.emit(now, "retired", slot.slot_id, 0, reason)

    def on_connect_done(self, now: int, sid: int) -> None:
        slot = self.slots.get(sid)
        if slot is None or not slot.alive or slot.phase is not SlotPhase.CONNECT:
            return
        slot.phase = SlotPhase.WAIT
        self.state.note_ready(sid, now)
        self.state.observe_ts(now - slot.connect_started_at)
        self.emit(now, "ready", sid)

    def on_ready_after_dispatch(self, now: int, sid: int) -> None:
        slot = self.slots.get(sid)
        if slot is None or not slot.alive:
            return
        self.state.observe_ts(now - slot.dispatched_at)
        self.start_streaming(now, slot)

    def on_send_end(self, now: int, sid: int) -> None:
        slot = self.slots.get(sid)
        if slot is None or not slot.alive:
            return
        self.materialize(now)
        if self.drainer == sid:
            self.drainer = None
        slot.send_ended_at = now
        rows = slot.batch_rows
        self.state.note_send_ended(sid, rows, now)
        self.emit(now, "send_end", sid, rows)
        if slot.marked and slot.mark_reason == ABORT_NO_DATA_CYCLE and rows > 0:
            # the idle-cycle premise is void: the batch moved data
            slot.marked = False
            slot.mark_reason = ""
            self.state.cancel_mark(sid)
            self.emit(now, "mark_cancelled", sid)
        if slot.marked and rows == 0:
            # retire without committing the empty transaction
            self.retire(now, slot, slot.mark_reason)
            return
        slot.phase = SlotPhase.COMMIT
        self.push(now + self.commit_us(rows), _COMMIT_DONE, sid)

    def on_commit_done(self, now: int, sid: int) -> None:
        slot = self.slots.get(sid)
        if slot is None or not slot.alive:
            return
        rows = slot.batch_rows
        self.committed += rows
        self.state.observe_tc(now - slot.send_ended_at)
        self.trace.batches.append(
            BatchStat(
                sid,
                slot.dispatched_at,
                slot.send_started_at,
                slot.send_ended_at,
                now,
                rows,
            )
        )
        self.emit(now, "commit", sid, rows)
        slot.batch_rows = 0
        if slot.marked:
            self.state.note_commit_acked(sid, now)
            self.retire(now, slot, slot.mark_reason)
            return
        self.state.note_commit_acked(sid, now)
        if self.gate:
            slot.phase = SlotPhase.CONNECT
            slot.connect_started_at = now
            self.emit(now, "reconnect", sid)
            self.push(now + self.t_s, _CONNECT_DONE, sid)
        else:
            slot.phase = SlotPhase.WAIT
            self.state.note_ready(sid, now)
            self.emit(now, "ready", sid)

    def finish(self) -> None:
        trace = self.trace
        trace.arrived_rows = self.arrived
        trace.committed_rows = self.committed
        trace.final_slots = len(self.slots)
        # live-pool size sampled at every interval boundary
        deltas: dict[int, int] = {}
        for e in trace.events:
            if e.kind == "activated":
                deltas[e.t] = deltas.get(e.t, 0) + 1
            elif e.kind == "retired":
                deltas[e.t] = deltas.get(e.t, 0) - 1
        times = sorted(deltas)
        count = 0
        idx = 0
        for k in range(self.duration // self.t_d + 1):
            boundary = k * self.t_d
            while idx < len(times) and times[idx] <= boundary:
                count += deltas[times[idx]]
                idx += 1
            trace.interval_slots.append((k, count))


def _poisson(rng: random.Random, lam: float) -> int:
    """Seeded Poisson sample; splits large lambda to avoid underflow."""
    total = 0
    while lam > 30.0:
        total += _poisson(rng, lam / 2)
        lam /= 2
    threshold = math.exp(-lam)
    k = 0
    p = 1.0
    while True:
        p *= rng.random()
        if p <= threshold:
            return total + k
        k += 1


def run_sim(config: SimConfig) -> SimTrace:
    """Execute one scenario and return its complete trace."""
    return _Sim(config).run()


@dataclass(frozen=True)
class StrategyComparison:
    naive_mean_us: float
    gate_mean_us: float
    naive_batches: int
    gate_batches: int

    @property
    def saved_us(self) -> float:
        return self.naive_mean_us - self.gate_mean_us


def compare_strategies(config: SimConfig) -> StrategyComparison:
    """Run the same scenario under both strategies and compare mean
    dispatch-to-visibility batch latency."""
    naive = run_sim(replace(config, strategy=Strategy.NAIVE))
    gate = run_sim(replace(config, strategy=Strategy.GATE))
    return StrategyComparison(
        naive_mean_us=naive.mean_batch_latency_us(),
        gate_mean_us=gate.mean_batch_latency_us(),
        naive_batches=len(naive.batches),
        gate_batches=len(gate.batches),
    )


_GANTT_CHARS = {
    SlotPhase.CONNECT: "c",
    SlotPhase.WAIT: "w",
    SlotPhase.SEND: "S",
    SlotPhase.COMMIT: "k",
}


def render_gantt(trace: SimTrace, bucket_ms: int | None = None, max_width: int = 120) -> str:
    """Character timeline of every slot's phases.

    One row per slot, one column per time bucket: ``c`` connecting,
    ``w`` waiting, ``S`` streaming, ``k`` committing, space when the
    slot does not exist. Deterministic for a given trace.
    """
    duration = trace.config.duration_ms * 1000
    if bucket_ms is None:
        bucket_ms = max(1, -(-trace.config.duration_ms // max_width))
    bucket = bucket_ms * 1000
    columns = -(-duration // bucket)

    # phase segments per slot from the event stream
    segments: dict[int, list[tuple[int, SlotPhase | None]]] = {}

    def mark(slot_id: int, t: int, phase: SlotPhase | None) -> None:
        segments.setdefault(slot_id, []).append((t, phase))

    for e in trace.events:
        if e.kind == "activated":
            start_phase = (
                SlotPhase.CONNECT if trace.config.strategy is Strategy.GATE else SlotPhase.WAIT
            )
            mark(e.slot_id, e.t, start_phase)
        elif e.kind == "ready":
            mark(e.slot_id, e.t, SlotPhase.WAIT)
        elif e.kind == "dispatched":
            # a naive slot opens its transaction before streaming
            phase = SlotPhase.SEND if trace.config.strategy is Strategy.GATE else SlotPhase.CONNECT
            mark(e.slot_id, e.t, phase)
        elif e.kind == "send_start":
            mark(e.slot_id, e.t, SlotPhase.SEND)
        elif e.kind == "send_end":
            mark(e.slot_id, e.t, SlotPhase.COMMIT)
        elif e.kind == "reconnect":
            mark(e.slot_id, e.t, SlotPhase.CONNECT)
        elif e.kind == "retired":
            mark(e.slot_id, e.t, None)

    lines = [
        f"slots over {trace.config.duration_ms} ms, one column = {bucket // 1000} ms "
        f"(c connect, w wait, S send, k commit)"
    ]
    for slot_id in sorted(segments):
        segs = segments[slot_id]
        row = []
        for col in range(columns):
            t = col * bucket
            phase: SlotPhase | None = None
            for at, ph in segs:
                if at <= t:
                    phase = ph
                else:
                    break
            row.append(_GANTT_CHARS.get(phase, " ") if phase else " ")
        lines.append(f"slot {slot_id:>3} |{''.join(row)}|")
    if len(lines) == 1:
        lines.append("(no slots)")
    return "\n".join(lines)
