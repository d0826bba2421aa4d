"""Slot-pool scheduler: sizing rule, sender selection, tuning policies.

The pool size that keeps some slot always sending is

    optimal_slots = ceil((t_d + t_c + t_s) / t_d)

where t_d is the collection interval, t_s transaction-start latency and
t_c commit latency. The live engine cannot trust static estimates of
t_s and t_c, so ``tick`` grows and trims the pool with feedback rules
instead and converges to the same number:

  1. a fresh pool starts with exactly one slot
  2. grow when data is waiting and nobody is sending (after trying to
     dispatch an idle slot first)
  3. never grow twice within one interval
  4. never grow while the previously added slot has not sent yet
  5. trim a slot that idles in Wait longer than one interval
  6. at each dispatch-cycle boundary, trim slots that moved no rows in
     the whole cycle
  7. never retire the last slot before its in-flight send has finished

Abort checks run first within a tick, then dispatch, then growth, so
the decisions a tick emits are a pure function of (state, now, data
pending). Both the live engine and the simulator call this exact code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .slot import SlotPhase

DEFAULT_DISPATCH_CYCLE_MS = 10_000
DEFAULT_MAX_SLOTS = 64
DEFAULT_EWMA_WINDOW = 8

ABORT_IDLE_WAIT = "idle-wait"
ABORT_NO_DATA_CYCLE = "no-data-cycle"


def optimal_slots(t_d: int | float, t_s: int | float, t_c: int | float) -> int:
    """Smallest pool size whose rotation hides t_s + t_c behind sends.

    Unit-agnostic: pass all three in the same unit. Exact integer
    arithmetic when all arguments are ints.
    """
    if t_d <= 0:
        raise ValueError("t_d must be positive")
    if t_s < 0 or t_c < 0:
        raise ValueError("latencies must be non-negative")
    total = t_d + t_s + t_c
    if isinstance(total, int) and isinstance(t_d, int):
        return -(-total // t_d)
    return math.ceil(total / t_d)


class Strategy(str, Enum):
    NAIVE = "naive"  # transaction start sits between batches
    GATE = "gate"    # transaction pre-opened while waiting


def end_to_end_latency_model(
    strategy: Strategy, t_d: int | float, t_s: int | float, t_c: int | float
) -> int | float:
    """Batch visibility latency from collection start, by strategy."""
    if strategy is Strategy.NAIVE:
        return t_d + t_s + t_c
    return t_d + t_c


def select_sender(waiting: Iterable[tuple[int, int]]) -> int:
    """Pick the next sender among ``(slot_id, wait_entered_at)`` pairs:
    longest-waiting first, ties to the lowest slot id."""
    best = min(waiting, default=None, key=lambda w: (w[1], w[0]))
    if best is None:
        raise ValueError("no waiting slots to select from")
    return best[0]


# -- actions ---------------------------------------------------------


@dataclass(frozen=True)
class ActivateSlot:
    pass


@dataclass(frozen=True)
class DispatchSender:
    slot_id: int


@dataclass(frozen=True)
class AbortSlot:
    slot_id: int
    reason: str
    # deferred aborts retire the slot at its next send end (cancelled
    # if the send moved rows) or commit ack instead of immediately
    deferred: bool = False


Action = ActivateSlot | DispatchSender | AbortSlot


# -- scheduler state -------------------------------------------------


@dataclass
class TimingParams:
    t_d_us: int
    dispatch_cycle_us: int = DEFAULT_DISPATCH_CYCLE_MS * 1000
    max_slots: int = DEFAULT_MAX_SLOTS
    ewma_window: int = DEFAULT_EWMA_WINDOW

    def __post_init__(self) -> None:
        if self.t_d_us <= 0:
            raise ValueError("t_d_us must be positive")
        if self.dispatch_cycle_us < self.t_d_us:
            raise ValueError("dispatch cycle must be at least one interval")
        if self.max_slots < 1:
            raise ValueError("max_slots must be >= 1")
        if self.ewma_window < 1:
            raise ValueError("ewma_window must be >= 1")


def tick_interval_us(t_d_us: int) -> int:
    """Polling granularity of the live loop: a tenth of the interval,
    capped at 50 ms and floored at 100 us."""
    return max(100, min(t_d_us // 10, 50_000))


@dataclass
class SlotInfo:
    """The scheduler's view of one live slot."""

    slot_id: int
    phase: SlotPhase
    activated_at: int
    wait_entered_at: int | None = None
    entered_send_once: bool = False
    sent_rows_this_cycle: int = 0
    marked_for_abort: bool = False


class SchedulerState:
    """Mutable scheduler bookkeeping, engine-agnostic.

    Engines report slot progress through the ``note_*`` methods and
    apply the actions ``tick`` returns. Timestamps are microseconds on
    whatever clock the engine runs. When a DecisionLog is attached,
    every report is journaled so a run can be replayed against a fresh
    state to prove the decisions were a pure function of the inputs.
    """

    def __init__(self, params: TimingParams, log: "DecisionLog | None" = None) -> None:
        self.params = params
        self.log = log
        self.slots: dict[int, SlotInfo] = {}
        self.ticked_once = False
        self.cycle_started_at = 0
        self.last_activation_at: int | None = None
        self.last_activated_slot: int | None = None
        self.current_sender: int | None = None
        self.next_slot_id = 1
        self.est_ts_us: float | None = None
        self.est_tc_us: float | None = None
        self.activations_total = 0
        self.aborts_total = 0

    def _journal(self, name: str, *args: int) -> None:
        if self.log is not None:
            self.log.entries.append((name, args))

    # -- engine reports ----------------------------------------------

    def note_activated(self, now: int) -> int:
        self._journal("note_activated", now)
        slot_id = self.next_slot_id
        self.next_slot_id += 1
        self.slots[slot_id] = SlotInfo(slot_id, SlotPhase.CONNECT, activated_at=now)
        self.last_activation_at = now
        self.last_activated_slot = slot_id
        self.activations_total += 1
        return slot_id

    def note_ready(self, slot_id: int, now: int) -> None:
        self._journal("note_ready", slot_id, now)
        info = self.slots[slot_id]
        info.phase = SlotPhase.WAIT
        info.wait_entered_at = now

    def note_dispatched(self, slot_id: int, now: int) -> None:
        self._journal("note_dispatched", slot_id, now)
        info = self.slots[slot_id]
        info.phase = SlotPhase.SEND
        info.wait_entered_at = None
        info.entered_send_once = True
        self.current_sender = slot_id

    def note_send_ended(self, slot_id: int, rows: int, now: int) -> None:
        self._journal("note_send_ended", slot_id, rows, now)
        info = self.slots[slot_id]
        info.phase = SlotPhase.COMMIT
        info.sent_rows_this_cycle += rows
        if self.current_sender == slot_id:
            self.current_sender = None

    def note_commit_acked(self, slot_id: int, now: int) -> None:
        self._journal("note_commit_acked", slot_id, now)
        self.slots[slot_id].phase = SlotPhase.CONNECT

    def note_retired(self, slot_id: int, now: int, aborted: bool = True) -> None:
        self._journal("note_retired", slot_id, now, int(aborted))
        self.slots.pop(slot_id, None)
        if self.current_sender == slot_id:
            self.current_sender = None
        if aborted:
            self.aborts_total += 1

    def note_marked(self, slot_id: int) -> None:
        self._journal("note_marked", slot_id)
        if slot_id in self.slots:
            self.slots[slot_id].marked_for_abort = True

    def cancel_mark(self, slot_id: int) -> None:
        self._journal("cancel_mark", slot_id)
        if slot_id in self.slots:
            self.slots[slot_id].marked_for_abort = False

    # -- latency estimation -------------------------------------------

    def observe_ts(self, sample_us: int) -> None:
        self.est_ts_us = self._ewma(self.est_ts_us, sample_us)

    def observe_tc(self, sample_us: int) -> None:
        self.est_tc_us = self._ewma(self.est_tc_us, sample_us)

    def _ewma(self, est: float | None, sample: int) -> float:
        if est is None:
            return float(sample)
        return est + (sample - est) / self.params.ewma_window

    def estimated_optimal(self) -> int | None:
        if self.est_ts_us is None or self.est_tc_us is None:
            return None
        return optimal_slots(self.params.t_d_us, self.est_ts_us, self.est_tc_us)

    def live_count(self) -> int:
        return len(self.slots)


def tick(state: SchedulerState, now: int, pipeline_nonempty: bool) -> list[Action]:
    """One scheduling decision round. Emits the abort, dispatch and
    activation actions the policy set mandates for this instant."""
    params = state.params
    actions: list[Action] = []

    if not state.ticked_once:
        state.ticked_once = True
        state.cycle_started_at = now
        if not state.slots:
            # rule 1: a fresh pool starts with a single slot
            return [ActivateSlot()]

    doomed: set[int] = set()  # immediate aborts emitted this tick
    live = state.slots

    # rule 6 at dispatch-cycle boundaries: trim slots that moved no
    # rows across the whole finished cycle
    elapsed = now - state.cycle_started_at
    if elapsed >= params.dispatch_cycle_us:
        idle = [
            info
            for info in live.values()
            if info.activated_at <= state.cycle_started_at
            and info.sent_rows_this_cycle == 0
            and not info.marked_for_abort
        ]
        idle.sort(key=lambda info: info.slot_id)
        for info in idle:
            remaining = len(live) - len(doomed)
            sending = info.phase is SlotPhase.SEND or state.current_sender == info.slot_id
            if remaining <= 1 or sending or info.phase is SlotPhase.COMMIT:
                # rule 7: the last slot (and any in-flight send or
                # commit) finishes its current send before retiring
                actions.append(AbortSlot(info.slot_id, ABORT_NO_DATA_CYCLE, deferred=True))
            else:
                actions.append(AbortSlot(info.slot_id, ABORT_NO_DATA_CYCLE))
                doomed.add(info.slot_id)
        state.cycle_started_at += (elapsed // params.dispatch_cycle_us) * params.dispatch_cycle_us
        for info in live.values():
            info.sent_rows_this_cycle = 0

    # rule 5: trim one slot stuck in Wait for strictly more than an
    # interval. The strictness matters: during growth a fresh slot's
    # first wait can touch exactly t_d, and trimming at the boundary
    # would undo the growth and oscillate instead of converging.
    overdue = [
        info
        for info in live.values()
        if info.phase is SlotPhase.WAIT
        and info.slot_id not in doomed
        and not info.marked_for_abort
        and info.wait_entered_at is not None
        and now - info.wait_entered_at > params.t_d_us
    ]
    if overdue and len(live) - len(doomed) > 1:  # rule 7 guards the last slot
        victim = min(overdue, key=lambda info: (info.wait_entered_at, info.slot_id))
        actions.append(AbortSlot(victim.slot_id, ABORT_IDLE_WAIT))
        doomed.add(victim.slot_id)

    # dispatch: hand the send window to the longest-waiting slot
    sender_live = (
        state.current_sender is not None and state.current_sender not in doomed
    )
    if not sender_live:
        waiting = [
            (info.slot_id, info.wait_entered_at)
            for info in live.values()
            if info.phase is SlotPhase.WAIT
            and info.slot_id not in doomed
            and info.wait_entered_at is not None
        ]
        if waiting:
            actions.append(DispatchSender(select_sender(waiting)))
            sender_live = True

    # rule 2 guarded by rules 3 and 4, evaluated after dispatch so a
    # freed waiter takes the window before the pool grows
    if pipeline_nonempty and not sender_live:
        if len(live) - len(doomed) < params.max_slots:
            p3_ok = (
                state.last_activation_at is None
                or now - state.last_activation_at >= params.t_d_us
            )
            last = (
                live.get(state.last_activated_slot)
                if state.last_activated_slot is not None
                else None
            )
            p4_ok = last is None or last.entered_send_once
            if p3_ok and p4_ok:
                actions.append(ActivateSlot())

    return actions


def logged_tick(state: SchedulerState, now: int, pipeline_nonempty: bool) -> list[Action]:
    """``tick`` plus journaling of inputs and emitted actions."""
    actions = tick(state, now, pipeline_nonempty)
    if state.log is not None:
        state.log.entries.append(TickRecord(now, pipeline_nonempty, tuple(actions)))
    return actions


@dataclass(frozen=True)
class TickRecord:
    now: int
    pipeline_nonempty: bool
    actions: tuple[Action, ...]


class DecisionLog:
    """Journal of scheduler inputs (state reports) and tick outcomes.

    ``replay`` re-drives the reports into a fresh state and re-runs
    every tick, asserting the same actions come out: the proof that
    scheduling is a pure function of its declared inputs regardless of
    which engine (live or simulated) produced the journal.
    """

    def __init__(self) -> None:
        self.entries: list = []

    def replay(self, params: TimingParams) -> int:
        state = SchedulerState(params)
        ticks = 0
        for entry in self.entries:
            if isinstance(entry, TickRecord):
                actions = tick(state, entry.now, entry.pipeline_nonempty)
                if tuple(actions) != entry.actions:
                    raise AssertionError(
                        f"replay diverged at t={entry.now}: "
                        f"{actions!r} != {list(entry.actions)!r}"
                    )
                ticks += 1
            else:
                name, args = entry
                getattr(state, name)(*args)
        return ticks
