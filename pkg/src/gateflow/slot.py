"""Slot lifecycle state machine.

A slot owns one transaction at a time against the whole segment set.
Its life is a loop Connect -> Wait -> Send -> Commit -> Connect, left
only by retirement. The scheduler commands every edge except
Send -> Commit, which the slot triggers itself when its collection
interval ends; failure paths (refused connection, dropped socket) may
also retire a slot. Each transition carries its initiator so an audit
trail can prove who moved what.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from zlib import crc32


class SlotPhase(str, Enum):
    CONNECT = "connect"
    WAIT = "wait"
    SEND = "send"
    COMMIT = "commit"
    RETIRED = "retired"


class Initiator(str, Enum):
    SCHEDULER = "scheduler"
    SLOT = "slot"
    FAILURE = "failure"


# normal loop edges, scheduler-commanded aborts out of Wait and at the
# commit boundary, plus failure retirement out of Connect and Send
LEGAL_TRANSITIONS: frozenset[tuple[SlotPhase, SlotPhase]] = frozenset(
    {
        (SlotPhase.CONNECT, SlotPhase.WAIT),
        (SlotPhase.WAIT, SlotPhase.SEND),
        (SlotPhase.SEND, SlotPhase.COMMIT),
        (SlotPhase.COMMIT, SlotPhase.CONNECT),
        (SlotPhase.WAIT, SlotPhase.RETIRED),
        (SlotPhase.COMMIT, SlotPhase.RETIRED),
        (SlotPhase.CONNECT, SlotPhase.RETIRED),
        (SlotPhase.SEND, SlotPhase.RETIRED),
    }
)

# phases during which the slot holds an open transaction id
_TXN_PHASES = frozenset({SlotPhase.WAIT, SlotPhase.SEND, SlotPhase.COMMIT})


class PhaseError(RuntimeError):
    """Raised on an illegal phase transition or initiator."""


@dataclass(frozen=True)
class Transition:
    at: int
    slot_id: int
    src: SlotPhase
    dst: SlotPhase
    initiator: Initiator


@dataclass
class Slot:
    """Phase bookkeeping for one slot; no I/O lives here."""

    slot_id: int
    segment_count: int
    phase: SlotPhase = SlotPhase.CONNECT
    txn_id: str | None = None
    phase_entered_at: int = 0
    wait_entered_at: int | None = None
    send_started_at: int | None = None
    batch_rows: int = 0
    cycle: int = 0
    marked_for_abort: bool = False
    history: list[Transition] = field(default_factory=list)

    def transition(
        self,
        dst: SlotPhase,
        initiator: Initiator,
        now: int,
        txn_id: str | None = None,
    ) -> Transition:
        src = self.phase
        if (src, dst) not in LEGAL_TRANSITIONS:
            raise PhaseError(f"slot {self.slot_id}: illegal transition {src.value} -> {dst.value}")
        if (src, dst) == (SlotPhase.SEND, SlotPhase.COMMIT):
            if initiator is not Initiator.SLOT:
                raise PhaseError("send -> commit must be slot-initiated")
        elif initiator is Initiator.SLOT:
            raise PhaseError(f"{src.value} -> {dst.value} may not be slot-initiated")

        if dst is SlotPhase.WAIT:
            if txn_id is None:
                raise PhaseError("entering wait requires an open transaction id")
            self.txn_id = txn_id
            self.wait_entered_at = now
        elif dst not in _TXN_PHASES:
            self.txn_id = None
        if dst is SlotPhase.SEND:
            self.send_started_at = now
            self.batch_rows = 0
        if dst is SlotPhase.CONNECT:
            self.cycle += 1

        self.phase = dst
        self.phase_entered_at = now
        event = Transition(now, self.slot_id, src, dst, initiator)
        self.history.append(event)
        return event

    @property
    def retired(self) -> bool:
        return self.phase is SlotPhase.RETIRED


def route_record(device_id: str, segment_count: int) -> int:
    """Stable device -> segment assignment: crc32(device) mod count.

    crc32 rather than the builtin hash because the latter is salted per
    process and routing must be reproducible across runs.
    """
    if segment_count < 1:
        raise ValueError("segment_count must be >= 1")
    return crc32(device_id.encode("utf-8")) % segment_count


def make_txn_id(nonce: str, slot_id: int, cycle: int) -> str:
    return f"{nonce}-s{slot_id}-c{cycle}"
