"""Per-node MAC behaviour for the three node roles.

Machines are plain mutable records; the engine drives them slot by slot and
routes every frame through the radio model. Nothing here touches the clock
or the medium directly.
"""
from __future__ import annotations

import enum
import heapq
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Generator, Iterable

import numpy as np

from .schedule import (
    BACKOFF_PERIOD_SYMBOLS,
    SYMBOL_US,
    Cap,
    Gbs,
    Gts,
    Inactive,
    LevelOutOfRange,
    RssiReport,
    ScheduleTable,
    Sgts,
    SlotRequest,
    Superbeacon,
    entry_at,
)

BROADCAST = -1

MAC_MIN_BE = 3
MAC_MAX_BE = 5
MAC_MAX_CSMA_BACKOFFS = 4
MAC_MAX_FRAME_RETRIES = 3
CCA_COUNT = 2
BACKOFF_US = BACKOFF_PERIOD_SYMBOLS * SYMBOL_US

WAKEUP_US = 330

# air time in symbols; a 0.96 ms slot (so=0) holds 60
DATA_SYMBOLS = 40
REQUEST_SYMBOLS = 24
REPORT_SYMBOLS = 32
BEACON_SYMBOLS = 30


class Role(str, enum.Enum):
    PAN = "pan-coordinator"
    COORDINATOR = "star-coordinator"
    NODE = "simple-node"


class NodeState(str, enum.Enum):
    DOZING = "dozing"
    LISTENING = "awake-listening"
    TRANSMITTING = "transmitting"
    WAKING = "waking"


class FrameKind(str, enum.Enum):
    SUPERBEACON = "superbeacon"
    BEACON = "beacon"
    DATA = "data"
    GTS_REQUEST = "gts-request"
    GTS_CONFIRM = "gts-confirm"
    RSSI_REPORT = "rssi-report"


class NotSynchronized(Exception):
    pass


class ChannelAccessFailure(Exception):
    pass


class FrameTooLong(ValueError):
    pass


@dataclass(frozen=True)
class Frame:
    kind: FrameKind
    source: int
    destination: int
    payload_symbols: int
    seq: int = 0
    created_us: int = 0
    via: str = "cap"  # "gts" frames wait for a guaranteed slot
    body: object = None

    @property
    def duration_us(self) -> int:
        return self.payload_symbols * SYMBOL_US


@dataclass(frozen=True)
class GtsConfirm:
    """Carried inside a superbeacon. ``allocation`` is None on refusal."""

    request: SlotRequest
    allocation: object
    effective_superframe: int
    refusal: str | None = None


@dataclass
class EnergyProfile:
    # doze current and wake-up time are the transceiver figures; the rest are typical
    doze_ua: float = 40.0
    listen_ua: float = 37_000.0
    transmit_ua: float = 30_000.0
    waking_ua: float = 37_000.0

    def current(self, state: NodeState) -> float:
        return {
            NodeState.DOZING: self.doze_ua,
            NodeState.LISTENING: self.listen_ua,
            NodeState.TRANSMITTING: self.transmit_ua,
            NodeState.WAKING: self.waking_ua,
        }[state]


@dataclass
class NodeMachine:
    id: int
    role: Role
    parent: int | None = None
    clock_offset_us: int = 0
    tx_power_dbm: float = 3.6
    mobile: bool = False
    sync_via_parent: bool = True
    state: NodeState = NodeState.DOZING
    energy: dict[NodeState, int] = field(default_factory=lambda: {s: 0 for s in NodeState})
    pending: deque = field(default_factory=deque)
    # synchronisation: local slot timeline = nominal + effective_offset_us
    effective_offset_us: int = 0
    anchor_us: int | None = None
    synced_superframe: int | None = None
    view: ScheduleTable | None = None
    view_epoch: int | None = None
    seq: int = 0
    # rssi samples gathered while measuring foreign slots: transmitter -> list
    rssi_samples: dict[int, list[float]] = field(default_factory=dict)
    # unacknowledged CAP frames: seq -> retransmissions so far
    retries: dict[int, int] = field(default_factory=dict)

    def next_seq(self) -> int:
        self.seq += 1
        return self.seq

    @property
    def is_coordinator(self) -> bool:
        return self.role in (Role.PAN, Role.COORDINATOR)


@dataclass(frozen=True)
class Action:
    kind: str  # transmit-superbeacon | transmit-beacon | transmit-data | listen | doze
    frame: Frame | None = None
    allocation: object = None
    expected: int | None = None
    contend: bool = False
    measure: bool = False


DOZE = Action("doze")


def is_synchronized(node: NodeMachine, counter: int, horizon: int) -> bool:
    if node.role is Role.PAN:
        return True
    return node.synced_superframe is not None and counter - node.synced_superframe <= horizon


def _gts_frame_for(node: NodeMachine, peer: int, now_us: int | None) -> Frame | None:
    for f in node.pending:
        if f.via == "gts" and f.destination == peer:
            if now_us is None or f.created_us <= now_us + node.effective_offset_us:
                return f
            return None
    return None


def next_cap_frame(node: NodeMachine, now_us: int | None = None) -> Frame | None:
    for f in node.pending:
        if f.via == "cap" and (now_us is None or f.created_us <= now_us):
            return f
    return None


def on_slot_boundary(
    node: NodeMachine,
    table: ScheduleTable,
    counter: int,
    slot: int,
    now_us: int | None = None,
    measure: bool = False,
) -> Action:
    """What ``node`` does in cell (counter, slot), derived from the schedule.

    ``measure`` lets a coordinator listen to foreign guaranteed slots to
    collect RSSI samples for SGTS negotiation.
    """
    horizon = table.config.horizon
    if not is_synchronized(node, counter, horizon):
        raise NotSynchronized(f"node {node.id} has not heard a superbeacon within the horizon")
    entry = entry_at(table, counter, slot)
    match entry:
        case Superbeacon():
            if node.role is Role.PAN:
                return Action("transmit-superbeacon")
            return Action("listen")
        case Gbs(coordinator=c):
            if c == node.id:
                return Action("transmit-beacon")
            if node.role is Role.NODE and node.parent == c:
                return Action("listen", expected=c)
            return DOZE
        case Gts() | Sgts():
            stale = node.view_epoch != counter // horizon and node.role is not Role.PAN
            for a in entry.allocations:
                if a.owner == node.id:
                    frame = None if stale else _gts_frame_for(node, a.peer, now_us)
                    if frame is None:
                        return DOZE
                    return Action("transmit-data", frame=frame, allocation=a)
            for a in entry.allocations:
                if a.peer == node.id:
                    return Action("listen", expected=a.owner, allocation=a)
            if measure and node.role is Role.COORDINATOR and isinstance(entry, Gts):
                return Action("listen", measure=True)
            return DOZE
        case Cap():
            frame = next_cap_frame(node, now_us)
            if frame is not None:
                return Action("listen", frame=frame, contend=True)
            if node.is_coordinator:
                return Action("listen")
            return DOZE
        case Inactive():
            return DOZE
    raise TypeError(f"unexpected slot entry {entry!r}")


# -- CSMA/CA ------------------------------------------------------------------

def csma_ca_process(
    window: tuple[int, int],
    frame_us: int,
    rng: np.random.Generator,
) -> Generator[int, bool, int]:
    """Slotted CSMA/CA as a coroutine.

    Yields each clear-channel-assessment time and expects ``True`` back for
    an idle channel. Returns the transmission start time. Backoff
    boundaries are aligned on the window start.
    """
    start, end = window
    if frame_us > end - start:
        raise FrameTooLong(f"{frame_us} us frame in a {end - start} us CAP")
    t = start
    nb, be = 0, MAC_MIN_BE
    while True:
        t += int(rng.integers(0, 2 ** be)) * BACKOFF_US
        cw = CCA_COUNT
        while cw:
            if t + cw * BACKOFF_US + frame_us > end:
                raise ChannelAccessFailure("CAP too short for the remaining procedure")
            idle = yield t
            t += BACKOFF_US
            if not idle:
                break
            cw -= 1
        if cw == 0:
            return t
        nb += 1
        be = min(be + 1, MAC_MAX_BE)
        if nb > MAC_MAX_CSMA_BACKOFFS:
            raise ChannelAccessFailure(f"channel busy after {nb} backoffs")


def csma_ca_attempt(
    node: NodeMachine,
    frame: Frame,
    cap_window: tuple[int, int],
    rng: np.random.Generator,
    busy: Callable[[int], bool] = lambda t: False,
) -> int:
    """Run one node's CSMA/CA against a known channel occupancy."""
    proc = csma_ca_process(cap_window, frame.duration_us, rng)
    try:
        t = next(proc)
        while True:
            t = proc.send(not busy(t))
    except StopIteration as done:
        return done.value


@dataclass(frozen=True)
class CapTransmission:
    node: int
    frame: Frame
    start: int

    @property
    def end(self) -> int:
        return self.start + self.frame.duration_us


def run_cap_contention(
    contenders: Iterable[tuple[int, Frame, np.random.Generator]],
    window: tuple[int, int],
) -> tuple[list[CapTransmission], list[tuple[int, str]]]:
    """Several nodes running CSMA/CA in one CAP window.

    CCAs are processed in time order (ties by node id); a CCA sees the
    channel busy when a committed transmission has started at or before it.
    Two nodes passing their last CCA together both transmit and collide.
    """
    txs: list[CapTransmission] = []
    failures: list[tuple[int, str]] = []
    heap: list[tuple[int, int, int]] = []
    procs = {}
    frames = {}
    for node_id, frame, rng in contenders:
        proc = csma_ca_process(window, frame.duration_us, rng)
        frames[node_id] = frame
        try:
            t = next(proc)
        except (ChannelAccessFailure, FrameTooLong) as exc:
            failures.append((node_id, str(exc)))
            continue
        procs[node_id] = proc
        heapq.heappush(heap, (t, node_id, 0))
    while heap:
        t, node_id, _ = heapq.heappop(heap)
        idle = not any(tx.start <= t < tx.end for tx in txs)
        try:
            nxt = procs[node_id].send(idle)
        except StopIteration as done:
            txs.append(CapTransmission(node_id, frames[node_id], done.value))
            continue
        except ChannelAccessFailure as exc:
            failures.append((node_id, str(exc)))
            continue
        heapq.heappush(heap, (nxt, node_id, 0))
    txs.sort(key=lambda tx: (tx.start, tx.node))
    return txs, failures


# -- signalling ---------------------------------------------------------------

def request_gts(
    node: NodeMachine,
    level: int,
    direction: str = "uplink",
    n_max: int = 3,
    now_us: int = 0,
    peer: int | None = None,
) -> Frame:
    """Queue a GTS request for the parent coordinator (sent in the CAP)."""
    if not 0 <= level <= n_max:
        raise LevelOutOfRange(f"level {level} outside [0, {n_max}]")
    coordinator = node.parent if peer is None else peer
    if coordinator is None:
        raise ValueError(f"node {node.id} has no parent to address")
    if direction == "uplink":
        req = SlotRequest(owner=node.id, peer=coordinator, level=level, direction=direction)
    else:
        req = SlotRequest(owner=coordinator, peer=node.id, level=level, direction=direction)
    frame = Frame(
        FrameKind.GTS_REQUEST,
        node.id,
        node.parent if node.parent is not None else coordinator,
        REQUEST_SYMBOLS,
        node.next_seq(),
        now_us,
        "cap",
        req,
    )
    node.pending.append(frame)
    return frame


def relay_request(coordinator: NodeMachine, frame: Frame, pan_id: int, now_us: int) -> Frame:
    relayed = Frame(
        FrameKind.GTS_REQUEST,
        coordinator.id,
        pan_id,
        frame.payload_symbols,
        coordinator.next_seq(),
        now_us,
        "cap",
        frame.body,
    )
    coordinator.pending.append(relayed)
    return relayed


def sync_to_superbeacon(node: NodeMachine, arrival_us: int, beacon_slot_start_us: int, counter: int | None = None) -> int:
    """Anchor the node's slot timeline on a decoded (super)beacon.

    ``beacon_slot_start_us`` is the start of the slot the beacon announces,
    which the node derives from the counter it carries. A beacon sent late
    by a coordinator shifts the listener by the same amount, so offsets add
    up along the PAN -> coordinator -> node chain. Returns the anchor.
    """
    node.anchor_us = arrival_us + node.clock_offset_us
    node.effective_offset_us = node.anchor_us - beacon_slot_start_us
    if counter is not None:
        node.synced_superframe = counter
    return node.anchor_us


def energy_tick(node: NodeMachine, state: NodeState, duration_us: int) -> dict[NodeState, int]:
    if duration_us < 0:
        raise ValueError("negative duration")
    if duration_us == 0:
        return node.energy
    if node.state is NodeState.DOZING and state is not NodeState.DOZING:
        node.energy[NodeState.WAKING] += WAKEUP_US
    node.energy[state] += duration_us
    node.state = state
    return node.energy


def energy_total(node: NodeMachine, profile: EnergyProfile | None = None) -> float:
    """Charge drawn so far, in microampere-seconds."""
    profile = profile or EnergyProfile()
    return sum(t * profile.current(s) for s, t in node.energy.items()) / 1e6


def rssi_report_body(node: NodeMachine, superframe: int) -> RssiReport:
    means = {tx: float(np.mean(v)) for tx, v in sorted(node.rssi_samples.items()) if v}
    return RssiReport(node.id, means, superframe)
