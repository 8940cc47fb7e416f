"""Deterministic discrete-event core.

Time is an integer count of microseconds. Events are ordered by
``(time, priority, node, insertion)``; with equal priority this is the
``(time, node id, insertion)`` tie-break the traces rely on. Every random
draw comes from a stream derived from ``(master seed, node, purpose)``, so a
run is a pure function of its world and seed.
"""
from __future__ import annotations

import hashlib
import heapq
import itertools
import zlib
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import protocol as proto
from .protocol import Frame, FrameKind, NodeMachine, NodeState, Role
from .radio import (
    CapturedOther,
    Collision,
    RadioEnvironment,
    Received,
    TransmissionAttempt,
    mean_rssi_dbm,
    resolve_reception,
)
from .schedule import (
    Cap,
    Gbs,
    Gts,
    LevelOutOfRange,
    MergePrecondition,
    MissingReport,
    RssiReport,
    ScheduleTable,
    Sgts,
    SlotExhausted,
    SlotRequest,
    SuperframeConfig,
    active_portion,
    allocate_gts,
    beacon_interval,
    try_merge_sgts,
)

SLOT_PRIORITY = 1  # traffic arrivals at the same instant are queued first


class PastEvent(ValueError):
    pass


class TopologyInvalid(ValueError):
    pass


def rng_stream(seed: int, node: int, tag: str) -> np.random.Generator:
    """Independent, reproducible stream for one (node, purpose) pair."""
    key = [int(seed) & 0xFFFFFFFF, int(node) & 0xFFFFFFFF, zlib.crc32(tag.encode())]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


def symbols(ticks: int) -> float:
    return ticks / proto.SYMBOL_US


@dataclass(frozen=True)
class Event:
    kind: str
    node: int = -1
    data: Any = None


class EventQueue:
    def __init__(self):
        self._heap: list = []
        self._counter = itertools.count()
        self.now = 0

    def __len__(self) -> int:
        return len(self._heap)

    def push(self, time: int, event: Event, priority: int = 0) -> None:
        if time < self.now:
            raise PastEvent(f"event at {time} us scheduled at {self.now} us")
        heapq.heappush(self._heap, (time, priority, event.node, next(self._counter), event))

    def pop(self) -> tuple[int, Event]:
        time, _, _, _, event = heapq.heappop(self._heap)
        self.now = time
        return time, event

    def peek_time(self) -> int | None:
        return self._heap[0][0] if self._heap else None


def schedule_event(queue: EventQueue, time: int, event: Event, priority: int = 0) -> EventQueue:
    queue.push(time, event, priority)
    return queue


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    if isinstance(value, (list, tuple)):
        return ",".join(_fmt(v) for v in value) or "-"
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


@dataclass(frozen=True)
class TraceEvent:
    time: int
    node: int
    category: str  # tx | rx-outcome | schedule-change | beacon | energy | csma | queue
    payload: tuple[tuple[str, Any], ...]
    seq: int

    def get(self, key: str, default: Any = None) -> Any:
        for k, v in self.payload:
            if k == key:
                return v
        return default

    def line(self) -> str:
        fields = " ".join(f"{k}={_fmt(v)}" for k, v in self.payload)
        return f"{self.time} {self.node} {self.category} {fields}".rstrip()


class Trace:
    def __init__(self):
        self.events: list[TraceEvent] = []
        self._seq = itertools.count()

    def emit(self, time: int, node: int, category: str, **payload: Any) -> None:
        self.events.append(TraceEvent(time, node, category, tuple(payload.items()), next(self._seq)))

    def ordered(self) -> list[TraceEvent]:
        return sorted(self.events, key=lambda e: (e.time, e.node, e.seq))


def trace_lines(events: list[TraceEvent]) -> list[str]:
    return [e.line() for e in events]


def trace_digest(events: list[TraceEvent]) -> str:
    h = hashlib.sha256()
    for ln in trace_lines(events):
        h.update(ln.encode())
        h.update(b"\n")
    return h.hexdigest()


@dataclass(frozen=True)
class Flow:
    node: int
    destination: int
    kind: str = "periodic"  # periodic | poisson
    period_superframes: int = 1
    rate_per_s: float = 10.0
    offset_us: int = 0
    via: str = "gts"
    payload_symbols: int = proto.DATA_SYMBOLS
    start: str = "grant"  # grant | start


@dataclass(frozen=True)
class SgtsPolicy:
    enabled: bool = False
    threshold_db: float = 10.0


@dataclass
class World:
    config: SuperframeConfig
    env: RadioEnvironment
    nodes: dict[int, NodeMachine]
    table: ScheduleTable
    seed: int = 0
    flows: list[Flow] = field(default_factory=list)
    requests: list[SlotRequest] = field(default_factory=list)  # sent over the air at start
    sgts: SgtsPolicy = field(default_factory=SgtsPolicy)
    energy_profile: proto.EnergyProfile = field(default_factory=proto.EnergyProfile)
    # runtime state
    pan_inbox: list[SlotRequest] = field(default_factory=list)
    reports: dict[int, RssiReport] = field(default_factory=dict)
    confirms: list[proto.GtsConfirm] = field(default_factory=list)
    started_flows: set[int] = field(default_factory=set)
    history: dict[int, ScheduleTable] = field(default_factory=dict)  # horizon epoch -> table in force

    @property
    def pan_id(self) -> int:
        return next(n.id for n in self.nodes.values() if n.role is Role.PAN)


def validate_topology(world: World) -> None:
    pans = [n for n in world.nodes.values() if n.role is Role.PAN]
    if len(pans) != 1:
        raise TopologyInvalid(f"exactly one PAN coordinator required, found {len(pans)}")
    pan = pans[0]
    env = world.env
    for n in world.nodes.values():
        if n.id not in env.positions:
            raise TopologyInvalid(f"node {n.id} has no position")

    def linked(a: NodeMachine, b: NodeMachine) -> bool:
        floor = env.decode_floor_dbm
        return (
            mean_rssi_dbm(env, a.id, b.id, a.tx_power_dbm) >= floor
            and mean_rssi_dbm(env, b.id, a.id, b.tx_power_dbm) >= floor
        )

    for n in sorted(world.nodes.values(), key=lambda n: n.id):
        if n.role is Role.COORDINATOR and not linked(n, pan):
            raise TopologyInvalid(f"star coordinator {n.id} is out of the PAN coordinator's range")
        if n.role is Role.NODE:
            parent = world.nodes.get(n.parent) if n.parent is not None else None
            if parent is None or parent.role is not Role.COORDINATOR:
                raise TopologyInvalid(f"simple node {n.id} needs a star coordinator parent")
            if not linked(n, parent):
                raise TopologyInvalid(f"simple node {n.id} is out of range of coordinator {parent.id}")
            if mean_rssi_dbm(env, pan.id, n.id, pan.tx_power_dbm) < env.decode_floor_dbm:
                raise TopologyInvalid(f"simple node {n.id} cannot hear the superbeacon")


@dataclass(frozen=True)
class _Tx:
    node: int
    frame: Frame
    start: int

    @property
    def end(self) -> int:
        return self.start + self.frame.duration_us


class _Runner:
    def __init__(self, world: World, end_us: int):
        self.w = world
        self.cfg = world.config
        self.end = end_us
        self.bi = beacon_interval(self.cfg)
        self.sfap = active_portion(self.cfg)
        self.slot = self.cfg.slot_duration
        self.q = EventQueue()
        self.trace = Trace()
        self.ids = sorted(world.nodes)
        self.rx_rng = {i: rng_stream(world.seed, i, "rx") for i in self.ids}
        self.csma_rng = {i: rng_stream(world.seed, i, "csma") for i in self.ids}
        self.traffic_rng = {k: rng_stream(world.seed, f.node, f"traffic-{k}") for k, f in enumerate(world.flows)}
        self.pan = world.pan_id
        self.mobile = sorted(n.id for n in world.nodes.values() if n.mobile)

    # -- setup -----------------------------------------------------------------
    def start(self) -> None:
        pan = self.w.nodes[self.pan]
        pan.effective_offset_us = pan.clock_offset_us
        for req in self.w.requests:
            node_id = req.owner if req.direction == "uplink" else req.peer
            node = self.w.nodes[node_id]
            coordinator = req.peer if req.direction == "uplink" else req.owner
            frame = proto.request_gts(node, req.level, req.direction, self.cfg.n_max, 0, peer=coordinator)
            self.trace.emit(0, node_id, "queue", kind=frame.kind, dest=frame.destination, seq=frame.seq, level=req.level)
        for k, flow in enumerate(self.w.flows):
            if flow.start == "start":
                self._start_flow(k, 0)
        self.q.push(0, Event("superframe", -1, 0), SLOT_PRIORITY)

    def _start_flow(self, k: int, t0: int) -> None:
        if k in self.w.started_flows:
            return
        self.w.started_flows.add(k)
        flow = self.w.flows[k]
        first = t0 + flow.offset_us
        if flow.kind == "poisson":
            first = t0 + int(self.traffic_rng[k].exponential(1e6 / flow.rate_per_s))
        if first < self.end:
            self.q.push(first, Event("arrival", flow.node, k))

    # -- main loop ---------------------------------------------------------------
    def run(self) -> list[TraceEvent]:
        self.start()
        while len(self.q) and self.q.peek_time() < self.end:
            t, ev = self.q.pop()
            getattr(self, f"_on_{ev.kind}")(t, ev)
        for i in self.ids:
            node = self.w.nodes[i]
            ledger = [(s.value, node.energy[s]) for s in NodeState]
            self.trace.emit(
                self.end, i, "energy", charge_uas=proto.energy_total(node, self.w.energy_profile),
                **{s.replace("-", "_"): v for s, v in ledger},
            )
        return self.trace.ordered()

    def _on_arrival(self, t: int, ev: Event) -> None:
        k = ev.data
        flow = self.w.flows[k]
        node = self.w.nodes[flow.node]
        frame = Frame(FrameKind.DATA, node.id, flow.destination, flow.payload_symbols, node.next_seq(), t, flow.via)
        node.pending.append(frame)
        self.trace.emit(t, node.id, "queue", kind=frame.kind, dest=frame.destination, seq=frame.seq, via=flow.via)
        if flow.kind == "poisson":
            nxt = t + max(1, int(self.traffic_rng[k].exponential(1e6 / flow.rate_per_s)))
        else:
            nxt = t + flow.period_superframes * self.bi
        if nxt < self.end:
            self.q.push(nxt, Event("arrival", flow.node, k))

    def _on_superframe(self, t: int, ev: Event) -> None:
        c = ev.data
        H = self.cfg.horizon
        if c % H == 0:
            self._replan(t, c)
        if self.w.sgts.enabled and c % H == H - 1:
            self._queue_reports(t, c)
        for k in range(self.cfg.slots_per_superframe):
            self.q.push(t + k * self.slot, Event("slot", -1, (c, k)), SLOT_PRIORITY)
        self.q.push(t + self.sfap, Event("inactive", -1, c), SLOT_PRIORITY)
        if t + self.bi < self.end:
            self.q.push(t + self.bi, Event("superframe", -1, c + 1), SLOT_PRIORITY)

    def _on_inactive(self, t: int, ev: Event) -> None:
        rest = self.bi - self.sfap
        for i in self.ids:
            proto.energy_tick(self.w.nodes[i], NodeState.DOZING, rest)

    # -- PAN coordinator planning ------------------------------------------------
    def _replan(self, t: int, c: int) -> None:
        w = self.w
        table = w.table
        if w.sgts.enabled and c > 0:
            table = self._merge_pass(t, c, table)
        confirms = []
        for req in w.pan_inbox:
            try:
                if req.owner not in w.nodes or req.peer not in w.nodes:
                    raise KeyError("unknown node")
                table, alloc = allocate_gts(table, req)
                confirms.append(proto.GtsConfirm(req, alloc, c))
                self.trace.emit(t, self.pan, "schedule-change", change="grant", owner=alloc.owner,
                                peer=alloc.peer, level=alloc.level, slot=alloc.slot_index, phase=alloc.phase,
                                origin=alloc.origin, effective=c)
            except (SlotExhausted, LevelOutOfRange, KeyError, ValueError) as exc:
                refusal = type(exc).__name__
                confirms.append(proto.GtsConfirm(req, None, c, refusal))
                self.trace.emit(t, self.pan, "schedule-change", change="refuse", owner=req.owner,
                                peer=req.peer, level=req.level, reason=refusal)
        w.pan_inbox.clear()
        w.table = table
        w.history[c // self.cfg.horizon] = table
        w.confirms = confirms

    def _merge_pass(self, t: int, c: int, table: ScheduleTable) -> ScheduleTable:
        w = self.w
        plain = sorted(
            {e.allocation for e in table.cells.values() if isinstance(e, Gts)},
            key=lambda a: (a.level, a.slot_index, a.phase, a.owner),
        )
        used: set = set()
        for a, b in itertools.combinations(plain, 2):
            if a in used or b in used or a.level != b.level:
                continue
            try:
                d = try_merge_sgts(table, a, b, list(w.reports.values()), w.sgts.threshold_db,
                                   self.mobile, c, w.env.sensitivity_dbm)
            except (MissingReport, MergePrecondition):
                continue
            if d.accepted:
                table = d.table
                used.update((a, b))
                self.trace.emit(t, self.pan, "schedule-change", change="sgts", kept=d.kept.owner,
                                moved=d.moved.owner, slot=d.kept.slot_index, phase=d.kept.phase,
                                margins=[d.margins[k] for k in sorted(d.margins)], effective=c)
        return table

    def _queue_reports(self, t: int, c: int) -> None:
        for i in self.ids:
            node = self.w.nodes[i]
            if node.role is Role.COORDINATOR and node.rssi_samples:
                body = proto.rssi_report_body(node, c)
                node.rssi_samples = {}
                frame = Frame(FrameKind.RSSI_REPORT, i, self.pan, proto.REPORT_SYMBOLS, node.next_seq(), t, "cap", body)
                node.pending.append(frame)
                self.trace.emit(t, i, "queue", kind=frame.kind, dest=self.pan, seq=frame.seq)

    # -- slots -------------------------------------------------------------------
    def _action(self, node: NodeMachine, c: int, k: int, T: int) -> proto.Action:
        H = self.cfg.horizon
        view = self.w.table if node.role is Role.PAN else node.view
        if view is None or not proto.is_synchronized(node, c, H):
            entry = self.w.table.cells[(c % H, k)]
            if k == 0 or (isinstance(entry, Gbs) and entry.coordinator == node.parent):
                return proto.Action("listen")
            return proto.DOZE
        return proto.on_slot_boundary(node, view, c, k, now_us=T, measure=self.w.sgts.enabled)

    def _on_slot(self, T: int, ev: Event) -> None:
        c, k = ev.data
        H = self.cfg.horizon
        cells = self.w.table.cells
        entry = cells[(c % H, k)]
        if isinstance(entry, Cap):
            if k > 0 and isinstance(cells[(c % H, k - 1)], Cap):
                return  # inside a CAP run already handled
            run = 1
            while k + run < self.cfg.slots_per_superframe and isinstance(cells[(c % H, k + run)], Cap):
                run += 1
            actions = {i: self._action(self.w.nodes[i], c, k, T) for i in self.ids}
            self._cap(c, k, T, run, actions)
        else:
            actions = {i: self._action(self.w.nodes[i], c, k, T) for i in self.ids}
            self._guaranteed(c, k, T, entry, actions)

    def _frame_for(self, node: NodeMachine, act: proto.Action, c: int, T: int) -> Frame:
        if act.kind == "transmit-superbeacon":
            body = {"counter": c, "table": self.w.table, "confirms": tuple(self.w.confirms)}
            return Frame(FrameKind.SUPERBEACON, node.id, proto.BROADCAST, proto.BEACON_SYMBOLS, node.next_seq(), T, "gts", body)
        if act.kind == "transmit-beacon":
            return Frame(FrameKind.BEACON, node.id, proto.BROADCAST, proto.BEACON_SYMBOLS, node.next_seq(), T, "gts", {"counter": c})
        node.pending.remove(act.frame)
        return act.frame

    def _guaranteed(self, c: int, k: int, T: int, entry, actions: dict[int, proto.Action]) -> None:
        nodes = self.w.nodes
        txs: list[_Tx] = []
        for i in self.ids:
            act = actions[i]
            if act.kind.startswith("transmit"):
                node = nodes[i]
                frame = self._frame_for(node, act, c, T)
                tx = _Tx(i, frame, T + node.effective_offset_us)
                txs.append(tx)
                if frame.kind in (FrameKind.SUPERBEACON, FrameKind.BEACON):
                    self.trace.emit(tx.start, i, "beacon", kind=frame.kind, sf=c, slot=k, end=tx.end)
                else:
                    self.trace.emit(tx.start, i, "tx", kind=frame.kind, dest=frame.destination, sf=c, slot=k,
                                    cell=entry.kind, seq=frame.seq, created=frame.created_us, end=tx.end)
        by_node = {tx.node: tx for tx in txs}
        for i in self.ids:
            act = actions[i]
            node = nodes[i]
            if act.kind != "listen":
                continue
            heard = [tx for tx in txs if tx.node != i]
            if not heard:
                continue
            attempts = [
                TransmissionAttempt(tx.node, nodes[tx.node].tx_power_dbm, tx.start - T, tx.frame) for tx in heard
            ]
            if len(attempts) > 2:
                outcome = Collision()
            else:
                outcome = resolve_reception(self.w.env, i, attempts, self.rx_rng[i], act.expected)
            self.trace.emit(T, i, "rx-outcome", sf=c, slot=k, outcome=outcome.kind,
                            sources=[tx.node for tx in heard], rssi=getattr(outcome, "rssi_dbm", None),
                            decoded=getattr(outcome, "source", None))
            if isinstance(outcome, (Received, CapturedOther)):
                tx = by_node[outcome.source]
                # RSSI samples feed SGTS negotiation: only clean, single-transmitter slots count
                if (self.w.sgts.enabled and len(heard) == 1 and node.role is Role.COORDINATOR
                        and tx.frame.kind is FrameKind.DATA):
                    node.rssi_samples.setdefault(outcome.source, []).append(outcome.rssi_dbm)
                self._deliver(node, tx, c, k, T)
        for i in self.ids:
            act = actions[i]
            node = nodes[i]
            if act.kind.startswith("transmit"):
                d = by_node[i].frame.duration_us
                proto.energy_tick(node, NodeState.TRANSMITTING, d)
                proto.energy_tick(node, NodeState.DOZING, self.slot - d)
            elif act.kind == "listen":
                proto.energy_tick(node, NodeState.LISTENING, self.slot)
            else:
                proto.energy_tick(node, NodeState.DOZING, self.slot)

    def _deliver(self, node: NodeMachine, tx: _Tx, c: int, k: int, T: int) -> None:
        f = tx.frame
        H = self.cfg.horizon
        if f.kind is FrameKind.SUPERBEACON:
            anchored_via_parent = (
                node.role is Role.NODE and node.sync_via_parent and node.anchor_us is not None
            )
            if anchored_via_parent:
                node.synced_superframe = c
            else:
                proto.sync_to_superbeacon(node, tx.start, T, c)
            node.view = f.body["table"]
            node.view_epoch = c // H
            self._check_grants(node, c, T)
        elif f.kind is FrameKind.BEACON and node.role is Role.NODE and f.source == node.parent and node.sync_via_parent:
            proto.sync_to_superbeacon(node, tx.start, T, c)
        elif f.kind is FrameKind.DATA and f.destination == node.id:
            self.trace.emit(tx.start, node.id, "rx-outcome", outcome="delivered", source=f.source, seq=f.seq, sf=c, slot=k)

    def _check_grants(self, node: NodeMachine, c: int, T: int) -> None:
        for k, flow in enumerate(self.w.flows):
            if k in self.w.started_flows or flow.start != "grant":
                continue
            if flow.node != node.id:
                continue
            if any(a.owner == node.id and a.peer == flow.destination for a in node.view.allocations()):
                self._start_flow(k, T)

    def _cap(self, c: int, k: int, T: int, run: int, actions: dict[int, proto.Action]) -> None:
        nodes = self.w.nodes
        window = (T, T + run * self.slot)
        contenders = [(i, actions[i].frame, self.csma_rng[i]) for i in self.ids if actions[i].contend]
        txs, failures = proto.run_cap_contention(contenders, window)
        for i, reason in failures:
            self.trace.emit(T, i, "csma", result="failure", sf=c, slot=k, reason=reason.split()[0])
        sent: list[_Tx] = []
        for ctx in txs:
            node = nodes[ctx.node]
            node.pending.remove(ctx.frame)
            tx = _Tx(ctx.node, ctx.frame, ctx.start)
            sent.append(tx)
            self.trace.emit(tx.start, tx.node, "tx", kind=tx.frame.kind, dest=tx.frame.destination, sf=c, slot=k,
                            cell="cap", seq=tx.frame.seq, created=tx.frame.created_us, end=tx.end)
        delivered: set[int] = set()
        for cluster in _overlap_clusters(sent):
            senders = {tx.node for tx in cluster}
            for d in sorted({tx.frame.destination for tx in cluster}):
                if d not in nodes or actions[d].kind != "listen":
                    continue
                if d in senders:
                    self.trace.emit(cluster[0].start, d, "rx-outcome", sf=c, slot=k, outcome="half-duplex",
                                    sources=[tx.node for tx in cluster])
                    continue
                if len(cluster) > 2:
                    outcome = Collision()
                else:
                    attempts = [
                        TransmissionAttempt(tx.node, nodes[tx.node].tx_power_dbm, tx.start - T, tx.frame)
                        for tx in cluster
                    ]
                    outcome = resolve_reception(self.w.env, d, attempts, self.rx_rng[d])
                self.trace.emit(cluster[0].start, d, "rx-outcome", sf=c, slot=k, outcome=outcome.kind,
                                sources=[tx.node for tx in cluster], rssi=getattr(outcome, "rssi_dbm", None),
                                decoded=getattr(outcome, "source", None))
                if isinstance(outcome, Received):
                    tx = next(tx for tx in cluster if tx.node == outcome.source)
                    if tx.frame.destination == d:
                        delivered.add(tx.node)
                        self._deliver_cap(nodes[d], tx)
        # acknowledgements are not simulated on air: a sender learns the outcome
        # and retries an undelivered unicast frame in a later CAP
        for tx in sent:
            if tx.frame.destination == proto.BROADCAST or tx.node in delivered:
                nodes[tx.node].retries.pop(tx.frame.seq, None)
                continue
            node = nodes[tx.node]
            n = node.retries.get(tx.frame.seq, 0)
            if n < proto.MAC_MAX_FRAME_RETRIES:
                node.retries[tx.frame.seq] = n + 1
                node.pending.appendleft(tx.frame)
                self.trace.emit(tx.end, tx.node, "csma", result="retry", sf=c, slot=k, seq=tx.frame.seq)
            else:
                node.retries.pop(tx.frame.seq, None)
                self.trace.emit(tx.end, tx.node, "csma", result="drop", sf=c, slot=k, seq=tx.frame.seq)
        busy_until = {tx.node: tx.frame.duration_us for tx in sent}
        span = run * self.slot
        for i in self.ids:
            node = nodes[i]
            if i in busy_until:
                proto.energy_tick(node, NodeState.TRANSMITTING, busy_until[i])
                proto.energy_tick(node, NodeState.LISTENING, span - busy_until[i])
            elif actions[i].kind == "listen":
                proto.energy_tick(node, NodeState.LISTENING, span)
            else:
                proto.energy_tick(node, NodeState.DOZING, span)

    def _deliver_cap(self, node: NodeMachine, tx: _Tx) -> None:
        f = tx.frame
        if f.kind is FrameKind.GTS_REQUEST:
            if node.role is Role.PAN:
                self.w.pan_inbox.append(f.body)
            elif node.role is Role.COORDINATOR:
                relayed = proto.relay_request(node, f, self.pan, tx.end)
                self.trace.emit(tx.end, node.id, "queue", kind=relayed.kind, dest=self.pan, seq=relayed.seq)
        elif f.kind is FrameKind.RSSI_REPORT and node.role is Role.PAN:
            self.w.reports[f.source] = f.body
        elif f.kind is FrameKind.DATA:
            self.trace.emit(tx.start, node.id, "rx-outcome", outcome="delivered", source=f.source, seq=f.seq)


def _overlap_clusters(txs: list[_Tx]) -> list[list[_Tx]]:
    clusters: list[list[_Tx]] = []
    end = None
    for tx in sorted(txs, key=lambda x: (x.start, x.node)):
        if clusters and tx.start < end:
            clusters[-1].append(tx)
            end = max(end, tx.end)
        else:
            clusters.append([tx])
            end = tx.end
    return clusters


def run_until(world: World, end_us: int) -> list[TraceEvent]:
    """Run ``world`` from time 0 until ``end_us`` and return the ordered trace."""
    validate_topology(world)
    return _Runner(world, end_us).run()
