"""PAN-coordinator slot schedule: data model and pure allocation algorithms.

A :class:`ScheduleTable` covers a horizon of ``2**n_max`` superframes. Each
superframe is cut into ``slots_per_superframe`` active slots followed, when
``bo > so``, by inactive columns that fill the rest of the beacon interval.
All durations are integer microsecond ticks.
"""
from __future__ import annotations

import math
import re
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import ClassVar, Iterable, Mapping, Union

SYMBOL_US = 16
BASE_SUPERFRAME_SYMBOLS = 960  # 15.36 ms at 16 us/symbol
BACKOFF_PERIOD_SYMBOLS = 20


class ScheduleError(Exception):
    pass


class ConfigViolation(ScheduleError, ValueError):
    pass


class SlotExhausted(ScheduleError):
    pass


class DuplicateGbs(ScheduleError):
    pass


class LevelOutOfRange(ScheduleError, ValueError):
    pass


class UnknownOwner(ScheduleError, KeyError):
    pass


class SlotOutOfRange(ScheduleError, IndexError):
    pass


class MissingReport(ScheduleError):
    pass


class MergePrecondition(ScheduleError, ValueError):
    pass


@dataclass(frozen=True)
class SuperframeConfig:
    bo: int = 0
    so: int = 0
    n_max: int = 3
    slots_per_superframe: int = 16
    min_cap_slots: int = 0

    symbol_duration: ClassVar[int] = SYMBOL_US

    def __post_init__(self):
        for name in ("bo", "so", "n_max", "min_cap_slots"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 0:
                raise ConfigViolation(f"{name} must be a non-negative integer, got {value!r}")
        if self.so > self.bo:
            raise ConfigViolation(f"SO <= BO required (so={self.so}, bo={self.bo})")
        if self.slots_per_superframe < 2:
            raise ConfigViolation("slots_per_superframe must be >= 2 (slot 0 is the superbeacon)")
        if (BASE_SUPERFRAME_SYMBOLS * SYMBOL_US) % self.slots_per_superframe:
            raise ConfigViolation(
                f"{self.slots_per_superframe} slots do not divide the active portion into whole microseconds"
            )
        if self.min_cap_slots > self.slots_per_superframe - 1:
            raise ConfigViolation("min_cap_slots leaves no room for the superbeacon")

    @property
    def horizon(self) -> int:
        return 2 ** self.n_max

    @property
    def slot_duration(self) -> int:
        return active_portion(self) // self.slots_per_superframe

    @property
    def columns(self) -> int:
        """Active slots plus the inactive columns that pad out the beacon interval."""
        return self.slots_per_superframe * 2 ** (self.bo - self.so)


def beacon_interval(config: SuperframeConfig) -> int:
    """Beacon interval in microsecond ticks: 15.36 ms * 2**bo."""
    return BASE_SUPERFRAME_SYMBOLS * 2 ** config.bo * SYMBOL_US


def active_portion(config: SuperframeConfig) -> int:
    """Superframe active portion in microsecond ticks: 15.36 ms * 2**so."""
    if config.so > config.bo:
        raise ConfigViolation(f"SO <= BO required (so={config.so}, bo={config.bo})")
    return BASE_SUPERFRAME_SYMBOLS * 2 ** config.so * SYMBOL_US


@dataclass(frozen=True)
class Allocation:
    owner: int
    peer: int
    slot_index: int
    level: int
    phase: int = 0
    origin: str = "request"  # "request" | "pds"
    direction: str = "uplink"  # "uplink" | "downlink"

    @property
    def period(self) -> int:
        return 2 ** self.level

    def occupies(self, superframe: int) -> bool:
        return superframe % self.period == self.phase

    def superframes(self, horizon: int) -> range:
        return range(self.phase, horizon, self.period)


@dataclass(frozen=True)
class SlotRequest:
    """What a node (or the PAN coordinator, for PDS) asks of the scheduler.

    ``slot`` and ``phase`` pin the placement when given.
    """

    owner: int
    peer: int
    level: int
    direction: str = "uplink"
    origin: str = "request"
    slot: int | None = None
    phase: int | None = None


@dataclass(frozen=True)
class Superbeacon:
    kind: ClassVar[str] = "superbeacon"

    @property
    def allocations(self) -> tuple[Allocation, ...]:
        return ()


@dataclass(frozen=True)
class Cap:
    kind: ClassVar[str] = "cap"

    @property
    def allocations(self) -> tuple[Allocation, ...]:
        return ()


@dataclass(frozen=True)
class Inactive:
    kind: ClassVar[str] = "inactive"

    @property
    def allocations(self) -> tuple[Allocation, ...]:
        return ()


@dataclass(frozen=True)
class Gbs:
    coordinator: int
    kind: ClassVar[str] = "gbs"

    @property
    def allocations(self) -> tuple[Allocation, ...]:
        return ()


@dataclass(frozen=True)
class Gts:
    allocation: Allocation
    kind: ClassVar[str] = "gts"

    @property
    def allocations(self) -> tuple[Allocation, ...]:
        return (self.allocation,)


@dataclass(frozen=True)
class Sgts:
    first: Allocation
    second: Allocation
    kind: ClassVar[str] = "sgts"

    @property
    def allocations(self) -> tuple[Allocation, ...]:
        return (self.first, self.second)


SlotEntry = Union[Superbeacon, Cap, Inactive, Gbs, Gts, Sgts]
GUARANTEED = (Gbs, Gts, Sgts)


@dataclass
class ScheduleTable:
    config: SuperframeConfig
    cells: dict[tuple[int, int], SlotEntry] = field(default_factory=dict)

    @classmethod
    def empty(cls, config: SuperframeConfig) -> ScheduleTable:
        cells: dict[tuple[int, int], SlotEntry] = {}
        for s in range(config.horizon):
            for k in range(config.columns):
                if k == 0:
                    cells[(s, k)] = Superbeacon()
                elif k < config.slots_per_superframe:
                    cells[(s, k)] = Cap()
                else:
                    cells[(s, k)] = Inactive()
        return cls(config, cells)

    def copy(self) -> ScheduleTable:
        return ScheduleTable(self.config, dict(self.cells))

    def __getitem__(self, key: tuple[int, int]) -> SlotEntry:
        return self.cells[key]

    def allocations(self) -> list[Allocation]:
        seen: dict[Allocation, None] = {}
        for key in sorted(self.cells):
            for a in self.cells[key].allocations:
                seen.setdefault(a, None)
        return list(seen)

    def allocations_of(self, owner: int) -> list[Allocation]:
        return [a for a in self.allocations() if a.owner == owner]

    def gbs_slots(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for (s, k), e in sorted(self.cells.items()):
            if isinstance(e, Gbs):
                out.setdefault(e.coordinator, k)
        return out

    def load(self, superframe: int) -> int:
        """Number of slots in use (superbeacon included) in one superframe."""
        return sum(
            1
            for k in range(self.config.slots_per_superframe)
            if not isinstance(self.cells[(superframe, k)], Cap)
        )

    def cap_count(self, superframe: int) -> int:
        return sum(
            1
            for k in range(self.config.slots_per_superframe)
            if isinstance(self.cells[(superframe, k)], Cap)
        )

    def t_cfp(self, superframe: int) -> int:
        n = sum(
            1
            for k in range(self.config.slots_per_superframe)
            if isinstance(self.cells[(superframe, k)], GUARANTEED)
        )
        return n * self.config.slot_duration

    def t_cap(self, superframe: int) -> int:
        """CAP time, counting the superbeacon slot as its head as in 802.15.4."""
        n = sum(
            1
            for k in range(self.config.slots_per_superframe)
            if isinstance(self.cells[(superframe, k)], (Cap, Superbeacon))
        )
        return n * self.config.slot_duration


@dataclass(frozen=True)
class RssiReport:
    receiver: int
    rssi: Mapping[int, float]
    superframe: int

    def __post_init__(self):
        for node, value in self.rssi.items():
            if not math.isfinite(value):
                raise ValueError(f"non-finite RSSI {value!r} for transmitter {node}")


def _check_slot(config: SuperframeConfig, slot: int) -> None:
    if not 0 <= slot < config.columns:
        raise SlotOutOfRange(f"slot {slot} outside [0, {config.columns})")


def _cap_ok(table: ScheduleTable, superframes: Iterable[int]) -> bool:
    # one more cell taken from each superframe listed
    return all(table.cap_count(s) - 1 >= table.config.min_cap_slots for s in superframes)


def allocate_gbs(
    table: ScheduleTable, coordinator: int, slot: int | None = None
) -> tuple[ScheduleTable, int]:
    """Reserve one slot in every superframe for a star coordinator's beacon.

    Without a pinned slot, the stride ``slots // 4`` is tried first so the
    beacons of successive coordinators spread across the superframe
    (#4, #8, #12 for 16 slots), then any free slot from the lowest.
    """
    cfg = table.config
    if coordinator in table.gbs_slots():
        raise DuplicateGbs(f"coordinator {coordinator} already holds a GBS")
    every = range(cfg.horizon)
    if slot is not None:
        _check_slot(cfg, slot)
        candidates = [slot]
    else:
        stride = max(1, cfg.slots_per_superframe // 4)
        preferred = list(range(stride, cfg.slots_per_superframe, stride))
        candidates = preferred + [k for k in range(1, cfg.slots_per_superframe) if k not in preferred]
    for k in candidates:
        if all(isinstance(table.cells[(s, k)], Cap) for s in every) and _cap_ok(table, every):
            out = table.copy()
            for s in every:
                out.cells[(s, k)] = Gbs(coordinator)
            return out, k
    raise SlotExhausted(f"no slot free in every superframe for coordinator {coordinator}'s GBS")


def allocate_gts(table: ScheduleTable, request: SlotRequest) -> tuple[ScheduleTable, Allocation]:
    """Place a GTS recurring every ``2**level`` superframes.

    Among feasible (slot, phase) pairs, the one minimising the largest
    per-superframe load after placement wins; ties go to the lowest phase,
    then the lowest slot.
    """
    cfg = table.config
    level = request.level
    if not 0 <= level <= cfg.n_max:
        raise LevelOutOfRange(f"level {level} outside [0, {cfg.n_max}]")
    if request.owner == request.peer:
        raise ValueError("owner and peer must differ")
    period = 2 ** level
    if request.phase is not None:
        if not 0 <= request.phase < period:
            raise ValueError(f"phase {request.phase} outside [0, {period})")
        phases: Iterable[int] = [request.phase]
    else:
        phases = range(period)
    if request.slot is not None:
        _check_slot(cfg, request.slot)
        slots: Iterable[int] = [request.slot]
    else:
        slots = range(1, cfg.slots_per_superframe)

    loads = [table.load(s) for s in range(cfg.horizon)]
    best = None
    for phase in phases:
        touched = range(phase, cfg.horizon, period)
        if not _cap_ok(table, touched):
            continue
        rest = max((loads[s] for s in range(cfg.horizon) if s % period != phase), default=0)
        score = max(rest, max(loads[s] for s in touched) + 1)
        for k in slots:
            if all(isinstance(table.cells[(s, k)], Cap) for s in touched):
                key = (score, phase, k)
                if best is None or key < best:
                    best = key
                break  # lowest free slot for this phase is the only tie-break candidate
    if best is None:
        raise SlotExhausted(f"no free (slot, phase) for level-{level} request by node {request.owner}")
    _, phase, k = best
    alloc = Allocation(
        owner=request.owner,
        peer=request.peer,
        slot_index=k,
        level=level,
        phase=phase,
        origin=request.origin,
        direction=request.direction,
    )
    out = table.copy()
    for s in alloc.superframes(cfg.horizon):
        out.cells[(s, k)] = Gts(alloc)
    return out, alloc


def release_allocation(table: ScheduleTable, owner: int) -> ScheduleTable:
    out = table.copy()
    found = False
    for key, e in table.cells.items():
        if isinstance(e, Gts) and e.allocation.owner == owner:
            out.cells[key] = Cap()
        elif isinstance(e, Gbs) and e.coordinator == owner:
            out.cells[key] = Cap()
        elif isinstance(e, Sgts) and owner in (e.first.owner, e.second.owner):
            survivor = e.second if e.first.owner == owner else e.first
            out.cells[key] = Gts(survivor)
        else:
            continue
        found = True
    if not found:
        raise UnknownOwner(owner)
    return out


def _is_plain_gts(table: ScheduleTable, a: Allocation) -> bool:
    return all(
        table.cells.get((s, a.slot_index)) == Gts(a) for s in a.superframes(table.config.horizon)
    )


def merge_sgts(table: ScheduleTable, a: Allocation, b: Allocation) -> tuple[ScheduleTable, Allocation, Allocation]:
    """Fold two equal-level GTS into one shared cell, no radio checks.

    The allocation sitting earlier in the horizon (lower phase, then lower
    slot) keeps its cells; the other moves there, so the moved one never
    waits longer than its period across the re-plan.
    Returns ``(table, kept, moved)``.
    """
    if a.level != b.level:
        raise MergePrecondition(f"levels differ ({a.level} vs {b.level})")
    if a == b or not (_is_plain_gts(table, a) and _is_plain_gts(table, b)):
        raise MergePrecondition("both allocations must be separate plain GTS entries")
    if a.owner == b.owner or a.peer == b.peer:
        raise MergePrecondition("an SGTS needs distinct owners and distinct peers")
    kept, other = (a, b) if (a.phase, a.slot_index) <= (b.phase, b.slot_index) else (b, a)
    moved = replace(other, slot_index=kept.slot_index, phase=kept.phase)
    out = table.copy()
    horizon = table.config.horizon
    for s in other.superframes(horizon):
        out.cells[(s, other.slot_index)] = Cap()
    for s in kept.superframes(horizon):
        out.cells[(s, kept.slot_index)] = Sgts(kept, moved)
    return out, kept, moved


@dataclass
class MergeDecision:
    accepted: bool
    table: ScheduleTable
    reason: str | None = None  # SameReceiver | InsufficientMargin | MobileNode
    receiver: int | None = None
    margins: dict[int, float] = field(default_factory=dict)
    kept: Allocation | None = None
    moved: Allocation | None = None


def _latest_report(reports: Iterable[RssiReport], receiver: int) -> RssiReport | None:
    best = None
    for r in reports:
        if r.receiver == receiver and (best is None or r.superframe > best.superframe):
            best = r
    return best


def try_merge_sgts(
    table: ScheduleTable,
    a: Allocation,
    b: Allocation,
    reports: Iterable[RssiReport],
    threshold_db: float,
    mobile: Iterable[int] = (),
    now_superframe: int | None = None,
    sensitivity_dbm: float = -92.0,
) -> MergeDecision:
    """Merge ``a`` and ``b`` into an SGTS if both receivers clear the threshold.

    Each receiver's margin is its desired transmitter's RSSI minus the
    other transmitter's; an interferer absent from the report is taken at
    ``sensitivity_dbm``. Raises :class:`MissingReport` when a receiver has no
    fresh report naming its own transmitter.
    """
    if a.level != b.level:
        raise MergePrecondition(f"levels differ ({a.level} vs {b.level})")
    if a == b or not (_is_plain_gts(table, a) and _is_plain_gts(table, b)):
        raise MergePrecondition("both allocations must be separate plain GTS entries")
    if a.peer == b.peer:
        return MergeDecision(False, table, "SameReceiver", a.peer)
    mobile = set(mobile)
    for x in (a, b):
        if x.owner in mobile:
            return MergeDecision(False, table, "MobileNode", x.peer)

    reports = list(reports)
    margins: dict[int, float] = {}
    for mine, other in ((a, b), (b, a)):
        rep = _latest_report(reports, mine.peer)
        if rep is None:
            raise MissingReport(f"no report from receiver {mine.peer}")
        if now_superframe is not None and now_superframe - rep.superframe > table.config.horizon:
            raise MissingReport(f"report from receiver {mine.peer} is stale")
        if mine.owner not in rep.rssi:
            raise MissingReport(f"receiver {mine.peer} has not heard its own transmitter {mine.owner}")
        margins[mine.peer] = rep.rssi[mine.owner] - rep.rssi.get(other.owner, sensitivity_dbm)

    for mine in (a, b):
        if margins[mine.peer] < threshold_db:
            return MergeDecision(False, table, "InsufficientMargin", mine.peer, margins)
    merged, kept, moved = merge_sgts(table, a, b)
    return MergeDecision(True, merged, None, None, margins, kept, moved)


def entry_at(table: ScheduleTable, counter: int, slot: int) -> SlotEntry:
    _check_slot(table.config, slot)
    return table.cells[(counter % table.config.horizon, slot)]


@dataclass(frozen=True)
class Violation:
    rule: str
    superframe: int
    slot: int
    detail: str = ""


def validate_schedule(table: ScheduleTable) -> list[Violation]:
    cfg = table.config
    out: list[Violation] = []
    S = cfg.slots_per_superframe
    missing = False
    for s in range(cfg.horizon):
        for k in range(cfg.columns):
            e = table.cells.get((s, k))
            if e is None:
                out.append(Violation("MissingCell", s, k))
                missing = True
            elif k == 0 and not isinstance(e, Superbeacon):
                out.append(Violation("MissingSuperbeacon", s, k, e.kind))
            elif k != 0 and isinstance(e, Superbeacon):
                out.append(Violation("MisplacedSuperbeacon", s, k))
            elif k >= S and not isinstance(e, Inactive):
                out.append(Violation("ActivityBeyondSfap", s, k, e.kind))
            elif k < S and isinstance(e, Inactive):
                out.append(Violation("InactiveInActivePortion", s, k))
    if missing:
        return out

    claims: dict[tuple[int, int], set[Allocation]] = defaultdict(set)
    for a in table.allocations():
        first = next(k for k, e in sorted(table.cells.items()) if a in e.allocations)
        if not 0 <= a.level <= cfg.n_max:
            out.append(Violation("LevelOutOfRange", first[0], first[1], f"owner {a.owner} level {a.level}"))
        if not 0 <= a.phase < a.period:
            out.append(Violation("BadPhase", first[0], first[1], f"owner {a.owner} phase {a.phase}"))
        if a.owner == a.peer:
            out.append(Violation("SelfLoop", first[0], first[1], f"node {a.owner}"))
        for s in a.superframes(cfg.horizon):
            claims[(s, a.slot_index)].add(a)

    seen_pairs: set[frozenset] = set()
    for (s, k), e in sorted(table.cells.items()):
        content = set(e.allocations)
        claimants = claims.get((s, k), set())
        if len(claimants) > 1 and not (isinstance(e, Sgts) and claimants == content):
            owners = sorted(a.owner for a in claimants)
            out.append(Violation("DoubleBooking", s, k, f"owners {owners}"))
        elif content != claimants:
            out.append(Violation("Periodicity", s, k, e.kind))
        if isinstance(e, Sgts):
            pair = frozenset((e.first, e.second))
            if pair in seen_pairs:
                continue
            seen_pairs.add(pair)
            if e.first.owner == e.second.owner:
                out.append(Violation("SameOwner", s, k, f"owner {e.first.owner}"))
            if e.first.peer == e.second.peer:
                out.append(Violation("SameReceiver", s, k, f"peer {e.first.peer}"))

    gbs: dict[int, set[tuple[int, int]]] = defaultdict(set)
    for (s, k), e in table.cells.items():
        if isinstance(e, Gbs):
            gbs[e.coordinator].add((s, k))
    for coord, cells in sorted(gbs.items()):
        slots = {k for _, k in cells}
        if len(slots) != 1 or len(cells) != cfg.horizon:
            s, k = min(cells)
            out.append(Violation("GbsInconsistent", s, k, f"coordinator {coord}"))

    sfap = active_portion(cfg)
    for s in range(cfg.horizon):
        if table.cap_count(s) < cfg.min_cap_slots:
            out.append(Violation("CapShortfall", s, 0, f"{table.cap_count(s)} < {cfg.min_cap_slots}"))
        if table.t_cap(s) + table.t_cfp(s) != sfap:
            out.append(Violation("TimeAccounting", s, 0))
    return out


# -- text dump ---------------------------------------------------------------

def _fmt_alloc(a: Allocation) -> str:
    return (
        f"owner={a.owner} peer={a.peer} level={a.level} phase={a.phase} "
        f"origin={a.origin} direction={a.direction}"
    )


def dump_schedule(table: ScheduleTable) -> str:
    """One line per (superframe, slot): ``<sf> <slot> <kind> [fields]``."""
    cfg = table.config
    lines = [
        f"# schedule bo={cfg.bo} so={cfg.so} n_max={cfg.n_max} "
        f"slots={cfg.slots_per_superframe} min_cap={cfg.min_cap_slots}"
    ]
    for s in range(cfg.horizon):
        for k in range(cfg.columns):
            e = table.cells[(s, k)]
            if isinstance(e, Gbs):
                tail = f" coordinator={e.coordinator}"
            elif isinstance(e, Gts):
                tail = " " + _fmt_alloc(e.allocation)
            elif isinstance(e, Sgts):
                tail = f" {_fmt_alloc(e.first)} ; {_fmt_alloc(e.second)}"
            else:
                tail = ""
            lines.append(f"{s} {k} {e.kind}{tail}")
    return "\n".join(lines) + "\n"


def _parse_fields(text: str) -> dict[str, str]:
    return dict(tok.split("=", 1) for tok in text.split())


def _parse_alloc(text: str, slot: int) -> Allocation:
    f = _parse_fields(text)
    return Allocation(
        owner=int(f["owner"]),
        peer=int(f["peer"]),
        slot_index=slot,
        level=int(f["level"]),
        phase=int(f["phase"]),
        origin=f["origin"],
        direction=f["direction"],
    )


def parse_schedule(text: str) -> ScheduleTable:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = re.match(r"#\s*schedule\s+(.*)", lines[0])
    if header is None:
        raise ValueError("missing schedule header line")
    h = _parse_fields(header.group(1))
    cfg = SuperframeConfig(
        bo=int(h["bo"]),
        so=int(h["so"]),
        n_max=int(h["n_max"]),
        slots_per_superframe=int(h["slots"]),
        min_cap_slots=int(h["min_cap"]),
    )
    cells: dict[tuple[int, int], SlotEntry] = {}
    for ln in lines[1:]:
        s_txt, k_txt, kind, *rest = ln.split(None, 3)
        s, k = int(s_txt), int(k_txt)
        tail = rest[0] if rest else ""
        if kind == "superbeacon":
            cells[(s, k)] = Superbeacon()
        elif kind == "cap":
            cells[(s, k)] = Cap()
        elif kind == "inactive":
            cells[(s, k)] = Inactive()
        elif kind == "gbs":
            cells[(s, k)] = Gbs(int(_parse_fields(tail)["coordinator"]))
        elif kind == "gts":
            cells[(s, k)] = Gts(_parse_alloc(tail, k))
        elif kind == "sgts":
            left, right = tail.split(";")
            cells[(s, k)] = Sgts(_parse_alloc(left, k), _parse_alloc(right, k))
        else:
            raise ValueError(f"unknown entry kind {kind!r} in line {ln!r}")
    return ScheduleTable(cfg, cells)
