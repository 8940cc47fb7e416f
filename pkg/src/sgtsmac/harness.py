"""Experiments: the shared-slot power sweep, schedule demo, latency and
merge-soundness studies, plus the post-processing they need."""
from __future__ import annotations

import hashlib
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace

import numpy as np

from .engine import Flow, SgtsPolicy, TraceEvent, World, rng_stream, run_until
from .protocol import Role
from .radio import (
    RadioEnvironment,
    Received,
    TransmissionAttempt,
    mean_rssi_dbm,
    resolve_reception,
)
from .scenario import (
    NodeSpec,
    RadioSpec,
    RequestSpec,
    Scenario,
    build_table,
    build_world,
    radio_environment,
)
from .schedule import (
    Gbs,
    Gts,
    ScheduleTable,
    SlotExhausted,
    SlotRequest,
    SuperframeConfig,
    allocate_gbs,
    allocate_gts,
    beacon_interval,
    RssiReport,
    try_merge_sgts,
)


class BadTopology(ValueError):
    pass


class NonMonotone(ValueError):
    pass


# -- shared-slot sweep -------------------------------------------------------------

@dataclass(frozen=True)
class SweepPoint:
    delta_db: float  # bin centre
    trials: int
    positives: int
    mean_delta_db: float = 0.0

    @property
    def rate(self) -> float:
        return self.positives / self.trials


@dataclass
class SweepResult:
    links: tuple[tuple[int, int], ...]
    curves: dict[tuple[int, int], list[SweepPoint]]
    # per link: (measured delta, outcome kind, success) for every trial
    samples: dict[tuple[int, int], list[tuple[float, str, bool]]]
    discarded: int
    digest: str

    def curve(self, i: int) -> list[SweepPoint]:
        return self.curves[self.links[i]]


def effective_offsets(scenario: Scenario) -> dict[int, int]:
    """Slot-boundary offset of every node after synchronisation.

    Coordinators follow the superbeacon; simple nodes that synchronise on
    their coordinator's beacon inherit its offset on top of their own.
    """
    nodes = {n.id: n for n in scenario.nodes}
    out: dict[int, int] = {}

    def offset(nid: int) -> int:
        if nid in out:
            return out[nid]
        n = nodes[nid]
        if n.role == Role.PAN.value:
            value = n.clock_offset_us
        elif n.role == Role.COORDINATOR.value:
            value = n.clock_offset_us
        elif n.sync_via_parent and n.parent is not None:
            value = offset(n.parent) + n.clock_offset_us
        else:
            value = n.clock_offset_us
        out[nid] = value
        return value

    for nid in sorted(nodes):
        offset(nid)
    return out


def _power_grid(lo: float, hi: float, step: float, anchor: float) -> list[float]:
    """Powers in [lo, hi] on a ``step`` lattice through ``anchor``.

    Anchoring on the fixed node's power puts equal-power (and every whole
    multiple of ``step`` of RSSI difference) on the grid.
    """
    down = int(math.floor((anchor - lo) / step + 1e-9))
    up = int(math.floor((hi - anchor) / step + 1e-9))
    return [round(anchor + i * step, 6) for i in range(-down, up + 1)]


def _bin(x: float, width: float) -> float:
    return round(math.floor(x / width + 0.5) * width, 6)


def run_sgts_sweep(
    scenario: Scenario,
    *,
    seed: int | None = None,
    trials: int | None = None,
    step_db: float | None = None,
    bin_db: float | None = None,
) -> SweepResult:
    """Shared-slot experiment over the radio model.

    Each trial replays three slots: the first transmitter alone, the second
    alone (every receiver notes both RSSI values), then both together in the
    shared slot. A trial counts positive for a link when its receiver decodes
    that link's transmitter in the shared slot. One node's power is swept
    over the radio's power range (on a lattice through the reference power)
    while the other stays at the reference power, then the roles swap. Curves are binned by the receiver's measured
    RSSI(first transmitter) - RSSI(second transmitter).
    """
    sw = scenario.sweep
    if sw is None:
        raise BadTopology("scenario has no sweep section")
    links = tuple(sw.links)
    transmitters = [tx for tx, _ in links]
    if len(links) != 2 or len(set(transmitters)) != 2:
        raise BadTopology("the sweep needs exactly two links with distinct transmitters")
    seed = scenario.seed if seed is None else seed
    trials = sw.trials if trials is None else trials
    step = sw.step_db if step_db is None else step_db
    width = sw.bin_db if bin_db is None else bin_db
    env = radio_environment(scenario)
    offsets = effective_offsets(scenario)
    n1, n2 = transmitters
    receivers = sorted({rx for _, rx in links})
    hi_power = env.tx_power_range[1]
    for rx in receivers:
        if rx in transmitters:
            raise BadTopology(f"node {rx} cannot both send and receive in the shared slot")
        for tx in transmitters:
            if mean_rssi_dbm(env, tx, rx, hi_power) < env.decode_floor_dbm:
                raise BadTopology(f"receiver {rx} cannot hear transmitter {tx}")

    rngs = {rx: rng_stream(seed, rx, "sweep") for rx in receivers}
    digest = hashlib.sha256()
    samples: dict[tuple[int, int], list[tuple[float, str, bool]]] = {link: [] for link in links}
    discarded = 0
    ref = env.clamp_power(sw.reference_power_dbm)
    grid = _power_grid(*env.tx_power_range, step, ref)
    for swept in (n1, n2):
        for p in grid:
            power = {n1: ref, n2: ref}
            power[swept] = p
            att = {tx: TransmissionAttempt(tx, power[tx], offsets[tx]) for tx in transmitters}
            for trial in range(trials):
                measured: dict[int, dict[int, float]] = {rx: {} for rx in receivers}
                ok = True
                for tx in transmitters:  # measurement slots
                    for rx in receivers:
                        out = resolve_reception(env, rx, [att[tx]], rngs[rx], tx)
                        if isinstance(out, Received):
                            measured[rx][tx] = out.rssi_dbm
                        else:
                            ok = False
                shared = {rx: resolve_reception(env, rx, [att[n1], att[n2]], rngs[rx]) for rx in receivers}
                if not ok:
                    discarded += 1
                    digest.update(f"{swept} {p:.2f} {trial} unmeasured\n".encode())
                    continue
                for tx, rx in links:
                    delta = measured[rx][n1] - measured[rx][n2]
                    out = shared[rx]
                    success = isinstance(out, Received) and out.source == tx
                    samples[(tx, rx)].append((delta, out.kind, success))
                    digest.update(f"{swept} {p:.2f} {trial} {tx} {rx} {delta:.4f} {out.kind}\n".encode())

    curves = {}
    for link, rows in samples.items():
        bins: dict[float, list[float]] = defaultdict(lambda: [0, 0, 0.0])
        for delta, _, success in rows:
            b = bins[_bin(delta, width)]
            b[0] += 1
            b[1] += success
            b[2] += delta
        curves[link] = [SweepPoint(x, n, k, round(t / n, 6)) for x, (n, k, t) in sorted(bins.items())]
    return SweepResult(links, curves, samples, discarded, digest.hexdigest())


def sweep_table(result: SweepResult) -> str:
    """Comma-separated export: one row per (link, bin)."""
    rows = ["transmitter,receiver,delta_rssi_db,mean_delta_rssi_db,trials,positives,success_rate"]
    for tx, rx in result.links:
        for p in result.curves[(tx, rx)]:
            rows.append(f"{tx},{rx},{p.delta_db:.2f},{p.mean_delta_db:.3f},{p.trials},{p.positives},{p.rate:.4f}")
    return "\n".join(rows) + "\n"


# -- window / crossover -----------------------------------------------------------------

def isotonic(values: list[float], weights: list[float], increasing: bool = True) -> list[float]:
    """Pool-adjacent-violators fit."""
    if not increasing:
        return [-v for v in isotonic([-v for v in values], weights, True)]
    blocks: list[list[float]] = []  # [mean, weight, count]
    for v, w in zip(values, weights):
        blocks.append([v, w, 1])
        while len(blocks) > 1 and blocks[-2][0] > blocks[-1][0]:
            m2, w2, c2 = blocks.pop()
            m1, w1, c1 = blocks.pop()
            blocks.append([(m1 * w1 + m2 * w2) / (w1 + w2), w1 + w2, c1 + c2])
    out: list[float] = []
    for m, _, c in blocks:
        out.extend([m] * c)
    return out


def _direction(points: list[SweepPoint]) -> bool:
    first, last = points[0].rate, points[-1].rate
    if first == last:
        raise NonMonotone("flat success curve")
    return last > first


def _level_crossing(xs: list[float], rs: list[float], level: float, rising: bool) -> float:
    idx = range(1, len(xs)) if rising else range(len(xs) - 1, 0, -1)
    for i in idx:
        a, b = (i - 1, i) if rising else (i, i - 1)
        if rs[a] < level <= rs[b]:
            return xs[a] + (level - rs[a]) * (xs[b] - xs[a]) / (rs[b] - rs[a])
    raise NonMonotone(f"curve never crosses {level}")


@dataclass(frozen=True)
class WindowEstimate:
    width_db: float
    crossover_db: float
    edges: dict[tuple[int, int], tuple[float, float]]  # link -> (x at lo, x at hi)

    @property
    def transition_widths(self) -> dict[tuple[int, int], float]:
        return {k: abs(b - a) for k, (a, b) in self.edges.items()}


def estimate_window(result: SweepResult, lo: float = 0.05, hi: float = 0.95) -> WindowEstimate:
    """Width of the no-SGTS window and where the two success curves cross.

    The window runs between the points where each link becomes reliable
    (success rate ``hi``), measured on the isotonic-smoothed curves.
    """
    smooth: dict[tuple[int, int], tuple[list[float], list[float], bool]] = {}
    edges = {}
    for link in result.links:
        pts = result.curves[link]
        if len(pts) < 2:
            raise NonMonotone(f"curve for {link} has fewer than two points")
        rising = _direction(pts)
        xs = [p.delta_db for p in pts]
        rs = isotonic([p.rate for p in pts], [p.trials for p in pts], rising)
        smooth[link] = (xs, rs, rising)
        edges[link] = (_level_crossing(xs, rs, lo, rising), _level_crossing(xs, rs, hi, rising))
    up = [l for l in result.links if smooth[l][2]]
    down = [l for l in result.links if not smooth[l][2]]
    if len(up) != 1 or len(down) != 1:
        raise NonMonotone("expected one rising and one falling curve")
    u, d = up[0], down[0]
    width = edges[u][1] - edges[d][1]

    ru = dict(zip(smooth[u][0], smooth[u][1]))
    rd = dict(zip(smooth[d][0], smooth[d][1]))
    xs = sorted(set(ru) & set(rd))
    diff = [ru[x] - rd[x] for x in xs]
    crossover = None
    for i, v in enumerate(diff):
        if v > 0:
            j = i - 1
            while j >= 0 and diff[j] == 0:
                j -= 1
            if j < 0:
                break
            if j == i - 1:
                crossover = xs[j] + (0 - diff[j]) * (xs[i] - xs[j]) / (diff[i] - diff[j])
            else:
                crossover = (xs[j + 1] + xs[i - 1]) / 2
            break
    if crossover is None:
        raise NonMonotone("success curves never cross")
    return WindowEstimate(width, crossover, edges)


def is_monotone(points: list[SweepPoint], rising: bool, tolerance: float = 0.02) -> bool:
    rates = [p.rate for p in points]
    pairs = zip(rates, rates[1:])
    if rising:
        return all(b >= a - tolerance for a, b in pairs)
    return all(b <= a + tolerance for a, b in pairs)


# -- schedule demo ---------------------------------------------------------------------

DEMO_COORDINATORS = (1, 2, 3)
# (node, coordinator, level) in request order
DEMO_REQUESTS = ((33, 3, 3), (32, 3, 2), (11, 1, 1), (21, 2, 1), (22, 2, 0), (31, 3, 0))


def run_schedule_demo(config: SuperframeConfig | None = None) -> ScheduleTable:
    """Three stars and six simple nodes with mixed reservation levels."""
    table = ScheduleTable.empty(config or SuperframeConfig(bo=0, so=0, n_max=3))
    for c in DEMO_COORDINATORS:
        table, _ = allocate_gbs(table, c)
    for node, coord, level in DEMO_REQUESTS:
        table, _ = allocate_gts(table, SlotRequest(node, coord, level))
    return table


def occupancy(table: ScheduleTable, owner: int) -> int:
    """Number of horizon superframes in which ``owner`` holds a guaranteed slot."""
    cfg = table.config
    return sum(
        1
        for s in range(cfg.horizon)
        if any(a.owner == owner for k in range(cfg.columns) for a in table.cells[(s, k)].allocations)
    )


# -- latency ---------------------------------------------------------------------------

@dataclass
class NodeLatency:
    node: int
    bound_us: int | None
    count: int = 0
    max_us: int = 0
    mean_us: float = 0.0
    histogram: tuple[tuple[int, int], ...] = ()  # (bucket start in us, count), bucket = one slot


@dataclass
class LatencyStats:
    nodes: dict[int, NodeLatency]
    violations: list[tuple[int, int, int]] = field(default_factory=list)  # node, seq, latency

    def __getitem__(self, node: int) -> NodeLatency:
        return self.nodes[node]


def latency_bound(config: SuperframeConfig, level: int) -> int:
    return 2 ** level * beacon_interval(config) + config.slot_duration


def latency_from_trace(world: World, trace: list[TraceEvent], end_us: int | None = None) -> LatencyStats:
    """Queue-to-transmission latency per node, checked against its GTS level.

    Frames still queued at ``end_us`` count as violations once they have
    waited longer than the bound. CAP-only traffic is reported without a bound.
    """
    cfg = world.config
    levels: dict[tuple[int, int], int] = {}
    for table in list(world.history.values()) or [world.table]:
        for a in table.allocations():
            key = (a.owner, a.peer)
            levels[key] = max(levels.get(key, a.level), a.level)
    latencies: dict[int, list[int]] = defaultdict(list)
    bounds: dict[int, int | None] = {}
    violations = []
    for ev in trace:
        if ev.category != "tx" or ev.get("kind") != "data":
            continue
        lat = ev.time - ev.get("created")
        latencies[ev.node].append(lat)
        if ev.get("cell") in ("gts", "sgts"):
            level = levels[(ev.node, ev.get("dest"))]
            bound = latency_bound(cfg, level)
            bounds[ev.node] = max(bounds.get(ev.node) or 0, bound)
            if lat > bound:
                violations.append((ev.node, ev.get("seq"), lat))
        else:
            bounds.setdefault(ev.node, None)
    if end_us is not None:
        for node in world.nodes.values():
            for f in node.pending:
                if f.via != "gts":
                    continue
                level = levels.get((node.id, f.destination))
                if level is not None and end_us - f.created_us > latency_bound(cfg, level):
                    violations.append((node.id, f.seq, end_us - f.created_us))
    slot = cfg.slot_duration
    stats = {}
    for node, lats in sorted(latencies.items()):
        hist = defaultdict(int)
        for v in lats:
            hist[v // slot * slot] += 1
        stats[node] = NodeLatency(node, bounds.get(node), len(lats), max(lats), float(np.mean(lats)),
                                  tuple(sorted(hist.items())))
    return LatencyStats(stats, violations)


def run_scenario(scenario: Scenario) -> tuple[World, list[TraceEvent], int]:
    world = build_world(scenario)
    end = scenario.run_superframes * beacon_interval(scenario.superframe)
    trace = run_until(world, end)
    return world, trace, end


def measure_gts_latency(scenario: Scenario) -> LatencyStats:
    world, trace, end = run_scenario(scenario)
    return latency_from_trace(world, trace, end)


# -- trace checks ------------------------------------------------------------------------

def _overlap(a: TraceEvent, b: TraceEvent) -> bool:
    return a.time < b.get("end") and b.time < a.get("end")


def exclusivity_violations(world: World, trace: list[TraceEvent]) -> list[str]:
    """Overlaps in plain guaranteed slots, SGTS cells over two transmitters,
    and transmissions in cells the sender does not own."""
    out = []
    H = world.config.horizon
    history = world.history
    by_cell: dict[tuple[int, int], list[TraceEvent]] = defaultdict(list)
    airtime = [e for e in trace if e.category in ("tx", "beacon")]
    for e in airtime:
        by_cell[(e.get("sf"), e.get("slot"))].append(e)
    for e in airtime:
        if e.category != "tx" or e.get("cell") not in ("gts", "sgts"):
            continue
        sf, slot = e.get("sf"), e.get("slot")
        table = history.get(sf // H, world.table)
        entry = table.cells[(sf % H, slot)]
        if not any(a.owner == e.node for a in entry.allocations):
            out.append(f"node {e.node} sent in cell ({sf},{slot}) it does not own")
        partners = {a.owner for a in entry.allocations} if e.get("cell") == "sgts" else {e.node}
        for other in airtime:
            if other is e or other.node in partners:
                continue
            if _overlap(e, other):
                out.append(f"node {e.node} overlapped by node {other.node} in cell ({sf},{slot})")
        if e.get("cell") == "sgts" and len(by_cell[(sf, slot)]) > 2:
            out.append(f"more than two transmitters in SGTS cell ({sf},{slot})")
    return out


def beacon_overlaps(trace: list[TraceEvent]) -> list[str]:
    beacons = sorted((e for e in trace if e.category == "beacon"), key=lambda e: e.time)
    out = []
    for a, b in zip(beacons, beacons[1:]):
        if b.time < a.get("end"):
            out.append(f"beacons of nodes {a.node} and {b.node} overlap at {b.time} us")
    return out


# -- random scenarios ------------------------------------------------------------------------

def random_scenario(seed: int) -> Scenario:
    """A PAN coordinator, one to three stars and mixed GTS/CAP traffic.

    Nodes sit close enough that every link clears the sensitivity floor by a
    wide margin, so the guarantees under test are the MAC's, not the radio's.
    """
    rng = np.random.default_rng(seed)
    n_max = int(rng.integers(1, 4))
    so = int(rng.integers(0, 2))
    bo = so + int(rng.integers(0, 2))
    config = SuperframeConfig(bo=bo, so=so, n_max=n_max, slots_per_superframe=16, min_cap_slots=2)
    bi = beacon_interval(config)
    nodes = [NodeSpec(0, Role.PAN.value, position=(0.0, 0.0))]
    traffic: list[Flow] = []
    requests: list[RequestSpec] = []
    pds: list[RequestSpec] = []
    n_coord = int(rng.integers(1, 4))
    next_child = 100
    for c in range(1, n_coord + 1):
        angle = rng.uniform(0, 2 * math.pi)
        radius = rng.uniform(6, 14)
        cx, cy = radius * math.cos(angle), radius * math.sin(angle)
        nodes.append(NodeSpec(c, Role.COORDINATOR.value, position=(round(cx, 3), round(cy, 3)),
                              clock_offset_us=int(rng.integers(-5, 6))))
        for _ in range(int(rng.integers(1, 4))):
            nid = next_child
            next_child += 1
            a, r = rng.uniform(0, 2 * math.pi), rng.uniform(1, 4)
            pos = (round(cx + r * math.cos(a), 3), round(cy + r * math.sin(a), 3))
            nodes.append(NodeSpec(nid, Role.NODE.value, parent=c, position=pos,
                                  clock_offset_us=int(rng.integers(-5, 6))))
            if rng.random() < 0.2:
                traffic.append(Flow(nid, c, kind="poisson", rate_per_s=float(rng.uniform(5, 40)),
                                    via="cap", payload_symbols=24, start="start"))
                continue
            level = int(rng.integers(0, n_max + 1))
            downlink = rng.random() < 0.2
            owner, peer = (c, nid) if downlink else (nid, c)
            spec = RequestSpec(owner, peer, level, "downlink" if downlink else "uplink")
            (pds if rng.random() < 0.5 else requests).append(spec)
            period = 2 ** level * int(rng.integers(1, 3))
            traffic.append(Flow(owner, peer, period_superframes=period, offset_us=int(rng.integers(0, bi)),
                                via="gts", start="grant"))
    sgts = SgtsPolicy(enabled=bool(rng.random() < 0.5), threshold_db=10.0)
    scenario = Scenario(
        superframe=config,
        radio=RadioSpec(),
        nodes=tuple(nodes),
        traffic=tuple(traffic),
        gts_requests=tuple(requests),
        pds_grants=tuple(pds),
        sgts=sgts,
        seed=seed,
        run_superframes=max(24, 4 * config.horizon),
    )
    # PDS grants are placed at build time and must fit; overflow goes over the air instead
    while True:
        try:
            build_table(scenario, include_requests=False)
            return scenario
        except SlotExhausted:
            moved = scenario.pds_grants[-1]
            scenario = replace(scenario, pds_grants=scenario.pds_grants[:-1],
                               gts_requests=scenario.gts_requests + (moved,))


# -- merge soundness ---------------------------------------------------------------------------

@dataclass
class MergeSoundness:
    topologies: int
    accepted: int
    refused: dict[str, int]
    occurrences: int
    failures: int
    worst_pair_rate: float

    @property
    def collision_rate(self) -> float:
        return self.failures / self.occurrences if self.occurrences else 0.0


def run_merge_soundness(
    topologies: int = 300,
    occurrences: int = 10_000,
    threshold_db: float = 10.0,
    sigma_db: float = 2.0,
    samples_per_report: int = 8,
    seed: int = 0,
) -> MergeSoundness:
    """Negotiate SGTS on random two-pair layouts, then replay the shared slot.

    Each receiver's report averages ``samples_per_report`` RSSI readings
    taken while each transmitter used its own GTS. An occurrence fails
    when either receiver misses its own frame.
    """
    rng = np.random.default_rng(seed)
    radio = RadioEnvironment(shadowing_sigma_db=sigma_db)
    config = SuperframeConfig(bo=0, so=0, n_max=3)
    accepted = []
    refused: dict[str, int] = defaultdict(int)
    A1, A2, B1, B2 = 1, 2, 3, 4
    lo, hi = radio.tx_power_range
    for t in range(topologies):
        sep = rng.uniform(2, 40)
        ra, rb = rng.uniform(0.5, 6, size=2)
        aa, ab = rng.uniform(0, 2 * math.pi, size=2)
        positions = {
            A1: (0.0, 0.0),
            A2: (ra * math.cos(aa), ra * math.sin(aa)),
            B1: (sep, 0.0),
            B2: (sep + rb * math.cos(ab), rb * math.sin(ab)),
        }
        env = replace(radio, positions=positions)
        power = {A2: float(rng.uniform(lo, hi)), B2: float(rng.uniform(lo, hi))}
        table = ScheduleTable.empty(config)
        table, a = allocate_gts(table, SlotRequest(A2, A1, 0, slot=3))
        table, b = allocate_gts(table, SlotRequest(B2, B1, 0, slot=4))
        reports = []
        meas_rng = rng_stream(seed, t, "measure")
        for rx in (A1, B1):
            readings: dict[int, list[float]] = defaultdict(list)
            for _ in range(samples_per_report):
                for tx in (A2, B2):
                    out = resolve_reception(env, rx, [TransmissionAttempt(tx, power[tx])], meas_rng, tx)
                    if isinstance(out, Received):
                        readings[tx].append(out.rssi_dbm)
            reports.append(RssiReport(rx, {tx: float(np.mean(v)) for tx, v in readings.items()}, 0))
        try:
            d = try_merge_sgts(table, a, b, reports, threshold_db, sensitivity_dbm=env.sensitivity_dbm)
        except Exception as exc:  # MissingReport: a receiver cannot hear its own transmitter
            refused[type(exc).__name__] += 1
            continue
        if d.accepted:
            accepted.append((env, power, t))
        else:
            refused[d.reason] += 1
    if not accepted:
        return MergeSoundness(topologies, 0, dict(refused), 0, 0, 0.0)
    per_pair = math.ceil(occurrences / len(accepted))
    failures = total = 0
    worst = 0.0
    for env, power, t in accepted:
        shared_rng = rng_stream(seed, t, "shared")
        attempts = [TransmissionAttempt(A2, power[A2]), TransmissionAttempt(B2, power[B2])]
        bad = 0
        for _ in range(per_pair):
            ok_a = resolve_reception(env, A1, attempts, shared_rng, A2)
            ok_b = resolve_reception(env, B1, attempts, shared_rng, B2)
            if not (isinstance(ok_a, Received) and isinstance(ok_b, Received)):
                bad += 1
        failures += bad
        total += per_pair
        worst = max(worst, bad / per_pair)
    return MergeSoundness(topologies, len(accepted), dict(refused), total, failures, worst)
