"""Acceptance gate: one test per criterion, each at its stated tolerance and
runtime budget. Run with ``pytest tests/test_acceptance.py`` to see the
pass/fail summary lines."""
import itertools
import time
from dataclasses import replace
from fractions import Fraction

from sgtsmac.cli import main
from sgtsmac.harness import (
    beacon_overlaps,
    estimate_window,
    exclusivity_violations,
    is_monotone,
    latency_from_trace,
    occupancy,
    random_scenario,
    run_merge_soundness,
    run_scenario,
    run_schedule_demo,
    run_sgts_sweep,
)
from sgtsmac.scenario import load_scenario
from sgtsmac.schedule import (
    Cap,
    Gbs,
    ScheduleTable,
    SlotExhausted,
    SlotRequest,
    Superbeacon,
    SuperframeConfig,
    active_portion,
    allocate_gts,
    beacon_interval,
    validate_schedule,
)


class Clock:
    def __init__(self):
        self.t0 = time.perf_counter()

    @property
    def s(self) -> float:
        return time.perf_counter() - self.t0


def test_c01_timing_formulas(criterion):
    clock = Clock()
    base_ms = Fraction("15.36")
    bad = []
    for bo in range(9):
        for so in range(bo + 1):
            cfg = SuperframeConfig(bo=bo, so=so)
            bi, sfap = base_ms * 1000 * 2 ** bo, base_ms * 1000 * 2 ** so
            if beacon_interval(cfg) != bi or active_portion(cfg) != sfap:
                bad.append((bo, so))
            if not isinstance(beacon_interval(cfg), int) or not isinstance(active_portion(cfg), int):
                bad.append((bo, so, "type"))
    spot = beacon_interval(SuperframeConfig()) == 15_360 and active_portion(SuperframeConfig(bo=2, so=2)) == 61_440
    ok = not bad and spot and clock.s < 1
    criterion(1, ok, f"45 (bo, so) pairs exact in integer us, mismatches={len(bad)}, {clock.s:.3f}s")


def test_c02_schedule_demo(criterion):
    clock = Clock()
    t = run_schedule_demo()
    beacons = all(isinstance(t[(s, 0)], Superbeacon) for s in range(8))
    gbs = all(isinstance(t[(s, k)], Gbs) for s in range(8) for k in (4, 8, 12))
    occ = {n: occupancy(t, n) for n in (22, 31, 11, 21, 32, 33)}
    want = {22: 8, 31: 8, 11: 4, 21: 4, 32: 2, 33: 1}
    violations = validate_schedule(t)
    ok = beacons and gbs and occ == want and not violations and clock.s < 1
    criterion(2, ok, f"superbeacons={beacons} gbs@4/8/12={gbs} occupancy={occ} violations={len(violations)}, {clock.s:.3f}s")


def test_c03_zero_sigma_window(criterion):
    clock = Clock()
    s = load_scenario("fig9.scenario")
    s = replace(s, radio=replace(s.radio, shadowing_sigma_db=0.0))
    # one bin per sweep step, so the estimate resolves the step
    r = run_sgts_sweep(s, trials=1, step_db=0.5, bin_db=0.5)
    collided = sorted({round(d, 6) for rows in r.samples.values() for d, kind, _ in rows if kind == "collision"})
    decoded = sorted({round(d, 6) for rows in r.samples.values() for d, kind, _ in rows if kind != "collision"})
    step = 0.5
    lo, hi = collided[0], collided[-1]
    inside_clean = all(d <= -5 + 1e-9 or d >= 5 - 1e-9 for d in decoded)
    inside_clean = inside_clean and all(-5 < d < 5 for d in collided)
    width = estimate_window(r).width_db
    ok = (
        abs(lo + 5) <= step and abs(hi - 5) <= step and inside_clean
        and abs(width - 10) <= step and clock.s < 10
    )
    criterion(3, ok, f"collision deltas span [{lo:+.2f}, {hi:+.2f}] dB, window {width:.2f} dB, {clock.s:.2f}s")


def test_c04_symmetric_crossover(criterion):
    clock = Clock()
    r = run_sgts_sweep(load_scenario("fig9.scenario"))  # sigma 2 dB, 500 trials per power
    w = estimate_window(r)
    mono = is_monotone(r.curve(0), rising=True) and is_monotone(r.curve(1), rising=False)
    ok = abs(w.crossover_db) <= 1.0 and mono and clock.s < 60
    criterion(4, ok, f"crossover {w.crossover_db:+.2f} dB, monotone={mono}, {clock.s:.1f}s")


def test_c05_advance_shifts_crossover(criterion):
    clock = Clock()
    adv = load_scenario("fig7.scenario")  # coordinator 1 (and node 11 behind it) 3 us early
    sym = replace(adv, nodes=tuple(replace(n, clock_offset_us=0) for n in adv.nodes))
    c_adv = estimate_window(run_sgts_sweep(adv)).crossover_db
    c_sym = estimate_window(run_sgts_sweep(sym)).crossover_db
    shift = c_sym - c_adv  # positive: the early node wins at lower RSSI lead
    ok = shift >= 1.0 and clock.s < 60
    criterion(5, ok, f"crossover {c_sym:+.2f} dB -> {c_adv:+.2f} dB with 3 us advance (shift {shift:.2f} dB), {clock.s:.1f}s")


def _random_runs():
    out = []
    for seed in range(100):
        s = random_scenario(seed)
        world, trace, end = run_scenario(s)
        out.append((s, world, trace, end))
    return out


_RUNS: list = []


def _runs():
    if not _RUNS:
        t0 = time.perf_counter()
        _RUNS.extend(_random_runs())
        _RUNS.append(time.perf_counter() - t0)
    return _RUNS[:-1], _RUNS[-1]


def test_c06_latency_guarantee(criterion):
    runs, elapsed = _runs()
    violations = 0
    frames = 0
    for s, world, trace, end in runs:
        stats = latency_from_trace(world, trace, end)
        violations += len(stats.violations)
        frames += sum(n.count for n in stats.nodes.values() if n.bound_us is not None)
    ok = violations == 0 and frames > 0 and elapsed < 120
    criterion(6, ok, f"100 scenarios, {frames} GTS frames, {violations} bound violations, {elapsed:.1f}s")


def test_c07_exclusivity_and_beacons(criterion):
    runs, elapsed = _runs()
    overlap = sum(len(exclusivity_violations(w, tr)) for _, w, tr, _ in runs)
    beacons = sum(len(beacon_overlaps(tr)) for _, _, tr, _ in runs)
    merged = sum(1 for _, _, tr, _ in runs for e in tr if e.category == "schedule-change" and e.get("change") == "sgts")
    ok = overlap == 0 and beacons == 0
    criterion(7, ok, f"guaranteed-slot overlaps={overlap}, beacon overlaps={beacons} ({merged} SGTS merges exercised)")


def _oracle_feasible(table, level):
    cfg = table.config
    H, p = cfg.horizon, 2 ** level
    for phase in range(p):
        touched = [s for s in range(H) if s % p == phase]
        if any(sum(table[(s, k)] == Cap() for k in range(cfg.slots_per_superframe)) - 1 < cfg.min_cap_slots
               for s in touched):
            continue
        for k in range(1, cfg.slots_per_superframe):
            if all(table[(s, k)] == Cap() for s in touched):
                return True
    return False


def test_c08_scheduler_oracle(criterion):
    clock = Clock()
    checked = mismatches = 0
    for slots in (2, 3, 4):
        for n_max in (0, 1, 2):
            for min_cap in range(slots - 1):
                cfg = SuperframeConfig(n_max=n_max, slots_per_superframe=slots, min_cap_slots=min_cap)
                for levels in itertools.product(range(n_max + 1), repeat=6):
                    t = ScheduleTable.empty(cfg)
                    for i, level in enumerate(levels):
                        feasible = _oracle_feasible(t, level)
                        try:
                            t, _ = allocate_gts(t, SlotRequest(100 + i, 1, level))
                            got = True
                        except SlotExhausted:
                            got = False
                        checked += 1
                        mismatches += got != feasible
    ok = mismatches == 0 and clock.s < 30
    criterion(8, ok, f"{checked} allocation calls vs brute force, {mismatches} mismatches, {clock.s:.1f}s")


def test_c09_determinism(criterion, tmp_path, capsys):
    clock = Clock()
    a, b = tmp_path / "a", tmp_path / "b"
    rc = [main(["sweep", "fig7.scenario", "--seed", "42", "--out", str(d)]) for d in (a, b)]
    rc += [main(["run", "fig7.scenario", "--seed", "42", "--out", str(d)]) for d in (a, b)]
    files = sorted(p.name for p in a.iterdir())
    same = files == sorted(p.name for p in b.iterdir()) and all(
        (a / f).read_bytes() == (b / f).read_bytes() for f in files
    )
    digests = [next(ln for ln in (d / "sweep_summary.txt").read_text().splitlines() if ln.startswith("result_sha256"))
               for d in (a, b)]
    traces = [(d / "run.trace").read_text().splitlines()[-1] for d in (a, b)]
    ok = rc == [0] * 4 and same and digests[0] == digests[1] and traces[0] == traces[1] and clock.s < 120
    criterion(9, ok, f"files {files} byte-identical={same}, {digests[0]}, {traces[0].lstrip('# ')}, {clock.s:.1f}s")


def test_c10_merge_soundness(criterion):
    clock = Clock()
    r = run_merge_soundness(topologies=300, occurrences=10_000, threshold_db=10.0, sigma_db=2.0, seed=0)
    ok = r.accepted > 0 and r.occurrences >= 10_000 and r.collision_rate < 0.01 and clock.s < 60
    criterion(
        10, ok,
        f"{r.accepted}/{r.topologies} merges accepted, {r.failures}/{r.occurrences} shared-slot failures "
        f"({100 * r.collision_rate:.2f}%, worst pair {100 * r.worst_pair_rate:.1f}%), {clock.s:.1f}s",
    )
