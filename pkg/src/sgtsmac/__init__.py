"""Simulator for a multi-star IEEE 802.15.4 MAC with a central slot scheduler,
beacon slots, previously dedicated slots and simultaneous (shared) GTS."""
from .schedule import (
    SuperframeConfig,
    ScheduleTable,
    SlotRequest,
    Allocation,
    allocate_gbs,
    allocate_gts,
    release_allocation,
    merge_sgts,
    try_merge_sgts,
    validate_schedule,
    dump_schedule,
    parse_schedule,
    beacon_interval,
    active_portion,
)
from .radio import RadioEnvironment, TransmissionAttempt, resolve_reception
from .engine import World, run_until, trace_digest, trace_lines
from .scenario import Scenario, ParseError, parse_scenario, load_scenario, build_table, build_world
from .harness import (
    run_sgts_sweep,
    estimate_window,
    run_schedule_demo,
    measure_gts_latency,
    run_merge_soundness,
)

__all__ = [name for name in dir() if not name.startswith("_")]
