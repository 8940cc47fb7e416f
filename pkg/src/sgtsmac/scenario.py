"""Scenario files: a strict YAML dialect for whole experiments.

Every run-affecting parameter lives here. Unknown keys and wrong types are
rejected with the offending line number; omitted keys take the defaults in
the ``_*_FIELDS`` tables below.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .engine import Flow, SgtsPolicy, TopologyInvalid, World, validate_topology
from .protocol import NodeMachine, Role
from .radio import RadioEnvironment
from .schedule import (
    Allocation,
    ConfigViolation,
    ScheduleError,
    ScheduleTable,
    Sgts,
    SlotRequest,
    SuperframeConfig,
    allocate_gbs,
    allocate_gts,
)


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(field)
        super().__init__(f"{': '.join(where)}: {message}" if where else message)


@dataclass(frozen=True)
class RadioSpec:
    path_loss_exponent: float = 2.0
    shadowing_sigma_db: float = 2.0
    capture_threshold_db: float = 5.0
    sensitivity_dbm: float = -92.0
    bias_slope_db_per_us: float = 1.0
    bias_saturation_db: float = 5.0
    reference_loss_db: float = 40.0
    reference_distance_m: float = 1.0
    noise_floor_dbm: float | None = None
    tx_power_min_dbm: float = -16.0
    tx_power_max_dbm: float = 3.6
    max_clock_error_us: int = 20


@dataclass(frozen=True)
class NodeSpec:
    id: int
    role: str
    parent: int | None = None
    position: tuple[float, float] = (0.0, 0.0)
    tx_power_dbm: float = 3.6
    clock_offset_us: int = 0
    mobile: bool = False
    gbs_slot: int | None = None
    sync_via_parent: bool = True


@dataclass(frozen=True)
class RequestSpec:
    owner: int
    peer: int
    level: int
    direction: str = "uplink"
    slot: int | None = None
    phase: int | None = None

    def to_request(self, origin: str = "request") -> SlotRequest:
        return SlotRequest(self.owner, self.peer, self.level, self.direction, origin, self.slot, self.phase)


@dataclass(frozen=True)
class SharedSlotSpec:
    slot: int
    first: tuple[int, int]
    second: tuple[int, int]
    level: int = 0
    phase: int = 0


@dataclass(frozen=True)
class SweepSpec:
    links: tuple[tuple[int, int], ...]
    step_db: float = 0.5
    trials: int = 500
    bin_db: float = 1.0
    reference_power_dbm: float = 3.6
    measure_slots: tuple[int, int] = (3, 4)
    shared_slot: int = 5


@dataclass(frozen=True)
class Scenario:
    superframe: SuperframeConfig = field(default_factory=SuperframeConfig)
    radio: RadioSpec = field(default_factory=RadioSpec)
    nodes: tuple[NodeSpec, ...] = ()
    traffic: tuple[Flow, ...] = ()
    gts_requests: tuple[RequestSpec, ...] = ()
    pds_grants: tuple[RequestSpec, ...] = ()
    shared_slots: tuple[SharedSlotSpec, ...] = ()
    sgts: SgtsPolicy = field(default_factory=SgtsPolicy)
    sweep: SweepSpec | None = None
    seed: int = 0
    run_superframes: int = 16

    def node(self, node_id: int) -> NodeSpec:
        return next(n for n in self.nodes if n.id == node_id)


# -- strict loading --------------------------------------------------------------

class _Map(dict):
    line = 0
    lines: dict


class _Seq(list):
    line = 0


class _Loader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node):
    loader.flatten_mapping(node)
    out = _Map()
    out.line = node.start_mark.line + 1
    out.lines = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        if key in out:
            raise ParseError(f"duplicate key {key!r}", key_node.start_mark.line + 1, str(key))
        out[key] = loader.construct_object(value_node, deep=True)
        out.lines[key] = key_node.start_mark.line + 1
    return out


def _construct_sequence(loader, node):
    out = _Seq(loader.construct_object(child, deep=True) for child in node.value)
    out.line = node.start_mark.line + 1
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_sequence)

# name -> (kind, default); kind in int | float | bool | str | optint | optfloat | pair | intpair | nodepair
_SUPERFRAME_FIELDS = {
    "bo": ("int", 0),
    "so": ("int", 0),
    "n_max": ("int", 3),
    "slots": ("int", 16),
    "min_cap_slots": ("int", 0),
}
_RADIO_FIELDS = {f: (k, getattr(RadioSpec(), f)) for f, k in [
    ("path_loss_exponent", "float"),
    ("shadowing_sigma_db", "float"),
    ("capture_threshold_db", "float"),
    ("sensitivity_dbm", "float"),
    ("bias_slope_db_per_us", "float"),
    ("bias_saturation_db", "float"),
    ("reference_loss_db", "float"),
    ("reference_distance_m", "float"),
    ("noise_floor_dbm", "optfloat"),
    ("tx_power_min_dbm", "float"),
    ("tx_power_max_dbm", "float"),
    ("max_clock_error_us", "int"),
]}
_NODE_FIELDS = {
    "id": ("int", None),
    "role": ("str", None),
    "parent": ("optint", None),
    "position": ("pair", (0.0, 0.0)),
    "tx_power_dbm": ("float", 3.6),
    "clock_offset_us": ("int", 0),
    "mobile": ("bool", False),
    "gbs_slot": ("optint", None),
    "sync_via_parent": ("bool", True),
}
_REQUEST_FIELDS = {
    "owner": ("int", None),
    "peer": ("int", None),
    "level": ("int", None),
    "direction": ("str", "uplink"),
    "slot": ("optint", None),
    "phase": ("optint", None),
}
_TRAFFIC_FIELDS = {
    "node": ("int", None),
    "destination": ("int", None),
    "kind": ("str", "periodic"),
    "period_superframes": ("int", 1),
    "rate_per_s": ("float", 10.0),
    "offset_us": ("int", 0),
    "via": ("str", "gts"),
    "payload_symbols": ("int", Flow.payload_symbols),
    "start": ("str", "grant"),
}
_SHARED_FIELDS = {
    "slot": ("int", None),
    "first": ("intpair", None),
    "second": ("intpair", None),
    "level": ("int", 0),
    "phase": ("int", 0),
}
_SGTS_FIELDS = {"enabled": ("bool", False), "threshold_db": ("float", 10.0)}
_SWEEP_FIELDS = {
    "links": ("links", None),
    "step_db": ("float", 0.5),
    "trials": ("int", 500),
    "bin_db": ("float", 1.0),
    "reference_power_dbm": ("float", 3.6),
    "measure_slots": ("intpair", (3, 4)),
    "shared_slot": ("int", 5),
}
_TOP_FIELDS = {
    "seed", "run_superframes", "superframe", "radio", "nodes", "traffic",
    "gts_requests", "pds_grants", "shared_slots", "sgts", "sweep",
}
_CHOICES = {
    "role": {r.value for r in Role},
    "direction": {"uplink", "downlink"},
    "kind": {"periodic", "poisson"},
    "via": {"gts", "cap"},
    "start": {"grant", "start"},
}


def _convert(kind: str, value: Any, line: int, path: str) -> Any:
    def bad(expected: str):
        raise ParseError(f"expected {expected}, got {value!r}", line, path)

    if kind in ("optint", "optfloat") and value is None:
        return None
    if kind in ("int", "optint"):
        if isinstance(value, bool) or not isinstance(value, int):
            bad("an integer")
        return value
    if kind in ("float", "optfloat"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            bad("a number")
        return float(value)
    if kind == "bool":
        if not isinstance(value, bool):
            bad("true/false")
        return value
    if kind == "str":
        if not isinstance(value, str):
            bad("a string")
        return value
    if kind == "pair":
        if not isinstance(value, list) or len(value) != 2:
            bad("[x, y]")
        return tuple(_convert("float", v, line, path) for v in value)
    if kind == "intpair":
        if not isinstance(value, list) or len(value) != 2:
            bad("a pair of integers")
        return tuple(_convert("int", v, line, path) for v in value)
    if kind == "links":
        if not isinstance(value, list) or not value:
            bad("a list of [transmitter, receiver] pairs")
        return tuple(_convert("intpair", v, line, path) for v in value)
    raise AssertionError(kind)


def _section(data: Any, spec: dict, path: str, line: int) -> dict:
    if data is None:
        data = _Map()
        data.lines = {}
    if not isinstance(data, dict):
        raise ParseError("expected a mapping", line, path)
    lines = getattr(data, "lines", {})
    own_line = getattr(data, "line", line)
    unknown = [k for k in data if k not in spec]
    if unknown:
        k = unknown[0]
        raise ParseError(f"unknown key {k!r} (allowed: {', '.join(spec)})", lines.get(k, own_line), f"{path}.{k}")
    out = {}
    for name, (kind, default) in spec.items():
        if name in data:
            ln = lines.get(name, own_line)
            value = _convert(kind, data[name], ln, f"{path}.{name}")
            if name in _CHOICES and value not in _CHOICES[name]:
                raise ParseError(f"{value!r} not one of {sorted(_CHOICES[name])}", ln, f"{path}.{name}")
            out[name] = value
        elif default is None and kind not in ("optint", "optfloat"):
            raise ParseError("required key missing", own_line, f"{path}.{name}")
        else:
            out[name] = default
    return out


def _list(data: Any, spec: dict, path: str, line: int) -> list[tuple[dict, int]]:
    if data is None:
        return []
    if not isinstance(data, list):
        raise ParseError("expected a list", line, path)
    return [(_section(item, spec, f"{path}[{i}]", line), getattr(item, "line", line)) for i, item in enumerate(data)]


def parse_scenario(text: str) -> Scenario:
    try:
        raw = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ParseError(f"malformed YAML: {exc}", mark.line + 1 if mark else None) from None
    if raw is None:
        raw = _Map()
        raw.lines = {}
    if not isinstance(raw, dict):
        raise ParseError("top level must be a mapping", 1)
    lines = raw.lines
    for k in raw:
        if k not in _TOP_FIELDS:
            raise ParseError(f"unknown key {k!r}", lines.get(k), k)

    def ln(key: str) -> int:
        return lines.get(key, 1)

    seed = _convert("int", raw.get("seed", 0), ln("seed"), "seed")
    run_sf = _convert("int", raw.get("run_superframes", 16), ln("run_superframes"), "run_superframes")
    if run_sf < 1:
        raise ParseError("must be >= 1", ln("run_superframes"), "run_superframes")

    sf = _section(raw.get("superframe"), _SUPERFRAME_FIELDS, "superframe", ln("superframe"))
    try:
        config = SuperframeConfig(sf["bo"], sf["so"], sf["n_max"], sf["slots"], sf["min_cap_slots"])
    except ConfigViolation as exc:
        raise ParseError(str(exc), ln("superframe"), "superframe") from None
    radio = RadioSpec(**_section(raw.get("radio"), _RADIO_FIELDS, "radio", ln("radio")))

    item_lines: dict[str, list[int]] = {}

    def items(key: str, spec: dict) -> list[dict]:
        rows = _list(raw.get(key), spec, key, ln(key))
        item_lines[key] = [line for _, line in rows]
        return [d for d, _ in rows]

    nodes = tuple(NodeSpec(**d) for d in items("nodes", _NODE_FIELDS))
    traffic = tuple(Flow(**d) for d in items("traffic", _TRAFFIC_FIELDS))
    requests = tuple(RequestSpec(**d) for d in items("gts_requests", _REQUEST_FIELDS))
    pds = tuple(RequestSpec(**d) for d in items("pds_grants", _REQUEST_FIELDS))
    shared = tuple(SharedSlotSpec(**d) for d in items("shared_slots", _SHARED_FIELDS))
    sgts = SgtsPolicy(**_section(raw.get("sgts"), _SGTS_FIELDS, "sgts", ln("sgts")))
    sweep = None
    if raw.get("sweep") is not None:
        sweep = SweepSpec(**_section(raw["sweep"], _SWEEP_FIELDS, "sweep", ln("sweep")))

    scenario = Scenario(config, radio, nodes, traffic, requests, pds, shared, sgts, sweep, seed, run_sf)
    _check_references(scenario, item_lines, ln)
    try:
        validate_topology(build_world(scenario))
    except TopologyInvalid as exc:
        raise ParseError(str(exc), ln("nodes"), "nodes") from None
    except (ScheduleError, ValueError) as exc:
        raise ParseError(str(exc), ln("nodes"), "nodes") from None
    return scenario


def _check_references(s: Scenario, item_lines: dict[str, list[int]], section_line) -> None:
    def at(section: str, i: int) -> int:
        rows = item_lines.get(section) or []
        return rows[i] if i < len(rows) else section_line(section)

    ids = [n.id for n in s.nodes]
    for i, nid in enumerate(ids):
        if nid in ids[:i]:
            raise ParseError(f"duplicate node id {nid}", at("nodes", i), f"nodes[{i}].id")
    known = set(ids)

    def need(node_id: int | None, where: str, line: int) -> None:
        if node_id is not None and node_id not in known:
            raise ParseError(f"undefined node id {node_id}", line, where)

    for i, n in enumerate(s.nodes):
        need(n.parent, f"nodes[{i}].parent", at("nodes", i))
    for i, f in enumerate(s.traffic):
        need(f.node, f"traffic[{i}].node", at("traffic", i))
        need(f.destination, f"traffic[{i}].destination", at("traffic", i))
    for name, reqs in (("gts_requests", s.gts_requests), ("pds_grants", s.pds_grants)):
        for i, r in enumerate(reqs):
            need(r.owner, f"{name}[{i}].owner", at(name, i))
            need(r.peer, f"{name}[{i}].peer", at(name, i))
    for i, sh in enumerate(s.shared_slots):
        for x in (*sh.first, *sh.second):
            need(x, f"shared_slots[{i}]", at("shared_slots", i))
    if s.sweep is not None:
        for tx, rx in s.sweep.links:
            need(tx, "sweep.links", section_line("sweep"))
            need(rx, "sweep.links", section_line("sweep"))


def scenario_to_dict(s: Scenario) -> dict:
    cfg = s.superframe
    out: dict[str, Any] = {
        "seed": s.seed,
        "run_superframes": s.run_superframes,
        "superframe": {
            "bo": cfg.bo, "so": cfg.so, "n_max": cfg.n_max,
            "slots": cfg.slots_per_superframe, "min_cap_slots": cfg.min_cap_slots,
        },
        "radio": asdict(s.radio),
        "nodes": [dict(asdict(n), position=list(n.position)) for n in s.nodes],
        "traffic": [asdict(f) for f in s.traffic],
        "gts_requests": [asdict(r) for r in s.gts_requests],
        "pds_grants": [asdict(r) for r in s.pds_grants],
        "shared_slots": [dict(asdict(x), first=list(x.first), second=list(x.second)) for x in s.shared_slots],
        "sgts": asdict(s.sgts),
    }
    if s.sweep is not None:
        d = asdict(s.sweep)
        d["links"] = [list(p) for p in s.sweep.links]
        d["measure_slots"] = list(s.sweep.measure_slots)
        out["sweep"] = d
    return out


def dump_scenario(s: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(s), sort_keys=False, default_flow_style=None)


def scenario_json(s: Scenario) -> str:
    """Single-line resolved config, embedded in trace and summary headers."""
    return json.dumps(scenario_to_dict(s), sort_keys=True, separators=(",", ":"))


BUNDLED = ("fig3.scenario", "fig7.scenario", "fig9.scenario")


def read_scenario_text(name: str) -> str:
    """Read a scenario from a path, falling back to the bundled files."""
    path = Path(name)
    if path.is_file():
        return path.read_text()
    if path.name in BUNDLED and not path.exists():
        return resources.files("sgtsmac.scenarios").joinpath(path.name).read_text()
    raise FileNotFoundError(name)


def load_scenario(name: str) -> Scenario:
    return parse_scenario(read_scenario_text(name))


# -- builders --------------------------------------------------------------------

def radio_environment(s: Scenario) -> RadioEnvironment:
    r = s.radio
    return RadioEnvironment(
        positions={n.id: n.position for n in s.nodes},
        reference_loss_db=r.reference_loss_db,
        reference_distance_m=r.reference_distance_m,
        path_loss_exponent=r.path_loss_exponent,
        shadowing_sigma_db=r.shadowing_sigma_db,
        noise_floor_dbm=r.noise_floor_dbm,
        sensitivity_dbm=r.sensitivity_dbm,
        capture_threshold_db=r.capture_threshold_db,
        tx_power_range=(r.tx_power_min_dbm, r.tx_power_max_dbm),
        bias_slope_db_per_us=r.bias_slope_db_per_us,
        bias_saturation_db=r.bias_saturation_db,
        max_clock_error_us=r.max_clock_error_us,
    )


def build_table(s: Scenario, include_requests: bool = True) -> ScheduleTable:
    """GBS for every coordinator, then PDS grants, shared slots and requests."""
    table = ScheduleTable.empty(s.superframe)
    for n in s.nodes:
        if n.role == Role.COORDINATOR.value:
            table, _ = allocate_gbs(table, n.id, n.gbs_slot)
    for r in s.pds_grants:
        table, _ = allocate_gts(table, r.to_request("pds"))
    for sh in s.shared_slots:
        first = SlotRequest(sh.first[0], sh.first[1], sh.level, slot=sh.slot, phase=sh.phase)
        table, a = allocate_gts(table, first)
        b = Allocation(sh.second[0], sh.second[1], sh.slot, sh.level, sh.phase)
        for sf in a.superframes(s.superframe.horizon):
            table.cells[(sf, sh.slot)] = Sgts(a, b)
    if include_requests:
        for r in s.gts_requests:
            table, _ = allocate_gts(table, r.to_request())
    return table


def build_world(s: Scenario) -> World:
    nodes = {
        n.id: NodeMachine(
            id=n.id,
            role=Role(n.role),
            parent=n.parent,
            clock_offset_us=n.clock_offset_us,
            tx_power_dbm=n.tx_power_dbm,
            mobile=n.mobile,
            sync_via_parent=n.sync_via_parent,
        )
        for n in s.nodes
    }
    return World(
        config=s.superframe,
        env=radio_environment(s),
        nodes=nodes,
        table=build_table(s, include_requests=False),
        seed=s.seed,
        flows=list(s.traffic),
        requests=[r.to_request() for r in s.gts_requests],
        sgts=s.sgts,
    )
