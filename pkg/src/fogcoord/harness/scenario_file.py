"""Scenario files: YAML text checked against a JSON Schema, then built into a Scenario.

Errors carry a location (``workload[3].key``) and, when the file is
available, the line number of the offending entry.
"""

from __future__ import annotations

import re
from pathlib import Path
from typing import Any

import jsonschema
import yaml

from ..errors import InvalidScenario
from ..scenario import (
    FaultEvent,
    NodeSpec,
    Scenario,
    Timers,
    Topology,
    WorkloadOp,
    ms,
)
from ..types import (
    CrdtKind,
    DataTypeDescriptor,
    Level,
    MachineId,
    Participation,
    ReadMode,
    Strategy,
)

SCHEMA_VERSION = 1

_MS = {"type": "number", "minimum": 0}
_NAME = {"type": "string", "minLength": 1}

SCHEMA: dict = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "fogcoord scenario",
    "type": "object",
    "required": ["schema_version", "topology"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "seed": {"type": "integer"},
        "duration_ms": _MS,
        "topology": {
            "type": "object",
            "required": ["nodes"],
            "additionalProperties": False,
            "properties": {
                "nodes": {
                    "type": "object",
                    "minProperties": 1,
                    "additionalProperties": {
                        "oneOf": [
                            {"type": "null"},
                            {
                                "type": "object",
                                "additionalProperties": False,
                                "properties": {
                                    "machines": {"type": "integer", "minimum": 1},
                                    "attributes": {"type": "array", "items": _NAME},
                                    "region": _NAME,
                                },
                            },
                        ]
                    },
                },
                "latency_ms": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "default": _MS,
                        "pairs": {"type": "array", "items": {
                            "type": "array", "minItems": 3, "maxItems": 3,
                            "items": [_NAME, _NAME, _MS]}},
                        "regions": {"type": "array", "items": {
                            "type": "array", "minItems": 3, "maxItems": 3,
                            "items": [_NAME, _NAME, _MS]}},
                    },
                },
                "intra_node_ms": _MS,
            },
        },
        "replica_sets": {
            "type": "object",
            "additionalProperties": {"type": "array", "items": _NAME, "minItems": 1},
        },
        "data_types": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["namespace", "strategy", "level"],
                "additionalProperties": False,
                "properties": {
                    "namespace": {"type": "string"},
                    "strategy": {"enum": ["eventual", "strict"]},
                    "level": {"oneOf": [
                        {"const": "system"},
                        {"type": "object", "required": ["replica_set"], "additionalProperties": False,
                         "properties": {"replica_set": _NAME}},
                        {"type": "object", "required": ["node"], "additionalProperties": False,
                         "properties": {"node": _NAME}},
                    ]},
                    "participation": {"oneOf": [
                        {"enum": ["all", "leader_follower"]},
                        {"type": "object", "required": ["subset"], "additionalProperties": False,
                         "properties": {"subset": _NAME}},
                        {"type": "object", "required": ["leader_follower"], "additionalProperties": False,
                         "properties": {"leader_follower": {
                             "type": "object", "additionalProperties": False,
                             "properties": {"pinned": {"type": "boolean"}}}}},
                    ]},
                    "crdt": {"enum": ["lww", "orset"]},
                    "read_mode": {"enum": ["local_cache", "leader_read", "read_quorum"]},
                },
            },
        },
        "timers": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gossip_interval_ms": {"type": "number", "exclusiveMinimum": 0},
                "gossip_fanout": {"type": "integer", "minimum": 1},
                "election_timeout_ms": {"type": "number", "exclusiveMinimum": 0},
                "broadcast_on_write": {"type": "boolean"},
            },
        },
        "faults": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["at_ms"],
                "additionalProperties": False,
                "minProperties": 2,
                "maxProperties": 2,
                "properties": {
                    "at_ms": _MS,
                    "partition": {"type": "array", "minItems": 1,
                                  "items": {"type": "array", "items": _NAME}},
                    "heal": {"type": "boolean"},
                    "crash": _NAME,
                    "restart": _NAME,
                    "loss": {"type": "number", "minimum": 0, "maximum": 1},
                },
            },
        },
        "workload": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["at_ms", "node", "op"],
                "additionalProperties": False,
                "properties": {
                    "id": _NAME,
                    "at_ms": _MS,
                    "node": _NAME,
                    "op": {"enum": ["write", "add", "remove", "read", "reconfigure"]},
                    "key": _NAME,
                    "value": {"type": ["string", "number"]},
                    "deadline_ms": {"type": "number", "exclusiveMinimum": 0},
                    "replica_set": _NAME,
                    "members": {"type": "array", "items": _NAME},
                },
            },
        },
    },
}


def _line_of(root: yaml.Node | None, path: list) -> int | None:
    """Line (1-based) of the deepest node along ``path`` in a composed YAML tree."""
    node = root
    line = node.start_mark.line + 1 if node is not None else None
    for part in path:
        nxt = None
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                if k.value == str(part):
                    nxt = v
                    break
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            nxt = node.value[part]
        if nxt is None:
            break
        node = nxt
        line = node.start_mark.line + 1
    return line


def _location_path(location: str) -> list:
    parts: list = []
    for token in re.findall(r"[^.\[\]]+|\[\d+\]", location):
        parts.append(int(token[1:-1]) if token.startswith("[") else token)
    return parts


def _format_path(path) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def _machines(token: str, nodes: dict) -> list[MachineId]:
    if "/" in token:
        return [MachineId.parse(token)]
    if token not in nodes:
        raise InvalidScenario("faults", f"unknown node {token!r}")
    return [MachineId(token, i) for i in range(nodes[token].machines)]


def _level(raw) -> Level:
    if raw == "system":
        return Level.system()
    if "replica_set" in raw:
        return Level.replica_set(raw["replica_set"])
    return Level.node(raw["node"])


def _participation(raw) -> Participation:
    if raw is None or raw == "all":
        return Participation.all_members()
    if raw == "leader_follower":
        return Participation.leader_follower()
    if "subset" in raw:
        return Participation.subset(raw["subset"])
    return Participation.leader_follower(bool((raw["leader_follower"] or {}).get("pinned", False)))


def _value(raw) -> bytes | None:
    if raw is None:
        return None
    return str(raw).encode("utf-8")


def build(doc: dict) -> Scenario:
    """Turn a schema-valid document into a validated Scenario."""
    t = doc["topology"]
    nodes = {}
    for n, spec in t["nodes"].items():
        spec = spec or {}
        nodes[str(n)] = NodeSpec(spec.get("machines", 1), frozenset(spec.get("attributes", ())), spec.get("region"))
    lat = t.get("latency_ms", {})
    pairs = {}
    for a, b, v in lat.get("pairs", ()):
        pairs[(a, b) if a <= b else (b, a)] = ms(v)
    regions = {}
    for a, b, v in lat.get("regions", ()):
        regions[(a, b) if a <= b else (b, a)] = ms(v)
    topo = Topology(nodes, ms(lat.get("default", 10)), pairs, regions, ms(t.get("intra_node_ms", 0.5)))

    data_types = []
    for i, raw in enumerate(doc.get("data_types", ())):
        strategy = Strategy(raw["strategy"])
        default_mode = "read_quorum" if strategy is Strategy.STRICT else "local_cache"
        crdt_raw = raw.get("crdt")
        try:
            d = DataTypeDescriptor(
                raw["namespace"], strategy, _level(raw["level"]), _participation(raw.get("participation")),
                CrdtKind(crdt_raw) if crdt_raw else None, ReadMode(raw.get("read_mode", default_mode)),
            )
            d.validate()
        except Exception as exc:
            field = getattr(exc, "field", None)
            loc = f"data_types[{i}]" + (f".{field}" if field else "")
            raise InvalidScenario(loc, str(exc)) from exc
        data_types.append(d)

    faults = []
    for i, raw in enumerate(doc.get("faults", ())):
        at = ms(raw["at_ms"])
        try:
            if "partition" in raw:
                groups = tuple(frozenset(m for tok in g for m in _machines(tok, nodes)) for g in raw["partition"])
                faults.append(FaultEvent(at, "partition", groups=groups))
            elif "heal" in raw:
                faults.append(FaultEvent(at, "heal"))
            elif "loss" in raw:
                faults.append(FaultEvent(at, "loss", probability=float(raw["loss"])))
            else:
                kind = "crash" if "crash" in raw else "restart"
                faults.append(FaultEvent(at, kind, machine=MachineId.parse(raw[kind])))
        except InvalidScenario as exc:
            raise InvalidScenario(f"faults[{i}]", exc.message) from exc
        except ValueError as exc:
            raise InvalidScenario(f"faults[{i}]", str(exc)) from exc

    workload = []
    for i, raw in enumerate(doc.get("workload", ())):
        workload.append(WorkloadOp(
            op_id=str(raw.get("id", f"op{i}")),
            at_us=ms(raw["at_ms"]),
            node=raw["node"],
            kind=raw["op"],
            key=raw.get("key"),
            value=_value(raw.get("value")),
            deadline_us=ms(raw.get("deadline_ms", 2000)),
            replica_set=raw.get("replica_set"),
            members=tuple(raw.get("members", ())),
        ))

    tm = doc.get("timers", {})
    timers = Timers(
        gossip_interval_us=ms(tm["gossip_interval_ms"]) if "gossip_interval_ms" in tm else None,
        gossip_fanout=tm.get("gossip_fanout", 2),
        election_timeout_us=ms(tm["election_timeout_ms"]) if "election_timeout_ms" in tm else None,
        broadcast_on_write=tm.get("broadcast_on_write", True),
    )
    sc = Scenario(
        topology=topo,
        data_types=tuple(data_types),
        replica_sets={r: frozenset(m) for r, m in doc.get("replica_sets", {}).items()},
        faults=tuple(faults),
        workload=tuple(workload),
        timers=timers,
        seed=doc.get("seed", 0),
        duration_us=ms(doc["duration_ms"]) if "duration_ms" in doc else None,
        name=doc.get("name", "scenario"),
        schema_version=doc["schema_version"],
    )
    sc.validate()
    return sc


def _with_line(exc: InvalidScenario, root) -> InvalidScenario:
    line = _line_of(root, _location_path(exc.location))
    if line is None:
        return exc
    return InvalidScenario(exc.location, exc.message, line)


def loads(text: str, name: str | None = None) -> Scenario:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise InvalidScenario("<file>", f"not valid YAML: {getattr(exc, 'problem', exc)}",
                              mark.line + 1 if mark else None) from exc
    if not isinstance(doc, dict):
        raise InvalidScenario("<root>", "a scenario is a mapping", 1)
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        path = list(err.absolute_path)
        raise InvalidScenario(_format_path(path), err.message, _line_of(root, path))
    if name and "name" not in doc:
        doc["name"] = name
    try:
        return build(doc)
    except InvalidScenario as exc:
        raise _with_line(exc, root) from exc


def load(path: str | Path) -> Scenario:
    path = Path(path)
    return loads(path.read_text(encoding="utf-8"), name=path.stem)


def dumps(doc: dict) -> str:
    return yaml.safe_dump(doc, sort_keys=False)


def as_document(sc: Scenario) -> dict[str, Any]:
    """Inverse of :func:`build` (up to defaults), for generated scenarios."""
    topo = sc.topology
    nodes = {}
    for n in topo.node_ids():
        s = topo.nodes[n]
        spec: dict = {}
        if s.machines != 1:
            spec["machines"] = s.machines
        if s.attributes:
            spec["attributes"] = sorted(s.attributes)
        if s.region:
            spec["region"] = s.region
        nodes[n] = spec or None
    lat: dict = {"default": topo.default_latency_us / 1000}
    if topo.pair_latency_us:
        lat["pairs"] = [[a, b, v / 1000] for (a, b), v in sorted(topo.pair_latency_us.items())]
    if topo.region_latency_us:
        lat["regions"] = [[a, b, v / 1000] for (a, b), v in sorted(topo.region_latency_us.items())]
    doc: dict = {"schema_version": SCHEMA_VERSION, "name": sc.name, "seed": sc.seed,
                 "topology": {"nodes": nodes, "latency_ms": lat, "intra_node_ms": topo.intra_node_us / 1000}}
    if sc.replica_sets:
        doc["replica_sets"] = {r: sorted(m) for r, m in sorted(sc.replica_sets.items())}
    dts = []
    for d in sc.data_types:
        lv = d.level
        raw: dict = {"namespace": d.namespace, "strategy": d.strategy.value,
                     "level": "system" if lv.kind == "system" else {lv.kind: lv.ref}}
        p = d.participation
        if p.kind == "subset":
            raw["participation"] = {"subset": p.predicate}
        elif p.kind == "leader_follower":
            raw["participation"] = {"leader_follower": {"pinned": True}} if p.pinned else "leader_follower"
        if d.crdt_kind is not None:
            raw["crdt"] = d.crdt_kind.value
        raw["read_mode"] = d.read_mode.value
        dts.append(raw)
    doc["data_types"] = dts
    tm = sc.timers
    timers: dict = {}
    if tm.gossip_interval_us is not None:
        timers["gossip_interval_ms"] = tm.gossip_interval_us / 1000
    if tm.gossip_fanout != 2:
        timers["gossip_fanout"] = tm.gossip_fanout
    if tm.election_timeout_us is not None:
        timers["election_timeout_ms"] = tm.election_timeout_us / 1000
    if not tm.broadcast_on_write:
        timers["broadcast_on_write"] = False
    if timers:
        doc["timers"] = timers
    faults = []
    for f in sc.faults:
        raw = {"at_ms": f.at_us / 1000}
        if f.kind == "partition":
            raw["partition"] = [sorted(str(m) for m in g) for g in f.groups]
        elif f.kind == "heal":
            raw["heal"] = True
        elif f.kind == "loss":
            raw["loss"] = f.probability
        else:
            raw[f.kind] = str(f.machine)
        faults.append(raw)
    if faults:
        doc["faults"] = faults
    ops = []
    for op in sc.workload:
        raw = {"id": op.op_id, "at_ms": op.at_us / 1000, "node": op.node, "op": op.kind}
        if op.key is not None:
            raw["key"] = op.key
        if op.value is not None:
            raw["value"] = op.value.decode("utf-8")
        raw["deadline_ms"] = op.deadline_us / 1000
        if op.kind == "reconfigure":
            raw["replica_set"] = op.replica_set
            raw["members"] = list(op.members)
        ops.append(raw)
    if ops:
        doc["workload"] = ops
    if sc.duration_us is not None:
        doc["duration_ms"] = sc.duration_us / 1000
    return doc
