"""In-memory scenario model: topology, data types, faults, workload, timers.

Times are integer microseconds throughout. File parsing lives in
:mod:`fogcoord.harness.scenario_file`; this module only holds the validated
structure and its invariants.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from .errors import FogCoordError, InvalidScenario, NoDescriptor
from .membership import MembershipView, resolve_members
from .types import (
    MEMBERSHIP_NAMESPACE,
    CoordinationKey,
    CrdtKind,
    DataTypeDescriptor,
    DescriptorRegistry,
    MachineId,
    NodeId,
    Strategy,
)

US_PER_MS = 1000


def ms(value: float) -> int:
    """Milliseconds to integer microseconds."""
    return int(round(value * US_PER_MS))


@dataclass(frozen=True)
class NodeSpec:
    machines: int = 1
    attributes: frozenset = frozenset()
    region: str | None = None


@dataclass(frozen=True)
class Topology:
    nodes: Mapping[NodeId, NodeSpec]
    default_latency_us: int = 10_000
    pair_latency_us: Mapping[tuple, int] = field(default_factory=dict)
    region_latency_us: Mapping[tuple, int] = field(default_factory=dict)
    intra_node_us: int = 500

    def node_ids(self) -> list[NodeId]:
        return sorted(self.nodes)

    def machines(self) -> list[MachineId]:
        return [MachineId(n, i) for n in self.node_ids() for i in range(self.nodes[n].machines)]

    def node_latency(self, a: NodeId, b: NodeId) -> int:
        if a == b:
            return 0
        pair = (a, b) if a <= b else (b, a)
        if pair in self.pair_latency_us:
            return self.pair_latency_us[pair]
        ra, rb = self.nodes[a].region, self.nodes[b].region
        if ra is not None and rb is not None:
            rpair = (ra, rb) if ra <= rb else (rb, ra)
            if rpair in self.region_latency_us:
                return self.region_latency_us[rpair]
        return self.default_latency_us

    def latency(self, a: MachineId, b: MachineId) -> int:
        if a == b:
            return 0
        if a.node == b.node:
            return self.intra_node_us
        return self.node_latency(a.node, b.node)

    def validate(self) -> None:
        if not self.nodes:
            raise InvalidScenario("topology.nodes", "at least one node is required")
        for n, spec in self.nodes.items():
            if spec.machines < 1:
                raise InvalidScenario(f"topology.nodes.{n}.machines", "every node needs at least one machine")
        for pair, lat in self.pair_latency_us.items():
            for n in pair:
                if n not in self.nodes:
                    raise InvalidScenario("topology.latency_ms.pairs", f"unknown node {n!r}")
            if lat < 0:
                raise InvalidScenario("topology.latency_ms.pairs", "latency must be >= 0")
        if self.default_latency_us < 0 or self.intra_node_us < 0:
            raise InvalidScenario("topology.latency_ms", "latency must be >= 0")
        if any(v < 0 for v in self.region_latency_us.values()):
            raise InvalidScenario("topology.latency_ms.regions", "latency must be >= 0")

    def scaled(self, factor: float) -> "Topology":
        return Topology(
            dict(self.nodes),
            int(round(self.default_latency_us * factor)),
            {k: int(round(v * factor)) for k, v in self.pair_latency_us.items()},
            {k: int(round(v * factor)) for k, v in self.region_latency_us.items()},
            self.intra_node_us,
        )


@dataclass(frozen=True)
class FaultEvent:
    at_us: int
    kind: str  # partition | heal | crash | restart | loss
    groups: tuple = ()  # partition: tuple of frozenset[MachineId]
    machine: MachineId | None = None
    probability: float = 0.0


@dataclass(frozen=True)
class WorkloadOp:
    op_id: str
    at_us: int
    node: NodeId
    kind: str  # write | add | remove | read | reconfigure
    key: str | None = None
    value: bytes | None = None
    deadline_us: int = 2_000_000
    replica_set: str | None = None
    members: tuple = ()


@dataclass(frozen=True)
class Timers:
    gossip_interval_us: int | None = None
    gossip_fanout: int = 2
    election_timeout_us: int | None = None
    broadcast_on_write: bool = True


@dataclass(frozen=True)
class Scenario:
    topology: Topology
    data_types: tuple = ()
    replica_sets: Mapping[str, frozenset] = field(default_factory=dict)
    faults: tuple = ()
    workload: tuple = ()
    timers: Timers = field(default_factory=Timers)
    seed: int = 0
    duration_us: int | None = None
    name: str = "scenario"
    schema_version: int = 1

    def registry(self) -> DescriptorRegistry:
        reg = DescriptorRegistry.bootstrap()
        for i, d in enumerate(self.data_types):
            try:
                reg = reg.register(d)
            except FogCoordError as exc:
                raise InvalidScenario(f"data_types[{i}]", str(exc)) from exc
        return reg

    def initial_view(self) -> MembershipView:
        topo = self.topology
        return MembershipView(
            version=0,
            system_nodes=frozenset(topo.nodes),
            replica_sets={r: frozenset(m) for r, m in self.replica_sets.items()},
            node_machines={n: frozenset(MachineId(n, i) for i in range(s.machines)) for n, s in topo.nodes.items()},
            node_attributes={n: frozenset(s.attributes) for n, s in topo.nodes.items()},
        )

    def uses_membership(self) -> bool:
        return any(op.kind == "reconfigure" or (op.key or "").startswith(MEMBERSHIP_NAMESPACE + ".")
                   for op in self.workload)

    def validate(self) -> DescriptorRegistry:
        """Check every invariant; returns the descriptor registry."""
        topo = self.topology
        topo.validate()
        for r, members in self.replica_sets.items():
            stray = sorted(set(members) - set(topo.nodes))
            if stray:
                raise InvalidScenario(f"replica_sets.{r}", f"unknown nodes {stray}")
            if not members:
                raise InvalidScenario(f"replica_sets.{r}", "a replica set needs members")
        reg = self.registry()
        view = self.initial_view()
        for i, d in enumerate(self.data_types):
            try:
                resolve_members(view, d)
            except FogCoordError as exc:
                raise InvalidScenario(f"data_types[{i}]", f"{type(exc).__name__}: {exc}") from exc
        machines = set(topo.machines())
        last = -1
        for i, f in enumerate(self.faults):
            loc = f"faults[{i}]"
            if f.at_us < last:
                raise InvalidScenario(loc, "fault events must be sorted by time")
            last = f.at_us
            if f.kind == "partition":
                seen: set = set()
                for g in f.groups:
                    if seen & set(g):
                        raise InvalidScenario(loc, "partition groups must be disjoint")
                    seen |= set(g)
                if seen != machines:
                    missing = sorted(str(m) for m in machines - seen)
                    extra = sorted(str(m) for m in seen - machines)
                    raise InvalidScenario(loc, f"partition must cover every machine exactly (missing {missing}, unknown {extra})")
            elif f.kind in ("crash", "restart"):
                if f.machine not in machines:
                    raise InvalidScenario(loc, f"unknown machine {f.machine}")
            elif f.kind == "loss":
                if not 0.0 <= f.probability <= 1.0:
                    raise InvalidScenario(loc, "loss probability must be within [0, 1]")
            elif f.kind != "heal":
                raise InvalidScenario(loc, f"unknown fault kind {f.kind!r}")
        ids = set()
        for i, op in enumerate(self.workload):
            loc = f"workload[{i}]"
            if op.op_id in ids:
                raise InvalidScenario(loc, f"duplicate op id {op.op_id!r}")
            ids.add(op.op_id)
            if op.node not in topo.nodes:
                raise InvalidScenario(loc, f"unknown node {op.node!r}")
            if op.at_us < 0 or op.deadline_us <= 0:
                raise InvalidScenario(loc, "times must be non-negative and deadlines positive")
            if op.kind == "reconfigure":
                if op.replica_set not in self.replica_sets:
                    raise InvalidScenario(loc, f"unknown replica set {op.replica_set!r}")
                continue
            if op.kind not in ("write", "add", "remove", "read"):
                raise InvalidScenario(loc, f"unknown op {op.kind!r}")
            try:
                key = CoordinationKey.parse(op.key or "")
                d = reg.lookup(key)
            except (NoDescriptor, ValueError) as exc:
                raise InvalidScenario(loc, f"key {op.key!r} has no declared data type") from exc
            if op.kind != "read":
                if op.value is None:
                    raise InvalidScenario(loc, f"{op.kind} needs a value")
                if d.strategy is Strategy.STRICT and op.kind != "write":
                    raise InvalidScenario(loc, f"strict key {op.key!r} only supports write/read")
                if d.crdt_kind is CrdtKind.LWW_REGISTER and op.kind != "write":
                    raise InvalidScenario(loc, f"register key {op.key!r} only supports write/read")
                if d.crdt_kind is CrdtKind.OR_SET and op.kind == "write":
                    raise InvalidScenario(loc, f"set key {op.key!r} supports add/remove/read")
        if self.timers.gossip_fanout < 1:
            raise InvalidScenario("timers.gossip_fanout", "must be positive")
        return reg

    def descriptor_list(self) -> list[DataTypeDescriptor]:
        return list(self.data_types)
