"""Who participates: scope resolution, replica-set changes and node facades."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

from . import codec
from .errors import EmptySubset, InvalidChange, NodeDown, UnknownNode, UnknownReplicaSet
from .types import (
    MEMBERSHIP_NAMESPACE,
    Address,
    CoordinationKey,
    DataTypeDescriptor,
    MachineId,
    NodeId,
    address_key,
)


@dataclass(frozen=True)
class MembershipView:
    version: int
    system_nodes: frozenset
    replica_sets: Mapping[str, frozenset]
    node_machines: Mapping[NodeId, frozenset]
    node_attributes: Mapping[NodeId, frozenset] = field(default_factory=dict)

    def validate(self) -> None:
        for r, members in self.replica_sets.items():
            stray = set(members) - set(self.system_nodes)
            if stray:
                raise UnknownNode(f"replica set {r} names unknown nodes {sorted(stray)}")
        for n in self.system_nodes:
            if not self.node_machines.get(n):
                raise ValueError(f"node {n} has no machines")

    def with_replica_set(self, set_id: str, members: Iterable[NodeId]) -> "MembershipView":
        sets = dict(self.replica_sets)
        sets[set_id] = frozenset(members)
        return replace(self, version=self.version + 1, replica_sets=sets)

    def machines_of(self, node: NodeId) -> tuple:
        return tuple(sorted(self.node_machines.get(node, ())))


@dataclass(frozen=True)
class ParticipantSet:
    members: tuple
    leader: Address | None = None

    def __contains__(self, addr) -> bool:
        return addr in self.members

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)


def predicate_attribute(predicate: str) -> str:
    """``"cloud-only"`` selects nodes carrying the ``cloud`` attribute."""
    return predicate[:-5] if predicate.endswith("-only") else predicate


def resolve_members(view: MembershipView, d: DataTypeDescriptor) -> ParticipantSet:
    level = d.level
    if level.kind == "system":
        base: tuple = tuple(sorted(view.system_nodes))
    elif level.kind == "replica_set":
        if level.ref not in view.replica_sets:
            raise UnknownReplicaSet(level.ref)
        base = tuple(sorted(view.replica_sets[level.ref]))
    else:
        if level.ref not in view.node_machines:
            raise UnknownNode(level.ref)
        base = view.machines_of(level.ref)

    part = d.participation
    if part.kind == "subset":
        attr = predicate_attribute(part.predicate)

        def attrs(a: Address) -> frozenset:
            node = a.node if isinstance(a, MachineId) else a
            return view.node_attributes.get(node, frozenset())

        chosen = tuple(a for a in base if attr in attrs(a))
        if not chosen:
            raise EmptySubset(f"{part.predicate} selects nobody in {level.scope_id}")
        return ParticipantSet(chosen)
    if part.kind == "leader_follower":
        return ParticipantSet(base, min(base, key=address_key) if base else None)
    return ParticipantSet(base)


def membership_key(set_id: str) -> CoordinationKey:
    return CoordinationKey(f"{MEMBERSHIP_NAMESPACE}.replica_set", set_id)


def encode_members(members: Iterable[NodeId]) -> bytes:
    return codec.encode(tuple(sorted(members)))


def decode_members(raw: bytes) -> frozenset:
    return frozenset(codec.decode(raw))


def membership_update(key: str) -> str | None:
    """Replica-set id if ``key`` is a replica-set membership key."""
    ck = CoordinationKey.parse(key)
    if ck.namespace == f"{MEMBERSHIP_NAMESPACE}.replica_set":
        return ck.name
    return None


def plan_replica_set_change(view: MembershipView, set_id: str, new_members: Iterable[NodeId]) -> list[tuple]:
    """Single-member steps turning the current set into ``new_members``.

    Additions first in NodeId order, then removals in NodeId order. Each
    step is the full member tuple after that step.
    """
    new = frozenset(new_members)
    unknown = sorted(new - set(view.system_nodes))
    if unknown:
        raise UnknownNode(", ".join(unknown))
    if set_id not in view.replica_sets:
        raise UnknownReplicaSet(set_id)
    if not new:
        raise InvalidChange("a replica set cannot become empty")
    current = set(view.replica_sets[set_id])
    steps = []
    for n in sorted(new - current):
        current.add(n)
        steps.append(tuple(sorted(current)))
    for n in sorted(current - new):
        current.discard(n)
        steps.append(tuple(sorted(current)))
    return steps


def node_facade_route(view: MembershipView, target: NodeId, alive: Iterable[MachineId],
                      leader: MachineId | None = None) -> MachineId:
    """Machine currently answering for fog node ``target``.

    The facade leader while it is up; otherwise the next live machine after
    it in MachineId order (the one that wins the node-level re-election).
    """
    machines = view.machines_of(target)
    if not machines:
        raise UnknownNode(target)
    live = set(alive)
    up = [m for m in machines if m in live]
    if not up:
        raise NodeDown(target)
    if leader is None:
        leader = machines[0]
    if leader in live:
        return leader
    after = [m for m in up if m > leader]
    return after[0] if after else up[0]
