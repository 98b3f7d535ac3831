"""Identities, keys and the per-namespace coordination configuration.

Node identifiers are plain strings compared lexicographically; that order is
the single tie-break authority for LWW conflicts and leader designation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

from .errors import DuplicateNamespace, InvalidDescriptor, NoDescriptor

NodeId = str

MEMBERSHIP_NAMESPACE = "sys.membership"


@dataclass(frozen=True, order=True)
class MachineId:
    node: NodeId
    index: int

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("machine index must be non-negative")

    def __str__(self) -> str:
        return f"{self.node}/{self.index}"

    @classmethod
    def parse(cls, text: str) -> "MachineId":
        node, sep, index = text.rpartition("/")
        if not sep or not node:
            raise ValueError(f"not a machine id: {text!r}")
        return cls(node, int(index))


# A protocol endpoint is either a whole fog node or one of its machines.
Address = Union[NodeId, MachineId]


def address_str(addr: Address) -> str:
    return str(addr)


def address_key(addr: Address) -> tuple:
    """Total order across node and machine addresses."""
    if isinstance(addr, MachineId):
        return (addr.node, addr.index)
    return (addr, -1)


@dataclass(frozen=True, order=True)
class CoordinationKey:
    namespace: str
    name: str

    def __str__(self) -> str:
        return f"{self.namespace}/{self.name}"

    @classmethod
    def parse(cls, text: str) -> "CoordinationKey":
        namespace, sep, name = text.rpartition("/")
        if not sep:
            raise ValueError(f"key must look like 'namespace/name': {text!r}")
        return cls(namespace, name)


class Strategy(str, enum.Enum):
    EVENTUAL = "eventual"
    STRICT = "strict"


class CrdtKind(str, enum.Enum):
    LWW_REGISTER = "lww"
    OR_SET = "orset"


class ReadMode(str, enum.Enum):
    LOCAL_CACHE = "local_cache"
    LEADER_READ = "leader_read"
    READ_QUORUM = "read_quorum"


@dataclass(frozen=True)
class Level:
    kind: str  # "system" | "replica_set" | "node"
    ref: str | None = None

    def __post_init__(self):
        if self.kind == "system":
            if self.ref is not None:
                raise ValueError("system level carries no reference")
        elif self.kind in ("replica_set", "node"):
            if not self.ref:
                raise ValueError(f"{self.kind} level needs an identifier")
        else:
            raise ValueError(f"unknown level {self.kind!r}")

    @classmethod
    def system(cls) -> "Level":
        return cls("system")

    @classmethod
    def replica_set(cls, set_id: str) -> "Level":
        return cls("replica_set", set_id)

    @classmethod
    def node(cls, node: NodeId) -> "Level":
        return cls("node", node)

    @property
    def scope_id(self) -> str:
        if self.kind == "system":
            return "system"
        prefix = "rs" if self.kind == "replica_set" else "node"
        return f"{prefix}:{self.ref}"

    def __str__(self) -> str:
        return self.scope_id


@dataclass(frozen=True)
class Participation:
    kind: str = "all"  # "all" | "subset" | "leader_follower"
    predicate: str | None = None
    # Leader-follower with elections disabled: the primary-copy approach.
    pinned: bool = False

    def __post_init__(self):
        if self.kind not in ("all", "subset", "leader_follower"):
            raise ValueError(f"unknown participation {self.kind!r}")
        if self.kind == "subset" and not self.predicate:
            raise ValueError("subset participation needs a predicate name")
        if self.pinned and self.kind != "leader_follower":
            raise ValueError("only leader_follower participation can be pinned")

    @classmethod
    def all_members(cls) -> "Participation":
        return cls("all")

    @classmethod
    def subset(cls, predicate: str) -> "Participation":
        return cls("subset", predicate)

    @classmethod
    def leader_follower(cls, pinned: bool = False) -> "Participation":
        return cls("leader_follower", pinned=pinned)


def normalize_namespace(namespace: str) -> str:
    """``"acl.*"`` and ``"acl"`` name the same namespace; ``"*"`` is the root."""
    ns = namespace.strip()
    if ns in ("*", ".*"):
        return ""
    if ns.endswith(".*"):
        ns = ns[:-2]
    return ns


def namespace_covers(namespace: str, key_namespace: str) -> bool:
    if namespace == "":
        return True
    return key_namespace == namespace or key_namespace.startswith(namespace + ".")


@dataclass(frozen=True)
class DataTypeDescriptor:
    namespace: str
    strategy: Strategy
    level: Level
    participation: Participation = field(default_factory=Participation)
    crdt_kind: CrdtKind | None = None
    read_mode: ReadMode = ReadMode.LOCAL_CACHE

    def validate(self) -> None:
        """Raise InvalidDescriptor naming the offending field."""
        if self.strategy is Strategy.EVENTUAL:
            if self.crdt_kind is None:
                raise InvalidDescriptor("crdt_kind", "required for eventual strategy")
            if self.read_mode is not ReadMode.LOCAL_CACHE:
                raise InvalidDescriptor("read_mode", "eventual data is read from the local cache only")
        else:
            if self.crdt_kind is not None:
                raise InvalidDescriptor("crdt_kind", "only eventual data types carry a CRDT kind")
        if not isinstance(self.level, Level):
            raise InvalidDescriptor("level", "not a Level")
        if not isinstance(self.participation, Participation):
            raise InvalidDescriptor("participation", "not a Participation")

    @property
    def group_id(self) -> str:
        return f"{self.namespace}@{self.level.scope_id}"


MEMBERSHIP_DESCRIPTOR = DataTypeDescriptor(
    namespace=MEMBERSHIP_NAMESPACE,
    strategy=Strategy.STRICT,
    level=Level.system(),
    participation=Participation.all_members(),
    read_mode=ReadMode.READ_QUORUM,
)


class DescriptorRegistry:
    """Namespace -> descriptor table with longest-prefix lookup.

    Registries are values: ``register`` returns a new registry and leaves the
    receiver untouched.
    """

    def __init__(self, descriptors: Iterable[DataTypeDescriptor] = ()):
        self._by_ns: dict[str, DataTypeDescriptor] = {}
        for d in descriptors:
            self._add(d)

    @classmethod
    def bootstrap(cls) -> "DescriptorRegistry":
        """Registry pre-loaded with the hardwired membership descriptor."""
        reg = cls()
        reg._by_ns[MEMBERSHIP_NAMESPACE] = MEMBERSHIP_DESCRIPTOR
        return reg

    def _add(self, d: DataTypeDescriptor) -> None:
        d.validate()
        ns = normalize_namespace(d.namespace)
        if ns != d.namespace:
            d = DataTypeDescriptor(ns, d.strategy, d.level, d.participation, d.crdt_kind, d.read_mode)
        if ns in self._by_ns:
            raise DuplicateNamespace(ns or "<root>")
        if namespace_covers(MEMBERSHIP_NAMESPACE, ns) and MEMBERSHIP_NAMESPACE in self._by_ns:
            raise InvalidDescriptor("namespace", f"{ns!r} is reserved for membership data")
        self._by_ns[ns] = d

    def register(self, d: DataTypeDescriptor) -> "DescriptorRegistry":
        new = DescriptorRegistry()
        new._by_ns = dict(self._by_ns)
        new._add(d)
        return new

    def lookup(self, key: CoordinationKey) -> DataTypeDescriptor:
        best: str | None = None
        for ns in self._by_ns:
            if namespace_covers(ns, key.namespace) and (best is None or len(ns) > len(best)):
                best = ns
        if best is None:
            raise NoDescriptor(str(key))
        return self._by_ns[best]

    def descriptors(self) -> list[DataTypeDescriptor]:
        return [self._by_ns[ns] for ns in sorted(self._by_ns)]

    def __contains__(self, namespace: str) -> bool:
        return normalize_namespace(namespace) in self._by_ns

    def __len__(self) -> int:
        return len(self._by_ns)

    def as_mapping(self) -> Mapping[str, DataTypeDescriptor]:
        return dict(self._by_ns)


def register_descriptor(registry: DescriptorRegistry, d: DataTypeDescriptor) -> DescriptorRegistry:
    return registry.register(d)


def lookup_descriptor(registry: DescriptorRegistry, key: CoordinationKey) -> DataTypeDescriptor:
    return registry.lookup(key)
