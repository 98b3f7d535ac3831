"""State-based CRDTs backing the eventual strategy.

Two kinds are provided: a last-writer-wins register and an observed-remove
set. Both are immutable values; every operation returns a new state.

Example::

    s, _ = update_local(None, AddElement(b"a"), "n1", LamportStamp(1, "n1"))
    s, _ = update_local(s, AddElement(b"b"), "n1", LamportStamp(2, "n1"))
    s, _ = update_local(s, RemoveElement(b"a"), "n1", LamportStamp(3, "n1"))
    assert query(s) == frozenset({b"b"})
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Union

from . import codec
from .errors import KindMismatch
from .types import CrdtKind, NodeId


@codec.register
@dataclass(frozen=True, order=True)
class LamportStamp:
    counter: int
    origin: NodeId

    def __post_init__(self):
        if self.counter < 0:
            raise ValueError("counter must be non-negative")


@codec.register
@dataclass(frozen=True, order=True)
class Tag:
    """Unique add-tag: origin plus that origin's monotone counter."""

    origin: NodeId
    counter: int


@codec.register
@dataclass(frozen=True)
class LwwRegister:
    value: bytes
    stamp: LamportStamp

    kind = CrdtKind.LWW_REGISTER


@codec.register
@dataclass(frozen=True)
class OrSet:
    entries: Mapping[bytes, frozenset] = field(default_factory=dict)
    tombstones: frozenset = frozenset()

    kind = CrdtKind.OR_SET

    def __post_init__(self):
        # Canonical form: no element without tags.
        clean = {e: frozenset(t) for e, t in self.entries.items() if t}
        if len(clean) != len(self.entries) or any(not isinstance(t, frozenset) for t in self.entries.values()):
            object.__setattr__(self, "entries", clean)
        if not isinstance(self.tombstones, frozenset):
            object.__setattr__(self, "tombstones", frozenset(self.tombstones))

    def present(self) -> frozenset:
        return frozenset(e for e, tags in self.entries.items() if not tags <= self.tombstones)

    def tags(self) -> frozenset:
        out: set = set(self.tombstones)
        for t in self.entries.values():
            out |= t
        return frozenset(out)

    def max_counter(self) -> int:
        return max((t.counter for t in self.tags()), default=0)


CrdtValue = Union[LwwRegister, OrSet]


@dataclass(frozen=True)
class SetValue:
    value: bytes


@dataclass(frozen=True)
class AddElement:
    element: bytes


@dataclass(frozen=True)
class RemoveElement:
    element: bytes


LocalOp = Union[SetValue, AddElement, RemoveElement]


def kind_of(state: CrdtValue) -> CrdtKind:
    return state.kind


def empty(kind: CrdtKind) -> CrdtValue | None:
    """Initial state; a register has no value until first written."""
    return OrSet() if kind is CrdtKind.OR_SET else None


def _op_kind(op: LocalOp) -> CrdtKind:
    return CrdtKind.LWW_REGISTER if isinstance(op, SetValue) else CrdtKind.OR_SET


def update_local(state: CrdtValue | None, op: LocalOp, at: NodeId, clock: LamportStamp) -> tuple[CrdtValue, CrdtValue]:
    """Apply a local operation; returns ``(new_state, delta)``.

    The delta is the full new state (no delta-state optimisation).
    """
    want = _op_kind(op)
    if state is not None and state.kind is not want:
        raise KindMismatch(f"{type(op).__name__} on {state.kind.value}")
    if isinstance(op, SetValue):
        new: CrdtValue = LwwRegister(bytes(op.value), LamportStamp(clock.counter, at))
        if state is not None:
            new = merge(state, new)
        return new, new
    cur = state if state is not None else OrSet()
    if isinstance(op, AddElement):
        tag = Tag(at, clock.counter)
        entries = dict(cur.entries)
        entries[op.element] = entries.get(op.element, frozenset()) | {tag}
        new = OrSet(entries, cur.tombstones)
        return new, new
    observed = cur.entries.get(op.element, frozenset())
    if observed <= cur.tombstones:
        return cur, cur
    new = OrSet(dict(cur.entries), cur.tombstones | observed)
    return new, new


def merge(a: CrdtValue, b: CrdtValue) -> CrdtValue:
    """Least upper bound of two states of the same kind."""
    if a.kind is not b.kind:
        raise KindMismatch(f"{a.kind.value} vs {b.kind.value}")
    if isinstance(a, LwwRegister):
        if a.stamp == b.stamp and a.value != b.value:
            # Same stamp must mean same write; keep the larger payload so the
            # result stays order-independent even for malformed input.
            return a if a.value > b.value else b
        return a if a.stamp >= b.stamp else b
    entries = dict(a.entries)
    for e, tags in b.entries.items():
        entries[e] = entries.get(e, frozenset()) | tags
    return OrSet(entries, a.tombstones | b.tombstones)


def query(state: CrdtValue | None):
    """Register -> its value; set -> frozenset of present elements."""
    if state is None:
        return None
    if isinstance(state, LwwRegister):
        return state.value
    return state.present()


def max_counter(state: CrdtValue | None) -> int:
    if state is None:
        return 0
    if isinstance(state, LwwRegister):
        return state.stamp.counter
    return state.max_counter()


def covers(state: CrdtValue | None, write) -> bool:
    """True when ``state`` has observed the write identified by ``write``.

    ``write`` is the LamportStamp of a register write or the Tag set touched
    by a set operation.
    """
    if state is None:
        return False
    if isinstance(state, LwwRegister):
        return state.stamp >= write
    return write <= state.tags()


_KIND_BYTE = {CrdtKind.LWW_REGISTER: b"L", CrdtKind.OR_SET: b"O"}


def encode(state: CrdtValue) -> bytes:
    """Canonical bytes: one kind byte, then the sorted field encoding."""
    if isinstance(state, LwwRegister):
        body = codec.encode((state.value, state.stamp.counter, state.stamp.origin))
    else:
        body = codec.encode((
            {e: frozenset((t.origin, t.counter) for t in tags) for e, tags in state.entries.items()},
            frozenset((t.origin, t.counter) for t in state.tombstones),
        ))
    return _KIND_BYTE[state.kind] + body


def decode(data: bytes) -> CrdtValue:
    kind, body = data[:1], codec.decode(data[1:])
    if kind == b"L":
        value, counter, origin = body
        return LwwRegister(value, LamportStamp(counter, origin))
    if kind == b"O":
        entries, tombstones = body
        return OrSet(
            {e: frozenset(Tag(o, c) for o, c in tags) for e, tags in entries.items()},
            frozenset(Tag(o, c) for o, c in tombstones),
        )
    raise ValueError(f"unknown CRDT kind byte {kind!r}")


# Long-form aliases.
crdt_update_local = update_local
crdt_merge = merge
crdt_query = query
