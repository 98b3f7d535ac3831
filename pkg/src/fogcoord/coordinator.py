"""The coordination middleware endpoint.

A :class:`Participant` is the middleware instance answering for one address:
a fog node (system and replica-set data, hosted on the node's facade
machine) or a single machine (node-level data). It routes each application
operation by the key's descriptor: eventual keys go through the CRDT cache
and are disseminated immediately plus by periodic push-pull gossip; strict
keys go through the consensus group of the key's scope.

All entry points are ``f(..., now) -> list[effect]``; nothing is sent or
scheduled behind the caller's back, which keeps runs replayable.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable

from . import codec, crdt
from .consensus import (
    AppendEntries,
    Applied,
    BecameLeader,
    Done,
    GroupConfig,
    Replica,
    Result,
    Send,
    SteppedDown,
    majority,
)
from .errors import EmptySubset, InvalidChange, NoDescriptor, UnknownNode, UnknownReplicaSet
from .membership import (
    MembershipView,
    ParticipantSet,
    decode_members,
    encode_members,
    membership_key,
    membership_update,
    plan_replica_set_change,
    resolve_members,
)
from .types import (
    MEMBERSHIP_DESCRIPTOR,
    Address,
    CoordinationKey,
    CrdtKind,
    DataTypeDescriptor,
    DescriptorRegistry,
    MachineId,
    ReadMode,
    Strategy,
    address_key,
)

# -- wire --------------------------------------------------------------------


@codec.register
@dataclass(frozen=True)
class Update:
    """Immediate full-state dissemination of one eventual key."""

    key: str
    state: bytes


@codec.register
@dataclass(frozen=True)
class StateExchange:
    """Push-pull gossip. ``reply`` marks the pull half."""

    states: tuple  # ((key, encoded state), ...) sorted by key
    reply: bool = False


@codec.register
@dataclass(frozen=True)
class Forward:
    token: str
    request: tuple  # ("propose", key, value) | ("read", key, mode) | ("reconfigure", members)


@codec.register
@dataclass(frozen=True)
class ForwardReply:
    token: str
    result: Result


@codec.register
@dataclass(frozen=True)
class Envelope:
    src: Any
    dst: Any
    scope: str
    namespace: str
    body: Any

    @property
    def msg_kind(self) -> str:
        if isinstance(self.body, StateExchange):
            return "StateReply" if self.body.reply else "StateExchange"
        return type(self.body).__name__

    @property
    def key(self) -> str:
        return getattr(self.body, "key", "") or ""

    def size(self) -> int:
        return len(codec.encode(self))


# -- effects -----------------------------------------------------------------


@dataclass(frozen=True)
class Outbound:
    env: Envelope


@dataclass(frozen=True)
class Wake:
    at: int
    timer: tuple


@dataclass(frozen=True)
class Complete:
    op_id: str
    result: Result


@dataclass(frozen=True)
class Record:
    """Observation for the trace and the run's observers."""

    kind: str
    key: str = ""
    fields: dict = field(default_factory=dict)


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class GossipConfig:
    interval_us: int
    fanout: int = 2
    broadcast_on_write: bool = True

    def __post_init__(self):
        if self.interval_us <= 0:
            raise ValueError("gossip interval must be positive")
        if self.fanout < 1:
            raise ValueError("fanout must be positive")


@dataclass
class Context:
    """Read-only environment a participant is built with."""

    registry: DescriptorRegistry
    initial_view: MembershipView
    seed: int
    gossip: Callable[[DataTypeDescriptor], GossipConfig]
    election_timeout_us: Callable[[tuple], int]
    quorum: Callable[[int], int] = majority
    membership_active: bool = False
    # scope check: (descriptor namespace, scope id, destination) -> allowed
    authority: Callable[[str, str, Address], bool] | None = None


@dataclass(frozen=True)
class ClientOp:
    op_id: str
    kind: str  # write | add | remove | read | reconfigure
    key: str | None = None
    value: bytes | None = None
    deadline_us: int = 1_000_000
    replica_set: str | None = None
    members: tuple = ()


@dataclass
class _Pending:
    op: ClientOp
    started: int
    deadline: int
    gid: str | None = None
    request: tuple = ()
    via: Address | None = None
    # membership change bookkeeping
    steps: list = field(default_factory=list)
    phase: int = 0


class ViewBox:
    """Mutable holder so a node's machines share its membership view."""

    def __init__(self, view: MembershipView):
        self.view = view
        self.history = [view]

    def apply(self, set_id: str, members: frozenset) -> MembershipView:
        self.view = self.view.with_replica_set(set_id, members)
        self.history.append(self.view)
        return self.view


def value_digest(value: bytes | None) -> str:
    if value is None:
        return ""
    return hashlib.sha256(value).hexdigest()[:16]


class Participant:
    def __init__(self, address: Address, ctx: Context, views: ViewBox):
        self.address = address
        self.ctx = ctx
        self.views = views
        self.origin = str(address)
        self.is_machine = isinstance(address, MachineId)
        self.rng = random.Random(f"{ctx.seed}|gossip|{address}")
        # durable
        self.cache: dict[str, crdt.CrdtValue] = {}
        self.clock = 0
        self.replicas: dict[str, Replica] = {}
        self._scopes: dict[str, tuple[str, str]] = {}  # gid -> (namespace, scope)
        # volatile
        self.strict_applied: dict[str, tuple[bytes, int, int]] = {}
        self._reset_volatile()

    def _reset_volatile(self) -> None:
        self.epoch = getattr(self, "epoch", 0) + 1
        self.pending: dict[str, _Pending] = {}
        self._scheduled: dict[tuple, int] = {}
        self._enc: dict[str, bytes] = {}
        self.strict_applied = {}

    # -- descriptor helpers -------------------------------------------------

    @property
    def view(self) -> MembershipView:
        return self.views.view

    def _descriptor(self, key: str) -> DataTypeDescriptor:
        return self.ctx.registry.lookup(CoordinationKey.parse(key))

    def _mine(self, d: DataTypeDescriptor) -> bool:
        """Whether ``d``'s level can ever involve this kind of address."""
        if d.level.kind == "node":
            return self.is_machine and self.address.node == d.level.ref
        return not self.is_machine

    def _participants(self, d: DataTypeDescriptor) -> ParticipantSet:
        try:
            return resolve_members(self.view, d)
        except (UnknownReplicaSet, UnknownNode, EmptySubset):
            return ParticipantSet(())

    def _strict_descriptors(self) -> list[DataTypeDescriptor]:
        out = [d for d in self.ctx.registry.descriptors() if d.strategy is Strategy.STRICT and self._mine(d)]
        if not self.ctx.membership_active:
            out = [d for d in out if d is not MEMBERSHIP_DESCRIPTOR and d.namespace != MEMBERSHIP_DESCRIPTOR.namespace]
        return out

    def _eventual_descriptors(self) -> list[DataTypeDescriptor]:
        return [d for d in self.ctx.registry.descriptors() if d.strategy is Strategy.EVENTUAL and self._mine(d)]

    def _group_config(self, d: DataTypeDescriptor, members: tuple, leader) -> GroupConfig:
        pinned = d.participation.kind == "leader_follower" and d.participation.pinned
        return GroupConfig(
            election_timeout_us=self.ctx.election_timeout_us(members),
            designated_leader=leader,
            pinned=pinned,
            quorum=self.ctx.quorum,
        )

    def _make_replica(self, gid: str, ns: str, scope: str, members: tuple, cfg: GroupConfig, now: int) -> Replica:
        rng = random.Random(f"{self.ctx.seed}|{gid}|{self.address}")
        rep = Replica(gid, self.address, members, cfg, rng, now=now)
        self.replicas[gid] = rep
        self._scopes[gid] = (ns, scope)
        return rep

    def _ensure_replica(self, d: DataTypeDescriptor, now: int) -> Replica | None:
        gid = d.group_id
        if gid in self.replicas:
            return self.replicas[gid]
        try:
            initial = resolve_members(self.ctx.initial_view, d)
        except (UnknownReplicaSet, UnknownNode, EmptySubset):
            return None
        return self._make_replica(gid, d.namespace, d.level.scope_id, initial.members,
                                  self._group_config(d, initial.members, initial.leader), now)

    # -- lifecycle ------------------------------------------------------------

    def start(self, now: int) -> list:
        out: list = []
        for d in self._strict_descriptors():
            if self.address in self._participants(d) and self.address in self._initial_members(d):
                self._ensure_replica(d, now)
        if self.is_machine:
            machines = self.view.machines_of(self.address.node)
            if len(machines) > 1:
                gid = f"facade@node:{self.address.node}"
                cfg = GroupConfig(self.ctx.election_timeout_us(machines), designated_leader=machines[0],
                                  quorum=self.ctx.quorum)
                self._make_replica(gid, "facade", f"node:{self.address.node}", machines, cfg, now)
        for gid in list(self.replicas):
            out.extend(self._schedule_group(gid))
        for gid, rep in self.replicas.items():
            if rep.role == "leader":
                out.append(Record("leader", fields={"group": gid, "term": rep.term}))
        for d in self._eventual_descriptors():
            interval = self.ctx.gossip(d).interval_us
            out.append(self._wake(now + self.rng.randint(1, interval), "gossip", d.namespace))
        return out

    def _initial_members(self, d: DataTypeDescriptor) -> tuple:
        try:
            return resolve_members(self.ctx.initial_view, d).members
        except (UnknownReplicaSet, UnknownNode, EmptySubset):
            return ()

    def crash(self) -> list[str]:
        """Lose volatile state. Returns ids of client operations abandoned."""
        lost = sorted(self.pending)
        self._reset_volatile()
        return lost

    def restart(self, now: int) -> list:
        self._reset_volatile()
        out: list = []
        for gid, rep in self.replicas.items():
            out.extend(self._replica_effects(gid, rep.restart(now), now))
        for gid in list(self.replicas):
            out.extend(self._schedule_group(gid))
        for d in self._eventual_descriptors():
            interval = self.ctx.gossip(d).interval_us
            out.append(self._wake(now + self.rng.randint(1, interval), "gossip", d.namespace))
        return out

    # -- timers ---------------------------------------------------------------

    def _wake(self, at: int, kind: str, ident: str) -> Wake:
        return Wake(at, (self.epoch, kind, ident))

    def _schedule_group(self, gid: str) -> list:
        wake = self.replicas[gid].next_wake()
        if wake is None:
            return []
        cur = self._scheduled.get(("group", gid))
        if cur is not None and cur <= wake:
            return []
        self._scheduled[("group", gid)] = wake
        return [self._wake(wake, "group", gid)]

    def on_timer(self, timer: tuple, now: int) -> list:
        epoch, kind, ident = timer
        if epoch != self.epoch:
            return []
        if kind == "group":
            if self._scheduled.get(("group", ident)) != now:
                return []
            del self._scheduled[("group", ident)]
            rep = self.replicas[ident]
            out = self._replica_effects(ident, rep.tick(now), now)
            out.extend(self._schedule_group(ident))
            return out
        if kind == "gossip":
            return self._gossip_tick(ident, now)
        if kind == "deadline":
            return self._expire(ident, now)
        if kind == "retry":
            p = self.pending.get(ident)
            return self._attempt(p, now) if p is not None else []
        raise ValueError(f"unknown timer {kind!r}")

    # -- consensus effect plumbing -------------------------------------------

    def _envelope(self, gid: str, dst: Address, body: Any) -> Envelope:
        ns, scope = self._scopes[gid]
        return Envelope(self.address, dst, scope, ns, body)

    def _replica_effects(self, gid: str, effects: list, now: int) -> list:
        out: list = []
        for e in effects:
            if isinstance(e, Send):
                out.append(Outbound(self._envelope(gid, e.dst, e.msg)))
            elif isinstance(e, Done):
                out.extend(self._on_done(gid, e.token, e.result, now))
            elif isinstance(e, Applied):
                out.extend(self._on_applied(gid, e.entry, now))
            elif isinstance(e, BecameLeader):
                out.append(Record("leader", fields={"group": gid, "term": e.term}))
            elif isinstance(e, SteppedDown):
                out.append(Record("stepdown", fields={"group": gid, "term": e.term}))
        out.extend(self._schedule_group(gid))
        return out

    def _on_applied(self, gid: str, entry, now: int) -> list:
        out = [Record("apply", entry.key or "", {
            "group": gid, "index": entry.index, "term": entry.term, "entry": entry.kind,
            "value": value_digest(entry.value) if entry.kind == "put" else
            ",".join(str(m) for m in entry.members),
        })]
        if entry.kind != "put":
            return out
        prev = self.strict_applied.get(entry.key)
        if prev is None or (prev[1], prev[2]) < (entry.term, entry.index):
            self.strict_applied[entry.key] = (entry.value, entry.term, entry.index)
        set_id = membership_update(entry.key)
        if set_id is not None and not self.is_machine:
            members = decode_members(entry.value)
            if self.view.replica_sets.get(set_id) != members:
                view = self.views.apply(set_id, members)
                out.append(Record("view", fields={"set": set_id, "version": view.version,
                                                  "members": ",".join(sorted(members))}))
        return out

    def _on_done(self, gid: str, token: Hashable, result: Result, now: int) -> list:
        if isinstance(token, tuple) and token[0] == "fwd":
            _, src, remote = token
            return [Outbound(self._envelope(gid, src, ForwardReply(remote, result)))]
        return self._op_result(token, result, now)

    # -- client operations -----------------------------------------------------

    def submit(self, op: ClientOp, now: int) -> list:
        if op.kind == "reconfigure":
            return self._submit_membership_change(op, now)
        try:
            d = self._descriptor(op.key)
        except NoDescriptor:
            return [Complete(op.op_id, Result("NoDescriptor"))]
        if d.strategy is Strategy.EVENTUAL:
            return self._eventual_op(d, op, now)
        return self._strict_op(d, op, now)

    def _eventual_op(self, d: DataTypeDescriptor, op: ClientOp, now: int) -> list:
        parts = self._participants(d)
        if not self._mine(d) or self.address not in parts:
            return [Complete(op.op_id, Result("NotParticipant"))]
        if op.kind == "read":
            state = self.cache.get(op.key)
            if state is None:
                return [Complete(op.op_id, Result("NotFound"))]
            return [Complete(op.op_id, Result("ok", value=crdt.query(state)))]
        if op.kind == "write":
            local_op: crdt.LocalOp = crdt.SetValue(op.value)
        elif op.kind == "add":
            local_op = crdt.AddElement(op.value)
        elif op.kind == "remove":
            local_op = crdt.RemoveElement(op.value)
        else:
            return [Complete(op.op_id, Result("KindMismatch"))]
        if (d.crdt_kind is CrdtKind.LWW_REGISTER) != (op.kind == "write"):
            return [Complete(op.op_id, Result("KindMismatch"))]
        before = self.cache.get(op.key)
        self.clock += 1
        stamp = crdt.LamportStamp(self.clock, self.origin)
        state, delta = crdt.update_local(before, local_op, self.origin, stamp)
        out = self._store(op.key, state, now, source=self.origin)
        if op.kind == "write":
            write_id: Any = state.stamp
        elif op.kind == "add":
            write_id = ("add", frozenset({crdt.Tag(self.origin, stamp.counter)}))
        else:
            removed = before.entries.get(op.value, frozenset()) if before is not None else frozenset()
            write_id = ("remove", frozenset(removed))
        out.append(Record("eventual_write", op.key, {"op": op.op_id, "write_id": write_id,
                                                     "scope": d.level.scope_id}))
        cfg = self.ctx.gossip(d)
        if cfg.broadcast_on_write and state is not before:
            body = Update(op.key, crdt.encode(delta))
            for peer in parts:
                if peer != self.address:
                    out.append(Outbound(Envelope(self.address, peer, d.level.scope_id, d.namespace, body)))
        out.append(Complete(op.op_id, Result("ok")))
        return out

    def _store(self, key: str, state: crdt.CrdtValue, now: int, source: str) -> list:
        self.cache[key] = state
        self._enc.pop(key, None)
        self.clock = max(self.clock, crdt.max_counter(state))
        return [Record("cache", key, {"state": state, "source": source})]

    def _strict_op(self, d: DataTypeDescriptor, op: ClientOp, now: int) -> list:
        if op.kind not in ("write", "read"):
            return [Complete(op.op_id, Result("KindMismatch"))]
        if not self._mine(d):
            return [Complete(op.op_id, Result("NotParticipant"))]
        rep = self.replicas.get(d.group_id)
        if rep is None or not rep.is_member() or self.address not in self._participants(d):
            return [Complete(op.op_id, Result("NotParticipant"))]
        if op.kind == "read":
            if d.read_mode is ReadMode.LOCAL_CACHE:
                got = self.strict_applied.get(op.key)
                if got is None:
                    return [Complete(op.op_id, Result("NotFound"))]
                return [Complete(op.op_id, Result("ok", value=got[0], index=got[2], term=got[1]))]
            request: tuple = ("read", op.key, d.read_mode.value)
        else:
            request = ("propose", op.key, op.value)
        p = _Pending(op, now, now + op.deadline_us, d.group_id, request)
        self.pending[op.op_id] = p
        out = [self._wake(p.deadline, "deadline", op.op_id)]
        out.extend(self._attempt(p, now))
        return out

    def _call_replica(self, rep: Replica, token: Hashable, request: tuple, now: int) -> list:
        kind = request[0]
        if kind == "propose":
            return rep.propose(token, request[1], request[2], now)
        if kind == "read":
            if request[2] == ReadMode.READ_QUORUM.value:
                return rep.read_quorum(token, request[1], now)
            return rep.read_leader(token, request[1], now)
        if kind == "reconfigure":
            return rep.reconfigure(token, request[1], now)
        raise ValueError(f"unknown request {kind!r}")

    def _attempt(self, p: _Pending, now: int) -> list:
        """(Re)issue the pending operation's current group request."""
        rep = self.replicas.get(p.gid)
        if p.via is not None or rep is None or not rep.is_member():
            target = p.via
            if target is None:
                target = self._group_contact(p.gid)
            if target is None:
                return [Complete(p.op.op_id, Result("NotParticipant"))]
            p.via = target
            return [Outbound(self._envelope_for(p.gid, target, Forward(p.op.op_id, p.request)))]
        return self._replica_effects(p.gid, self._call_replica(rep, p.op.op_id, p.request, now), now)

    def _envelope_for(self, gid: str, dst: Address, body: Any) -> Envelope:
        if gid not in self._scopes:
            d = self._group_descriptor(gid)
            self._scopes[gid] = (d.namespace, d.level.scope_id)
        return self._envelope(gid, dst, body)

    def _group_descriptor(self, gid: str) -> DataTypeDescriptor:
        for d in self.ctx.registry.descriptors():
            if d.group_id == gid:
                return d
        raise KeyError(gid)

    def _group_contact(self, gid: str) -> Address | None:
        """Some member to ask when this participant is outside the group."""
        rep = self.replicas.get(gid)
        if rep is not None and rep.leader_hint is not None and rep.leader_hint != self.address:
            return rep.leader_hint
        members = self._participants(self._group_descriptor(gid)).members
        others = [m for m in members if m != self.address]
        return min(others, key=address_key) if others else None

    def _retry(self, p: _Pending, now: int) -> list:
        delay = self.ctx.election_timeout_us((self.address,)) // 5
        if p.gid in self.replicas:
            delay = self.replicas[p.gid].cfg.heartbeat_us
        return [self._wake(now + max(1, delay), "retry", p.op.op_id)]

    def _op_result(self, op_id: str, result: Result, now: int) -> list:
        p = self.pending.get(op_id)
        if p is None:
            return []
        if result.status == "NotLeader":
            hint = result.hint
            rep = self.replicas.get(p.gid)
            if hint is not None and hint != self.address and p.via is None and rep is not None:
                # Our own replica is a follower: forward straight to its leader.
                p.via = hint
                return [Outbound(self._envelope_for(p.gid, hint, Forward(op_id, p.request)))]
            p.via = hint if hint != self.address else None
            return self._retry(p, now)
        if result.status == "Retryable":
            if p.via is not None and self.replicas.get(p.gid) is not None and self.replicas[p.gid].is_member():
                p.via = None
            return self._retry(p, now)
        if p.op.kind == "reconfigure":
            return self._membership_progress(p, result, now)
        del self.pending[op_id]
        return [Complete(op_id, result)]

    def _expire(self, op_id: str, now: int) -> list:
        p = self.pending.pop(op_id, None)
        if p is None:
            return []
        rep = self.replicas.get(p.gid)
        status = rep.cancel(p.op.op_id, now) if rep is not None and rep.is_member() else "Timeout"
        return [Complete(op_id, Result(status))]

    # -- replica-set membership change --------------------------------------------

    def _submit_membership_change(self, op: ClientOp, now: int) -> list:
        if self.is_machine:
            return [Complete(op.op_id, Result("NotParticipant"))]
        try:
            plan_replica_set_change(self.view, op.replica_set, op.members)
        except UnknownNode:
            return [Complete(op.op_id, Result("UnknownNode"))]
        except UnknownReplicaSet:
            return [Complete(op.op_id, Result("UnknownReplicaSet"))]
        except InvalidChange:
            return [Complete(op.op_id, Result("InvalidChange"))]
        rep = self._ensure_replica(MEMBERSHIP_DESCRIPTOR, now) if self.ctx.membership_active else None
        if rep is None:
            return [Complete(op.op_id, Result("NotParticipant"))]
        old_view = self.view
        new_view = old_view.with_replica_set(op.replica_set, op.members)
        steps = []
        for d in self._strict_descriptors():
            if d.level.kind == "replica_set" and d.level.ref == op.replica_set:
                old = set(self._resolve_or_empty(old_view, d))
                new = set(self._resolve_or_empty(new_view, d))
                cur = set(old)
                for n in sorted(new - cur, key=address_key):
                    cur.add(n)
                    steps.append((d.group_id, tuple(sorted(cur, key=address_key))))
                for n in sorted(cur - new, key=address_key):
                    cur.discard(n)
                    steps.append((d.group_id, tuple(sorted(cur, key=address_key))))
        key = str(membership_key(op.replica_set))
        p = _Pending(op, now, now + op.deadline_us, MEMBERSHIP_DESCRIPTOR.group_id,
                     ("propose", key, encode_members(op.members)), steps=steps)
        self.pending[op.op_id] = p
        out = [self._wake(p.deadline, "deadline", op.op_id)]
        out.extend(self._attempt(p, now))
        return out

    @staticmethod
    def _resolve_or_empty(view: MembershipView, d: DataTypeDescriptor) -> tuple:
        try:
            return resolve_members(view, d).members
        except (UnknownReplicaSet, UnknownNode, EmptySubset):
            return ()

    def _membership_progress(self, p: _Pending, result: Result, now: int) -> list:
        op_id = p.op.op_id
        if not result.ok:
            del self.pending[op_id]
            return [Complete(op_id, result)]
        if p.phase >= len(p.steps):
            del self.pending[op_id]
            return [Complete(op_id, Result("ok", index=result.index, term=result.term))]
        gid, members = p.steps[p.phase]
        p.phase += 1
        p.gid = gid
        p.request = ("reconfigure", members)
        p.via = None
        out = [Record("reconfigure_step", fields={"group": gid, "members": ",".join(map(str, members))})]
        out.extend(self._attempt(p, now))
        return out

    # -- gossip -------------------------------------------------------------------

    def _encoded(self, key: str) -> bytes:
        enc = self._enc.get(key)
        if enc is None:
            enc = self._enc[key] = crdt.encode(self.cache[key])
        return enc

    def _keys_of(self, d: DataTypeDescriptor) -> list[str]:
        return sorted(k for k in self.cache if self._descriptor(k) is d)

    def _gossip_tick(self, ns: str, now: int) -> list:
        d = self.ctx.registry.as_mapping()[ns]
        cfg = self.ctx.gossip(d)
        out = [self._wake(now + cfg.interval_us, "gossip", ns)]
        parts = self._participants(d)
        if self.address not in parts:
            return out
        others = sorted((m for m in parts if m != self.address), key=address_key)
        if not others:
            return out
        targets = self.rng.sample(others, min(cfg.fanout, len(others)))
        body = StateExchange(tuple((k, self._encoded(k)) for k in self._keys_of(d)))
        for t in targets:
            out.append(Outbound(Envelope(self.address, t, d.level.scope_id, ns, body)))
        return out

    def _merge_in(self, key: str, raw: bytes, now: int, source: str) -> list:
        incoming = crdt.decode(raw)
        mine = self.cache.get(key)
        if mine is None:
            merged = incoming
        else:
            if self._encoded(key) == raw:
                return []
            merged = crdt.merge(mine, incoming)
            if crdt.encode(merged) == self._encoded(key):
                return []
        return self._store(key, merged, now, source)

    # -- inbound --------------------------------------------------------------------

    def on_message(self, env: Envelope, now: int) -> list:
        out: list = []
        if self.ctx.authority is not None and not self.ctx.authority(env.namespace, env.scope, self.address):
            return [Record("scope_violation", env.key, {"scope": env.scope, "msg": env.msg_kind,
                                                        "from": str(env.src)})]
        body = env.body
        if isinstance(body, Update):
            return self._merge_in(body.key, body.state, now, str(env.src))
        if isinstance(body, StateExchange):
            pushed = dict(body.states)
            for key, raw in body.states:
                out.extend(self._merge_in(key, raw, now, str(env.src)))
            if not body.reply:
                d = self.ctx.registry.as_mapping().get(env.namespace)
                keys = self._keys_of(d) if d is not None else []
                diff = tuple((k, self._encoded(k)) for k in keys if pushed.get(k) != self._encoded(k))
                out.append(Outbound(Envelope(self.address, env.src, env.scope, env.namespace,
                                             StateExchange(diff, reply=True))))
            return out
        if isinstance(body, ForwardReply):
            return self._op_result(body.token, body.result, now)
        gid = self._gid_for(env)
        rep = self.replicas.get(gid)
        if rep is None:
            rep = self._lazy_replica(env, now)
            if rep is None:
                if isinstance(body, Forward):
                    return [Outbound(Envelope(self.address, env.src, env.scope, env.namespace,
                                              ForwardReply(body.token, Result("NotParticipant"))))]
                return [Record("unroutable", env.key, {"msg": env.msg_kind, "scope": env.scope})]
        if isinstance(body, Forward):
            token = ("fwd", env.src, body.token)
            return self._replica_effects(gid, self._call_replica(rep, token, body.request, now), now)
        return self._replica_effects(gid, rep.handle(env.src, body, now), now)

    def _gid_for(self, env: Envelope) -> str:
        return f"{env.namespace}@{env.scope}"

    def _lazy_replica(self, env: Envelope, now: int) -> Replica | None:
        d = self.ctx.registry.as_mapping().get(env.namespace)
        if d is None or d.strategy is not Strategy.STRICT or not self._mine(d):
            return None
        if d is MEMBERSHIP_DESCRIPTOR and not self.ctx.membership_active:
            return None
        if not isinstance(env.body, AppendEntries) and self.address not in self._participants(d):
            return None
        return self._ensure_replica(d, now)


def strict_read_value(result: Result) -> Any:
    return result.value if result.ok else None
