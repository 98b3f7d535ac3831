"""Deterministic discrete-event simulation of a fog network.

Virtual time is an integer count of microseconds. Events pop in
``(time, sequence)`` order where the sequence number is assigned at
enqueue time, so two runs of the same scenario with the same seed produce
byte-identical traces. All randomness (message loss, election timeouts,
gossip targets) comes from RNGs seeded by the scenario seed.
"""

from __future__ import annotations

import heapq
import logging
import random
from dataclasses import dataclass, field
from typing import Any, Iterable

from . import codec, crdt
from .consensus import Result, majority, minority_quorum
from .coordinator import (
    ClientOp,
    Complete,
    Context,
    Envelope,
    GossipConfig,
    Outbound,
    Participant,
    Record,
    ViewBox,
    Wake,
    value_digest,
)
from .errors import NodeDown
from .membership import MembershipView, node_facade_route, resolve_members
from .scenario import FaultEvent, Scenario, Topology, WorkloadOp
from .trace import SCHEMA, TraceLog
from .types import (
    MEMBERSHIP_NAMESPACE,
    Address,
    CoordinationKey,
    DataTypeDescriptor,
    MachineId,
    Strategy,
)

log = logging.getLogger(__name__)

CLIENT_POLL_US = 10_000
QUIESCENT_GOSSIP_INTERVALS = 20

MUTANTS = {"minority-quorum": minority_quorum}


class EventQueue:
    """Min-heap of ``(time, seq, item)``; seq breaks ties in push order."""

    def __init__(self):
        self._heap: list = []
        self._seq = 0

    def push(self, time_us: int, item: Any) -> int:
        seq = self._seq
        self._seq += 1
        heapq.heappush(self._heap, (time_us, seq, item))
        return seq

    def pop(self) -> tuple[int, int, Any]:
        return heapq.heappop(self._heap)

    def peek_time(self) -> int | None:
        return self._heap[0][0] if self._heap else None

    def __len__(self) -> int:
        return len(self._heap)


class Network:
    """Latency, partitions, i.i.d. loss and crashed machines."""

    def __init__(self, topology: Topology, queue: EventQueue, rng: random.Random):
        self.topology = topology
        self.queue = queue
        self.rng = rng
        self.group_of: dict[MachineId, int] | None = None
        self.loss = 0.0
        self.crashed: set[MachineId] = set()
        self.dropped = 0
        self.delivered = 0

    def partition(self, groups: Iterable[Iterable[MachineId]]) -> None:
        self.group_of = {m: i for i, g in enumerate(groups) for m in g}

    def heal(self) -> None:
        self.group_of = None

    def connected(self, a: MachineId, b: MachineId) -> bool:
        if self.group_of is None:
            return True
        return self.group_of.get(a) == self.group_of.get(b)

    def send(self, src: MachineId, dst: MachineId, payload: Any, now: int) -> int | None:
        """Enqueue delivery; returns the delivery time, or None when dropped."""
        if src in self.crashed:
            raise RuntimeError(f"crashed machine {src} cannot send")
        if not self.connected(src, dst):
            self.dropped += 1
            return None
        if self.loss > 0.0 and self.rng.random() < self.loss:
            self.dropped += 1
            return None
        at = now + self.topology.latency(src, dst)
        self.queue.push(at, ("deliver", payload))
        return at


@dataclass
class _Client:
    op: WorkloadOp
    deadline: int
    target: Address | None = None
    done: bool = False
    saw_down: bool = False
    attempts: int = 0


@dataclass
class RunResult:
    trace: TraceLog
    outcomes: dict[str, Result]
    end_us: int
    scenario: Scenario
    seed: int
    info: dict = field(default_factory=dict)


def default_gossip_interval_us(topology: Topology, members: Iterable[Address]) -> int:
    return 5 * max(_max_latency(topology, members), topology.intra_node_us, 1)


def default_election_timeout_us(topology: Topology, members: Iterable[Address]) -> int:
    return 10 * max(_max_latency(topology, members), topology.intra_node_us, 1)


def _as_machine(a: Address) -> MachineId:
    return a if isinstance(a, MachineId) else MachineId(a, 0)


def _max_latency(topology: Topology, members: Iterable[Address]) -> int:
    ms = [_as_machine(m) for m in members]
    best = 0
    for i, a in enumerate(ms):
        for b in ms[i + 1:]:
            best = max(best, topology.latency(a, b))
    return best


def gossip_config(scenario: Scenario, d: DataTypeDescriptor) -> GossipConfig:
    t = scenario.timers
    interval = t.gossip_interval_us
    if interval is None:
        try:
            members = resolve_members(scenario.initial_view(), d).members
        except Exception:
            members = ()
        interval = default_gossip_interval_us(scenario.topology, members)
    return GossipConfig(interval, t.gossip_fanout, t.broadcast_on_write)


def quiescence_us(scenario: Scenario) -> int:
    """Quiet period after the last write/fault needed before convergence is due."""
    intervals = [gossip_config(scenario, d).interval_us for d in scenario.data_types
                 if d.strategy is Strategy.EVENTUAL]
    return QUIESCENT_GOSSIP_INTERVALS * max(intervals, default=0)


def _hex(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bytes, bytearray)):
        return bytes(value).hex()
    return codec.encode(value).hex()


class Simulation:
    def __init__(self, scenario: Scenario, seed: int | None = None, mutant: str | None = None,
                 record_messages: bool = True):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.registry = scenario.validate()
        self.topology = scenario.topology
        self.record_messages = record_messages
        self.queue = EventQueue()
        self.trace = TraceLog()
        self.net = Network(self.topology, self.queue, random.Random(f"{self.seed}|net"))
        self.now = 0
        if mutant is not None and mutant not in MUTANTS:
            raise ValueError(f"unknown mutant {mutant!r}")
        self.mutant = mutant
        view0 = scenario.initial_view()
        self.view0 = view0
        self.history: list[MembershipView] = [view0]
        self._allowed_cache: dict[str, frozenset] = {}
        self.ctx = Context(
            registry=self.registry,
            initial_view=view0,
            seed=self.seed,
            gossip=self._gossip_for,
            election_timeout_us=self._election_timeout,
            quorum=MUTANTS[mutant] if mutant else majority,
            membership_active=scenario.uses_membership(),
            authority=self.authority,
        )
        self._gossip_cache: dict[str, GossipConfig] = {}
        self.views = {n: ViewBox(view0) for n in self.topology.node_ids()}
        self.node_parts = {n: Participant(n, self.ctx, self.views[n]) for n in self.topology.node_ids()}
        self.machine_parts = {m: Participant(m, self.ctx, self.views[m.node]) for m in self.topology.machines()}
        self.alive: set[MachineId] = set(self.machine_parts)
        self.facade_leader: dict[str, MachineId] = {n: MachineId(n, 0) for n in self.topology.node_ids()}
        self.host: dict[str, MachineId | None] = {}
        self.clients: dict[str, _Client] = {}
        self.outcomes: dict[str, Result] = {}
        self.writes: dict[str, list] = {}  # key -> [(write_id, time, origin, seen:set)]
        self.scope_violations = 0
        self.end_us = self._end_time()

    # -- configuration helpers --------------------------------------------------

    def _gossip_for(self, d: DataTypeDescriptor) -> GossipConfig:
        cfg = self._gossip_cache.get(d.namespace)
        if cfg is None:
            cfg = self._gossip_cache[d.namespace] = gossip_config(self.scenario, d)
        return cfg

    def _election_timeout(self, members: tuple) -> int:
        t = self.scenario.timers.election_timeout_us
        return t if t is not None else default_election_timeout_us(self.topology, members)

    def _end_time(self) -> int:
        sc = self.scenario
        if sc.duration_us is not None:
            return sc.duration_us
        last = 0
        for op in sc.workload:
            last = max(last, op.at_us + op.deadline_us)
        for f in sc.faults:
            last = max(last, f.at_us)
        groups = [d for d in sc.data_types if d.strategy is Strategy.STRICT]
        settle = 4 * max((self._election_timeout(self._members_or_empty(d)) for d in groups), default=0)
        return last + max(quiescence_us(sc), settle) + 1000

    def _members_or_empty(self, d: DataTypeDescriptor) -> tuple:
        try:
            return resolve_members(self.view0, d).members
        except Exception:
            return ()

    # -- scope authority ------------------------------------------------------------

    def authority(self, namespace: str, scope: str, dst: Address) -> bool:
        """May a message of (namespace, scope) be delivered to ``dst``?"""
        if scope.startswith("node:"):
            return isinstance(dst, MachineId) and dst.node == scope[5:]
        if isinstance(dst, MachineId):
            return False
        if scope == "system":
            return dst in self.view0.system_nodes
        allowed = self._allowed_cache.get(namespace)
        if allowed is None:
            d = self.registry.as_mapping().get(namespace)
            if d is None:
                return False
            members: set = set()
            for v in self.history:
                try:
                    members |= set(resolve_members(v, d).members)
                except Exception:
                    pass
            allowed = self._allowed_cache[namespace] = frozenset(members)
        return dst in allowed

    # -- addressing -------------------------------------------------------------------

    def _route(self, node: str) -> MachineId | None:
        alive = [m for m in self.view0.machines_of(node) if m in self.alive]
        try:
            return node_facade_route(self.view0, node, alive, self.facade_leader[node])
        except NodeDown:
            return None

    def machine_of(self, addr: Address) -> MachineId | None:
        if isinstance(addr, MachineId):
            return addr if addr in self.alive else None
        return self.host.get(addr)

    def participant(self, addr: Address) -> Participant:
        return self.machine_parts[addr] if isinstance(addr, MachineId) else self.node_parts[addr]

    # -- effects ----------------------------------------------------------------------

    def _effects(self, addr: Address, effects: list) -> None:
        for e in effects:
            if isinstance(e, Outbound):
                self._send(e.env)
            elif isinstance(e, Wake):
                self.queue.push(max(e.at, self.now), ("timer", addr, e.timer))
            elif isinstance(e, Complete):
                self._complete(e.op_id, e.result)
            elif isinstance(e, Record):
                self._record(addr, e)

    def _send(self, env: Envelope) -> None:
        src = self.machine_of(env.src)
        dst = self.machine_of(env.dst)
        size = env.size() if self.record_messages else 0
        if dst is None:
            self.net.dropped += 1
            if self.record_messages:
                self.trace.add(self.now, "drop", env.src, env.dst, env.key, env.msg_kind, size,
                               {"scope": env.scope, "ns": env.namespace, "why": "down"})
            return
        at = self.net.send(src, dst, env, self.now)
        if self.record_messages:
            if at is None:
                self.trace.add(self.now, "drop", env.src, env.dst, env.key, env.msg_kind, size,
                               {"scope": env.scope, "ns": env.namespace, "why": "net"})
            else:
                self.trace.add(self.now, "send", env.src, env.dst, env.key, env.msg_kind, size,
                               {"scope": env.scope, "ns": env.namespace, "at": at})

    def _record(self, addr: Address, rec: Record) -> None:
        f = rec.fields
        if rec.kind == "cache":
            self._observe_cache(addr, rec.key, f["state"])
            return
        if rec.kind == "eventual_write":
            self.writes.setdefault(rec.key, []).append([f["write_id"], self.now, str(addr), {str(addr)}])
            return
        if rec.kind == "view":
            set_id = f["set"]
            members = frozenset(f["members"].split(",")) if f["members"] else frozenset()
            latest = self.history[-1]
            if latest.replica_sets.get(set_id) != members:
                self.history.append(latest.with_replica_set(set_id, members))
                self._allowed_cache.clear()
        if rec.kind == "scope_violation":
            self.scope_violations += 1
        if rec.kind == "leader" and f.get("group", "").startswith("facade@") and isinstance(addr, MachineId):
            self.facade_leader[addr.node] = addr
            self._rehost(addr.node)
        self.trace.add(self.now, rec.kind, addr, "", rec.key, "", 0, f)

    def _observe_cache(self, addr: Address, key: str, state) -> None:
        who = str(addr)
        for w in self.writes.get(key, ()):
            write_id, t0, origin, seen = w
            if who in seen:
                continue
            if isinstance(write_id, tuple):
                kind, tags = write_id
                ok = tags <= (state.tombstones if kind == "remove" else state.tags())
            else:
                ok = crdt.covers(state, write_id)
            if ok:
                seen.add(who)
                self.trace.add(self.now, "visible", origin, who, key, "", 0,
                               {"written_us": t0, "lag_us": self.now - t0})

    # -- hosting and faults ------------------------------------------------------------

    def _rehost(self, node: str) -> None:
        want = self._route(node)
        cur = self.host.get(node)
        if want == cur:
            return
        part = self.node_parts[node]
        lost = part.crash() if cur is not None else []
        self.host[node] = want
        self._requeue(lost)
        if want is not None:
            self.trace.add(self.now, "host", node, want, "", "", 0, None)
            self._effects(node, part.restart(self.now))

    def _requeue(self, op_ids: list[str]) -> None:
        for op_id in op_ids:
            c = self.clients.get(op_id)
            if c is not None and not c.done:
                c.target = None
                self.queue.push(self.now, ("client", op_id))

    def _fault(self, f: FaultEvent) -> None:
        note: dict = {}
        if f.kind == "partition":
            self.net.partition(f.groups)
            note["groups"] = "|".join(",".join(sorted(str(m) for m in g)) for g in f.groups)
        elif f.kind == "heal":
            self.net.heal()
        elif f.kind == "loss":
            self.net.loss = f.probability
            note["p"] = f.probability
        elif f.kind == "crash":
            m = f.machine
            note["machine"] = m
            if m in self.alive:
                self.alive.discard(m)
                self.net.crashed.add(m)
                self._requeue(self.machine_parts[m].crash())
                if self.host.get(m.node) == m:
                    self._rehost(m.node)
        elif f.kind == "restart":
            m = f.machine
            note["machine"] = m
            if m not in self.alive:
                self.alive.add(m)
                self.net.crashed.discard(m)
                self._effects(m, self.machine_parts[m].restart(self.now))
                if self.host.get(m.node) is None:
                    self._rehost(m.node)
        self.trace.add(self.now, "fault", "", "", "", f.kind, 0, note)

    # -- client layer ---------------------------------------------------------------------

    def _target_for(self, op: WorkloadOp) -> Address | None:
        host = self.host.get(op.node)
        if host is None:
            return None
        if op.kind != "reconfigure":
            d = self.registry.lookup(CoordinationKey.parse(op.key))
            if d.level.kind == "node":
                return host
        return op.node

    def _client_start(self, op: WorkloadOp) -> None:
        self.clients[op.op_id] = _Client(op, self.now + op.deadline_us)
        note = {"op": op.op_id, "node": op.node, "kind": op.kind, "value": _hex(op.value),
                "deadline_us": op.deadline_us}
        if op.kind == "reconfigure":
            note["replica_set"] = op.replica_set
            note["members"] = ",".join(op.members)
        self.trace.add(self.now, "op_start", op.node, "", op.key or "", "", 0, note)
        self.queue.push(op.at_us + op.deadline_us + 1, ("client_deadline", op.op_id))
        self._client_try(op.op_id)

    def _client_try(self, op_id: str) -> None:
        c = self.clients[op_id]
        if c.done or c.target is not None:
            return
        target = self._target_for(c.op)
        if target is None:
            c.saw_down = True
            if self.now + CLIENT_POLL_US < c.deadline:
                self.queue.push(self.now + CLIENT_POLL_US, ("client", op_id))
            return
        c.target = target
        c.attempts += 1
        remaining = c.deadline - self.now
        op = c.op
        cop = ClientOp(op.op_id, op.kind, op.key, op.value, remaining, op.replica_set, tuple(op.members))
        self._effects(target, self.participant(target).submit(cop, self.now))

    def _complete(self, op_id: str, result: Result) -> None:
        c = self.clients.get(op_id)
        if c is None or c.done:
            return
        c.done = True
        self.outcomes[op_id] = result
        latency = self.now - c.op.at_us
        self.trace.add(self.now, "op_end", c.op.node, "", c.op.key or "", "", 0, {
            "op": op_id, "kind": c.op.kind, "outcome": result.status, "value": _hex(result.value),
            "latency_us": latency, "index": result.index, "term": result.term,
        })

    def _client_deadline(self, op_id: str) -> None:
        c = self.clients[op_id]
        if not c.done:
            self._complete(op_id, Result("NodeDown" if c.saw_down and c.target is None else "Timeout"))

    # -- main loop ------------------------------------------------------------------------

    def run(self) -> RunResult:
        sc = self.scenario
        self.trace.add(0, "meta", "", "", "", "", 0, {"schema": SCHEMA, "scenario": sc.name, "seed": self.seed,
                                                      "mutant": self.mutant or ""})
        for n in self.topology.node_ids():
            self.host[n] = self._route(n)
        for m in sorted(self.machine_parts):
            self._effects(m, self.machine_parts[m].start(0))
        for n in self.topology.node_ids():
            self._effects(n, self.node_parts[n].start(0))
        for f in sc.faults:
            self.queue.push(f.at_us, ("fault", f))
        for op in sc.workload:
            self.queue.push(op.at_us, ("op", op))
        while len(self.queue):
            t = self.queue.peek_time()
            if t > self.end_us:
                break
            t, _, item = self.queue.pop()
            self.now = t
            self._dispatch(item)
        self.now = self.end_us
        pending = [op_id for op_id, c in self.clients.items() if not c.done]
        not_started = [op.op_id for op in sc.workload if op.op_id not in self.clients]
        if pending or not_started:
            # The time limit cut the workload short; keep the partial trace and say so.
            self.trace.add(self.now, "time_limit", "", "", "", "", 0,
                           {"pending": len(pending), "not_started": len(not_started)})
        for op_id in pending:
            self._complete(op_id, Result("Timeout"))
        for op_id in not_started:
            self.outcomes[op_id] = Result("NotStarted")
        self._final_states()
        return RunResult(self.trace, self.outcomes, self.end_us, sc, self.seed,
                         {"scope_violations": self.scope_violations, "dropped": self.net.dropped,
                          "time_limit_exceeded": bool(pending or not_started)})

    def _dispatch(self, item: tuple) -> None:
        kind = item[0]
        if kind == "deliver":
            env: Envelope = item[1]
            dst = self.machine_of(env.dst)
            if dst is None:
                self.net.dropped += 1
                if self.record_messages:
                    self.trace.add(self.now, "drop", env.src, env.dst, env.key, env.msg_kind, 0,
                                   {"scope": env.scope, "why": "down"})
                return
            self.net.delivered += 1
            if self.record_messages:
                self.trace.add(self.now, "deliver", env.src, env.dst, env.key, env.msg_kind, 0, {"scope": env.scope})
            self._effects(env.dst, self.participant(env.dst).on_message(env, self.now))
        elif kind == "timer":
            _, addr, timer = item
            if self.machine_of(addr) is None:
                return
            self._effects(addr, self.participant(addr).on_timer(timer, self.now))
        elif kind == "op":
            self._client_start(item[1])
        elif kind == "client":
            self._client_try(item[1])
        elif kind == "client_deadline":
            self._client_deadline(item[1])
        elif kind == "fault":
            self._fault(item[1])
        else:
            raise ValueError(f"unknown event {kind!r}")

    def _final_states(self) -> None:
        latest = self.history[-1]
        for d in self.registry.descriptors():
            if d.strategy is not Strategy.EVENTUAL:
                continue
            try:
                members = resolve_members(latest, d).members
            except Exception:
                members = ()
            up = [m for m in members if self.machine_of(m) is not None]
            self.trace.add(self.now, "participants", "", "", "", "", 0, {
                "namespace": d.namespace, "members": ",".join(map(str, up)),
                "interval_us": self._gossip_for(d).interval_us,
            })
            for m in up:
                part = self.participant(m)
                for key in sorted(part.cache):
                    if part._descriptor(key) is d:
                        self.trace.add(self.now, "state", m, "", key, "", 0,
                                       {"namespace": d.namespace, "state": crdt.encode(part.cache[key]).hex()})
        last_write = max((r.time_us for r in self.trace.rows if r.kind == "op_start"
                          and r.fields().get("kind") in ("write", "add", "remove")), default=0)
        last_fault = max((f.at_us for f in self.scenario.faults), default=0)
        self.trace.add(self.now, "end", "", "", "", "", 0, {
            "end_us": self.end_us, "last_write_us": last_write, "last_fault_us": last_fault,
        })


def run(scenario: Scenario, seed: int | None = None, mutant: str | None = None) -> RunResult:
    return Simulation(scenario, seed, mutant).run()
