"""Seeded scenario generators for property runs and the committed corpus.

Every generator is a pure function of its seed. Strict keys never receive
more than eight operations so each per-key history fits the exhaustive
linearizability checker.
"""

from __future__ import annotations

import random

from ..scenario import FaultEvent, NodeSpec, Scenario, Timers, Topology, WorkloadOp, ms
from ..types import CrdtKind, DataTypeDescriptor, Level, MachineId, Participation, ReadMode, Strategy

OPS_PER_STRICT_KEY = 8


def _nodes(count: int) -> list[str]:
    width = len(str(count))
    return [f"n{i:0{width}d}" for i in range(1, count + 1)]


def _split(rng: random.Random, nodes: list[str]) -> tuple[list[str], list[str]]:
    shuffled = list(nodes)
    rng.shuffle(shuffled)
    cut = rng.randint(1, len(nodes) - 1)
    return sorted(shuffled[:cut]), sorted(shuffled[cut:])


def _partition(topo: Topology, sides: list[list[str]]) -> tuple:
    return tuple(frozenset(MachineId(n, i) for n in side for i in range(topo.nodes[n].machines)) for side in sides)


def convergence_scenario(seed: int) -> Scenario:
    """Concurrent eventual writers on up to eight nodes, one partition then heal."""
    rng = random.Random(f"convergence|{seed}")
    nodes = _nodes(rng.randint(3, 8))
    topo = Topology({n: NodeSpec() for n in nodes}, default_latency_us=ms(rng.choice([5, 10, 20, 40])))
    rs = sorted(rng.sample(nodes, rng.randint(2, len(nodes))))
    types = (
        DataTypeDescriptor("cfg", Strategy.EVENTUAL, Level.system(), crdt_kind=CrdtKind.LWW_REGISTER),
        DataTypeDescriptor("acl", Strategy.EVENTUAL, Level.system(), crdt_kind=CrdtKind.OR_SET),
        DataTypeDescriptor("place", Strategy.EVENTUAL, Level.replica_set("r1"), crdt_kind=CrdtKind.LWW_REGISTER),
    )
    part_at = ms(rng.randint(50, 300))
    heal_at = part_at + ms(rng.randint(100, 600))
    faults = (FaultEvent(part_at, "partition", groups=_partition(topo, list(_split(rng, nodes)))),
              FaultEvent(heal_at, "heal"))
    ops = []
    elements = ["a", "b", "c", "d"]
    for i in range(rng.randint(10, 30)):
        at = ms(rng.randint(0, heal_at // 1000 + 100))
        choice = rng.random()
        if choice < 0.4:
            node = rng.choice(nodes)
            ops.append(WorkloadOp(f"w{i}", at, node, "write", f"cfg/k{rng.randint(1, 3)}", f"v{i}".encode()))
        elif choice < 0.8:
            node = rng.choice(nodes)
            kind = rng.choice(["add", "add", "remove"])
            ops.append(WorkloadOp(f"s{i}", at, node, kind, "acl/users", rng.choice(elements).encode()))
        else:
            node = rng.choice(rs)
            ops.append(WorkloadOp(f"p{i}", at, node, "write", "place/fn", f"m{i}".encode()))
    ops.sort(key=lambda o: (o.at_us, o.op_id))
    return Scenario(topo, types, {"r1": frozenset(rs)}, faults, tuple(ops), Timers(), seed,
                    name=f"convergence-{seed}")


def safety_scenario(seed: int) -> Scenario:
    """Strict writes and reads under partitions, crashes and elections."""
    rng = random.Random(f"safety|{seed}")
    nodes = _nodes(rng.choice([3, 5]))
    topo = Topology({n: NodeSpec() for n in nodes}, default_latency_us=ms(rng.choice([5, 10, 20])))
    mode = rng.choice([ReadMode.READ_QUORUM, ReadMode.LEADER_READ])
    types = (DataTypeDescriptor("lock", Strategy.STRICT, Level.system(), read_mode=mode),)
    t_elect = 10 * topo.default_latency_us
    faults: list[FaultEvent] = []
    t = ms(rng.randint(20, 200))
    for _ in range(rng.randint(1, 3)):
        if rng.random() < 0.5:
            faults.append(FaultEvent(t, "partition", groups=_partition(topo, list(_split(rng, nodes)))))
            t += rng.randint(2, 8) * t_elect
            faults.append(FaultEvent(t, "heal"))
        else:
            victim = MachineId(rng.choice(nodes), 0)
            faults.append(FaultEvent(t, "crash", machine=victim))
            t += rng.randint(2, 8) * t_elect
            faults.append(FaultEvent(t, "restart", machine=victim))
        t += rng.randint(1, 4) * t_elect
    horizon = t + 2 * t_elect
    ops = []
    for k in range(rng.randint(1, 3)):
        for j in range(rng.randint(3, OPS_PER_STRICT_KEY)):
            at = rng.randint(0, horizon)
            node = rng.choice(nodes)
            if rng.random() < 0.5:
                ops.append(WorkloadOp(f"k{k}w{j}", at, node, "write", f"lock/k{k}", f"v{k}.{j}".encode(),
                                      deadline_us=6 * t_elect))
            else:
                ops.append(WorkloadOp(f"k{k}r{j}", at, node, "read", f"lock/k{k}", deadline_us=6 * t_elect))
    ops.sort(key=lambda o: (o.at_us, o.op_id))
    return Scenario(topo, types, {}, tuple(faults), tuple(ops), Timers(), seed, name=f"safety-{seed}")
