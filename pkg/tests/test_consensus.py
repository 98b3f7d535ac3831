import heapq
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fogcoord.consensus import (
    AppendEntries,
    AppendReply,
    Applied,
    Done,
    GroupConfig,
    Replica,
    Send,
    VoteReply,
    VoteRequest,
    check_single_change,
    majority,
    minority_quorum,
)
from fogcoord.errors import InvalidChange

T = 100_000  # election timeout, us


class Net:
    """Minimal driver: fixed one-way latency, optional cut, lazy timers."""

    def __init__(self, members, latency=10_000, seed=0, quorum=majority, **cfg):
        self.latency = latency
        self.now = 0
        self.q = []
        self.seq = 0
        self.cut: set = set()
        self.down: set = set()
        self.done: dict = {}
        self.applied: dict = {m: [] for m in members}
        self.reps = {
            m: Replica("g", m, members, GroupConfig(T, quorum=quorum, **cfg), random.Random(f"{seed}|{m}"))
            for m in members
        }
        for m in members:
            self._arm(m)

    def _push(self, at, item):
        heapq.heappush(self.q, (at, self.seq, item))
        self.seq += 1

    def _arm(self, m):
        wake = self.reps[m].next_wake()
        if wake is not None:
            self._push(max(wake, self.now), ("tick", m))

    def effects(self, m, out):
        for e in out:
            if isinstance(e, Send):
                if m in self.down or e.dst in self.down:
                    continue
                if frozenset((m, e.dst)) & self.cut and not {m, e.dst} <= self.cut:
                    continue  # crosses the partition boundary
                self._push(self.now + self.latency, ("msg", m, e.dst, e.msg))
            elif isinstance(e, Done):
                self.done[e.token] = (self.now, e.result)
            elif isinstance(e, Applied):
                self.applied[m].append(e.entry)
        self._arm(m)

    def run_until(self, t):
        while self.q and self.q[0][0] <= t:
            at, _, item = heapq.heappop(self.q)
            self.now = at
            if item[0] == "tick":
                m = item[1]
                if m not in self.down:
                    self.effects(m, self.reps[m].tick(at))
            else:
                _, src, dst, msg = item
                if dst not in self.down:
                    self.effects(dst, self.reps[dst].handle(src, msg, at))
        self.now = t

    def call(self, m, method, *args):
        self.effects(m, getattr(self.reps[m], method)(*args, self.now))

    def leaders(self):
        return [m for m, r in self.reps.items() if r.role == "leader" and m not in self.down]


def commit_oracle(leader, followers, latency, quorum):
    """Hand-computed replication timeline: send at 0, ack back at 2 x one-way
    latency; commit when leader + acks reach the quorum."""
    acks = sorted(2 * latency(leader, f) for f in followers)
    need = quorum - 1
    return 0 if need == 0 else acks[need - 1]


def test_pinned_leader_commit_is_one_round_trip():
    net = Net(["a", "b", "c"], designated_leader="a", pinned=True)
    expected = commit_oracle("a", ["b", "c"], lambda x, y: 10_000, majority(3))
    assert expected == 20_000
    net.call("a", "propose", "w", "k/x", b"v")
    net.run_until(1_000_000)
    at, result = net.done["w"]
    assert result.ok and (result.index, result.term) == (1, 1)
    assert at == expected


def test_fresh_election_then_commit():
    net = Net(["a", "b", "c"], seed=3)
    net.run_until(3 * T)
    (leader,) = net.leaders()
    net.call(leader, "propose", "w", "k/x", b"v")
    net.run_until(net.now + T)
    assert net.done["w"][1].ok
    for m in "abc":
        assert [e.value for e in net.applied[m] if e.kind == "put"] == [b"v"]


def test_minority_side_cannot_commit_and_reports_no_quorum():
    net = Net(["a", "b", "c", "d", "e"], designated_leader="a", pinned=True)
    net.cut = {"a", "b"}
    net.call("a", "propose", "w", "k/x", b"v")
    net.run_until(5 * T)
    assert "w" not in net.done
    assert net.reps["a"].cancel("w", net.now) == "NoQuorum"


def test_leader_crash_triggers_new_term_and_keeps_committed_entries():
    net = Net(["a", "b", "c"], seed=1)
    net.run_until(3 * T)
    (old,) = net.leaders()
    net.call(old, "propose", "w1", "k/x", b"one")
    net.run_until(net.now + T)
    assert net.done["w1"][1].ok
    net.down.add(old)
    net.run_until(net.now + 6 * T)
    (new,) = net.leaders()
    assert new != old and net.reps[new].term > net.reps[old].term
    net.call(new, "read_quorum", "r", "k/x")
    net.run_until(net.now + T)
    assert net.done["r"][1].value == b"one"


def test_restart_keeps_stable_storage_only():
    net = Net(["a", "b", "c"], designated_leader="a", pinned=True)
    net.call("a", "propose", "w", "k/x", b"v")
    net.run_until(T)
    rep = net.reps["b"]
    term, log = rep.term, list(rep.log)
    rep.restart(net.now)
    assert rep.term == term and rep.log == log
    assert rep.commit_index == 0 and rep.kv == {}


def test_stale_append_entries_rejected_with_current_term():
    net = Net(["a", "b", "c"], designated_leader="a")
    rep = net.reps["b"]
    rep.store.term = 5
    out = rep.handle("c", AppendEntries(3, "c", 0, 0, (), 0, 0, True), 0)
    (reply,) = [e.msg for e in out if isinstance(e, Send)]
    assert isinstance(reply, AppendReply) and not reply.success and reply.term == 5


def test_vote_request_from_non_member_ignored():
    net = Net(["a", "b", "c"])
    rep = net.reps["a"]
    assert rep.handle("zz", VoteRequest(9, "zz", 0, 0), 0) == []
    assert rep.term == 0


def test_vote_granted_once_per_term():
    net = Net(["a", "b", "c"])
    rep = net.reps["a"]
    first = rep.handle("b", VoteRequest(1, "b", 0, 0), 0)
    second = rep.handle("c", VoteRequest(1, "c", 0, 0), 0)
    assert first[-1].msg == VoteReply(1, True)
    assert second[-1].msg == VoteReply(1, False)


def test_reconfigure_single_steps_only():
    net = Net(["a", "b", "c"], designated_leader="a", pinned=True)
    net.call("a", "reconfigure", "two", ("a", "d", "e"))
    assert net.done["two"][1].status == "InvalidChange"
    net.reps["d"] = Replica("g", "d", ["a", "b", "c"], GroupConfig(T, designated_leader="a", pinned=True),
                            random.Random(0))
    net.applied["d"] = []
    net.call("a", "reconfigure", "add", ("a", "b", "c", "d"))
    net.run_until(T)
    assert net.done["add"][1].ok
    assert net.reps["a"].members == ("a", "b", "c", "d")
    assert net.reps["a"].quorum == 3
    with pytest.raises(InvalidChange):
        check_single_change(("a", "b"), ("c", "d"))


def test_leader_read_sees_committed_write():
    net = Net(["a", "b", "c"], designated_leader="a", pinned=True)
    net.call("a", "propose", "w", "k/x", b"v")
    net.run_until(T)
    net.call("a", "read_leader", "r", "k/x")
    net.run_until(2 * T)
    assert net.done["r"][1].value == b"v"
    net.call("b", "read_leader", "r2", "k/x")
    assert net.done["r2"][1].status == "NotLeader" and net.done["r2"][1].hint == "a"


def test_read_quorum_not_found_before_any_write():
    net = Net(["a", "b", "c"], designated_leader="a", pinned=True)
    net.call("b", "read_quorum", "r", "k/x")
    net.run_until(T)
    assert net.done["r"][1].status == "NotFound"


def test_quorum_sizes():
    assert [majority(n) for n in range(1, 8)] == [1, 2, 2, 3, 3, 4, 4]
    assert [minority_quorum(n) for n in range(1, 8)] == [1, 1, 1, 2, 2, 3, 3]


def _chaos_run(seed, quorum):
    rng = random.Random(seed)
    members = ["a", "b", "c", "d", "e"]
    net = Net(members, seed=seed, quorum=quorum)
    committed: dict = {}
    for step in range(12):
        if rng.random() < 0.5:
            net.cut = set(rng.sample(members, 2))
        else:
            net.cut = set()
        net.down = set(rng.sample(members, 1)) if rng.random() < 0.3 else set()
        for m in members:
            if m not in net.down and net.reps[m].role == "leader":
                net.call(m, "propose", f"{seed}.{step}.{m}", "k/x", f"{step}{m}".encode())
        net.run_until(net.now + 3 * T)
    for m in members:
        for e in net.applied[m]:
            committed.setdefault(e.index, set()).add((e.term, e.kind, e.value))
    return committed


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_no_index_commits_two_entries(seed):
    committed = _chaos_run(seed, majority)
    assert all(len(v) == 1 for v in committed.values())


def test_minority_quorum_mutant_breaks_safety():
    assert any(any(len(v) > 1 for v in _chaos_run(s, minority_quorum).values()) for s in range(30))
