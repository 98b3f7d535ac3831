"""Leader-based, log-replicated majority consensus for strict data.

A :class:`Replica` is one member's deterministic state machine for one
consensus group. It never touches the network or a clock: every entry point
takes ``now`` (integer microseconds) and returns a list of effects that the
caller must carry out. Timers are expressed through :meth:`Replica.next_wake`;
the caller invokes :meth:`Replica.tick` at or after that time.

Two deployment modes share the code:

* elections enabled (randomised timeouts, or rank-staggered timeouts for
  leader-follower groups with a designated initial leader);
* pinned leader (primary copy): the designated member leads forever and no
  vote is ever requested.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterable

from . import codec
from .errors import InvalidChange
from .types import Address, address_key

FOLLOWER, CANDIDATE, LEADER = "follower", "candidate", "leader"


def majority(n: int) -> int:
    return n // 2 + 1


def minority_quorum(n: int) -> int:
    """Deliberately unsafe quorum size, used only by the mutant build."""
    return max(1, n // 2)


# -- log and wire messages ---------------------------------------------------

@codec.register
@dataclass(frozen=True)
class LogEntry:
    term: int
    index: int
    key: str | None
    value: bytes
    kind: str = "put"  # put | noop | config
    members: tuple = ()


@codec.register
@dataclass(frozen=True)
class AppendEntries:
    term: int
    leader: Any
    prev_index: int
    prev_term: int
    entries: tuple
    commit_index: int
    read_seq: int = 0
    quorum_ok: bool = True


@codec.register
@dataclass(frozen=True)
class AppendReply:
    term: int
    success: bool
    match_index: int
    read_seq: int = 0


@codec.register
@dataclass(frozen=True)
class VoteRequest:
    term: int
    candidate: Any
    last_index: int
    last_term: int


@codec.register
@dataclass(frozen=True)
class VoteReply:
    term: int
    granted: bool


@codec.register
@dataclass(frozen=True)
class ReadProbe:
    read_id: int
    key: str


@codec.register
@dataclass(frozen=True)
class ReadReply:
    read_id: int
    found: bool
    term: int
    index: int
    value: bytes
    committed: bool


MESSAGE_KINDS = {
    AppendEntries: "AppendEntries",
    AppendReply: "AppendReply",
    VoteRequest: "VoteRequest",
    VoteReply: "VoteReply",
    ReadProbe: "ReadProbe",
    ReadReply: "ReadReply",
}


# -- results and effects -----------------------------------------------------

@codec.register
@dataclass(frozen=True)
class Result:
    """Outcome of a client-visible group operation.

    ``status`` is ``"ok"`` or a failure name: NotFound, NoQuorum, Timeout,
    NotLeader, Retryable, NotCommitted, InvalidChange, NotParticipant.
    """

    status: str
    value: Any = None
    index: int = 0
    term: int = 0
    hint: Any = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass(frozen=True)
class Send:
    dst: Address
    msg: Any


@dataclass(frozen=True)
class Done:
    token: Hashable
    result: Result


@dataclass(frozen=True)
class Applied:
    entry: LogEntry


@dataclass(frozen=True)
class BecameLeader:
    term: int


@dataclass(frozen=True)
class SteppedDown:
    term: int


# -- durable and configuration state -----------------------------------------

@dataclass
class StableStorage:
    """Per-member record that survives simulated crashes."""

    term: int = 0
    voted_for: Any = None
    log: list = field(default_factory=list)
    config: tuple | None = None  # last committed membership


@dataclass(frozen=True)
class GroupConfig:
    election_timeout_us: int
    heartbeat_us: int = 0
    designated_leader: Any = None
    pinned: bool = False
    quorum: Callable[[int], int] = majority

    def __post_init__(self):
        if self.election_timeout_us <= 0:
            raise ValueError("election timeout must be positive")
        if self.heartbeat_us <= 0:
            object.__setattr__(self, "heartbeat_us", max(1, self.election_timeout_us // 5))
        if self.pinned and self.designated_leader is None:
            raise ValueError("a pinned group needs a designated leader")


@dataclass
class _LeaderRead:
    token: Hashable
    key: str
    read_index: int | None = None
    seq: int | None = None


@dataclass
class _QuorumRead:
    token: Hashable
    key: str
    read_id: int
    replies: dict = field(default_factory=dict)
    retry_at: int | None = None
    last_count: int = 0


def _sorted(addrs: Iterable[Address]) -> tuple:
    return tuple(sorted(set(addrs), key=address_key))


class Replica:
    """One member of a consensus group."""

    def __init__(self, group: str, me: Address, members: Iterable[Address], config: GroupConfig,
                 rng: random.Random, storage: StableStorage | None = None, now: int = 0):
        self.group = group
        self.me = me
        self.initial_members = _sorted(members)
        self.cfg = config
        self.rng = rng
        self.store = storage if storage is not None else StableStorage()
        self._read_ids = 0
        self._reset_volatile(now)
        if self.store.term == 0 and config.designated_leader is not None:
            # Leader-follower bootstrap: term 1 starts with the designated leader.
            self.store.term = 1
            self.store.voted_for = config.designated_leader
            if me == config.designated_leader:
                self._become_leader(now, announce=False)
            else:
                self.leader_hint = config.designated_leader
                self.last_leader_contact = now
                self.leader_quorum_ok = True

    # -- state helpers ------------------------------------------------------

    def _reset_volatile(self, now: int) -> None:
        self.role = FOLLOWER
        self.commit_index = 0
        self.last_applied = 0
        self.kv: dict[str, tuple[bytes, int, int]] = {}
        self.leader_hint = self.cfg.designated_leader if self.cfg.pinned else None
        self.next_index: dict = {}
        self.match_index: dict = {}
        self.votes: set = set()
        self.pending: dict[int, tuple[int, Hashable]] = {}
        self.leader_reads: list[_LeaderRead] = []
        self.quorum_reads: dict[Hashable, _QuorumRead] = {}
        self.read_seq = 0
        self.acked_seq: dict = {}
        self.last_ack: dict = {}
        self.last_leader_contact: int | None = None
        self.leader_quorum_ok = False
        self.heartbeat_due: int | None = None
        self.term_start_index = 0
        self.election_deadline = self._next_election_deadline(now)

    def restart(self, now: int) -> list:
        """Crash recovery: drop volatile state, keep the stable record."""
        self._reset_volatile(now)
        out: list = []
        if self.cfg.pinned and self.me == self.cfg.designated_leader:
            self._become_leader(now, announce=False)
            out.append(BecameLeader(self.term))
            out.extend(self._broadcast(now))
        return out

    @property
    def term(self) -> int:
        return self.store.term

    @property
    def log(self) -> list:
        return self.store.log

    @property
    def last_index(self) -> int:
        return len(self.store.log)

    @property
    def last_term(self) -> int:
        return self.store.log[-1].term if self.store.log else 0

    def term_at(self, index: int) -> int:
        return self.store.log[index - 1].term if index > 0 else 0

    @property
    def members(self) -> tuple:
        return self.store.config if self.store.config is not None else self.initial_members

    @property
    def quorum(self) -> int:
        return self.cfg.quorum(len(self.members))

    def is_member(self) -> bool:
        return self.me in self.members

    def _pending_config(self) -> LogEntry | None:
        for entry in reversed(self.store.log[self.commit_index:]):
            if entry.kind == "config":
                return entry
        return None

    def _replication_targets(self) -> tuple:
        targets = set(self.members)
        pending = self._pending_config()
        if pending is not None:
            targets |= set(pending.members)
        targets.discard(self.me)
        return _sorted(targets)

    def _election_delay(self) -> int | None:
        if self.cfg.pinned:
            return None
        members = self.members
        if members == (self.me,):
            return 0
        t = self.cfg.election_timeout_us
        if self.cfg.designated_leader is not None and self.me in members:
            rank = members.index(self.me)
            return t + rank * t // 2
        return self.rng.randint(t, 2 * t)

    def _next_election_deadline(self, now: int) -> int | None:
        delay = self._election_delay()
        return None if delay is None else now + delay

    def next_wake(self) -> int | None:
        times = []
        if self.role == LEADER:
            if self.heartbeat_due is not None:
                times.append(self.heartbeat_due)
        elif self.election_deadline is not None and self.is_member():
            times.append(self.election_deadline)
        times.extend(q.retry_at for q in self.quorum_reads.values() if q.retry_at is not None)
        return min(times) if times else None

    def has_quorum_contact(self, now: int) -> bool:
        """Whether this member currently sees a working majority."""
        window = 2 * self.cfg.election_timeout_us
        if self.role == LEADER:
            fresh = sum(1 for m in self.members if m == self.me or now - self.last_ack.get(m, -window - 1) <= window)
            return fresh >= self.quorum
        if self.last_leader_contact is None or self.leader_hint is None:
            return False
        return now - self.last_leader_contact <= window and self.leader_quorum_ok

    # -- persistence-affecting transitions ----------------------------------

    def _adopt_term(self, term: int, now: int) -> list:
        out: list = []
        was_leader = self.role == LEADER
        self.store.term = term
        self.store.voted_for = None
        self.role = FOLLOWER
        self.votes = set()
        if was_leader:
            out.append(SteppedDown(term))
        return out

    def _become_leader(self, now: int, announce: bool = True) -> list:
        self.role = LEADER
        self.leader_hint = self.me
        self.votes = set()
        nxt = self.last_index + 1
        self.next_index = {m: nxt for m in self._replication_targets()}
        self.match_index = {m: 0 for m in self._replication_targets()}
        self.last_ack = {}
        self.acked_seq = {}
        if self.last_index > self.commit_index and not self.cfg.pinned:
            # Entries of earlier terms only commit behind one of our own.
            self.store.log.append(LogEntry(self.term, self.last_index + 1, None, b"", "noop"))
        self.term_start_index = self.last_index
        self.heartbeat_due = now
        return [BecameLeader(self.term)] if announce else []

    def _start_election(self, now: int) -> list:
        out = []
        self.store.term += 1
        self.store.voted_for = self.me
        self.role = CANDIDATE
        self.leader_hint = None
        self.votes = {self.me}
        self.election_deadline = self._next_election_deadline(now)
        if len(self.votes & set(self.members)) >= self.quorum:
            out.extend(self._become_leader(now))
            out.extend(self._advance_commit(now))
            out.extend(self._broadcast(now))
            return out
        req = VoteRequest(self.term, self.me, self.last_index, self.last_term)
        out.extend(Send(m, req) for m in self.members if m != self.me)
        return out

    # -- timers ---------------------------------------------------------------

    def tick(self, now: int) -> list:
        out: list = []
        if self.role == LEADER:
            if self.heartbeat_due is not None and now >= self.heartbeat_due:
                out.extend(self._broadcast(now))
        elif (self.election_deadline is not None and now >= self.election_deadline
              and self.is_member() and not self.cfg.pinned):
            out.extend(self._start_election(now))
        for q in list(self.quorum_reads.values()):
            if q.retry_at is not None and now >= q.retry_at:
                out.extend(self._probe(q, now))
        return out

    # -- replication ------------------------------------------------------------

    def _append_entries_for(self, peer: Address, now: int) -> AppendEntries:
        nxt = self.next_index.get(peer, self.last_index + 1)
        nxt = max(1, min(nxt, self.last_index + 1))
        prev = nxt - 1
        entries = tuple(self.store.log[prev:])
        return AppendEntries(self.term, self.me, prev, self.term_at(prev), entries,
                             self.commit_index, self.read_seq, self.has_quorum_contact(now))

    def _broadcast(self, now: int) -> list:
        self.heartbeat_due = now + self.cfg.heartbeat_us
        return [Send(p, self._append_entries_for(p, now)) for p in self._replication_targets()]

    def _advance_commit(self, now: int) -> list:
        if self.role != LEADER:
            return []
        members = self.members
        for n in range(self.last_index, self.commit_index, -1):
            if self.term_at(n) != self.term:
                break
            count = sum(1 for m in members
                        if (self.last_index if m == self.me else self.match_index.get(m, 0)) >= n)
            if count >= self.quorum:
                self.commit_index = n
                return self._apply(now)
        return []

    def _apply(self, now: int) -> list:
        out: list = []
        while self.last_applied < self.commit_index:
            self.last_applied += 1
            entry = self.store.log[self.last_applied - 1]
            if entry.kind == "put":
                self.kv[entry.key] = (entry.value, entry.term, entry.index)
            elif entry.kind == "config":
                self.store.config = tuple(entry.members)
            out.append(Applied(entry))
            waiting = self.pending.pop(entry.index, None)
            if waiting is not None:
                term, token = waiting
                if term == entry.term:
                    out.append(Done(token, Result("ok", index=entry.index, term=entry.term)))
                else:
                    out.append(Done(token, Result("NotCommitted")))
            if entry.kind == "config" and self.role == LEADER:
                for m in self._replication_targets():
                    self.next_index.setdefault(m, self.last_index + 1)
                    self.match_index.setdefault(m, 0)
                if self.me not in self.members:
                    # Removed ourselves: hand over by going quiet.
                    self.role = FOLLOWER
                    self.leader_hint = None
                    out.append(SteppedDown(self.term))
        if self.role == LEADER:
            out.extend(self._serve_leader_reads(now))
        return out

    # -- message handling -------------------------------------------------------

    def handle(self, src: Address, msg: Any, now: int) -> list:
        out: list = []
        if isinstance(msg, VoteRequest):
            if src not in self.members:
                return out
        term = getattr(msg, "term", None)
        if term is not None and term > self.store.term:
            out.extend(self._adopt_term(term, now))
        if isinstance(msg, AppendEntries):
            out.extend(self._on_append(src, msg, now))
        elif isinstance(msg, AppendReply):
            out.extend(self._on_append_reply(src, msg, now))
        elif isinstance(msg, VoteRequest):
            out.extend(self._on_vote_request(src, msg, now))
        elif isinstance(msg, VoteReply):
            out.extend(self._on_vote_reply(src, msg, now))
        elif isinstance(msg, ReadProbe):
            out.append(Send(src, self._read_reply(msg)))
        elif isinstance(msg, ReadReply):
            out.extend(self._on_read_reply(src, msg, now))
        else:
            raise TypeError(f"unknown consensus message {type(msg).__name__}")
        return out

    def _on_append(self, src: Address, msg: AppendEntries, now: int) -> list:
        if msg.term < self.term:
            return [Send(src, AppendReply(self.term, False, 0, msg.read_seq))]
        out: list = []
        if self.role == LEADER:
            # Same term, two leaders: impossible under a correct quorum rule.
            out.append(SteppedDown(self.term))
        self.role = FOLLOWER
        self.leader_hint = msg.leader
        self.last_leader_contact = now
        self.leader_quorum_ok = msg.quorum_ok
        self.election_deadline = self._next_election_deadline(now)
        if msg.prev_index > self.last_index or self.term_at(msg.prev_index) != msg.prev_term:
            hint = max(0, min(self.last_index, msg.prev_index - 1))
            out.append(Send(src, AppendReply(self.term, False, hint, msg.read_seq)))
            return out
        log = self.store.log
        for entry in msg.entries:
            if entry.index <= len(log):
                if log[entry.index - 1].term == entry.term:
                    continue
                del log[entry.index - 1:]
            log.append(entry)
        last_new = msg.prev_index + len(msg.entries)
        if msg.commit_index > self.commit_index:
            self.commit_index = min(msg.commit_index, last_new)
            out.extend(self._apply(now))
        out.append(Send(src, AppendReply(self.term, True, last_new, msg.read_seq)))
        return out

    def _on_append_reply(self, src: Address, msg: AppendReply, now: int) -> list:
        if self.role != LEADER or msg.term != self.term:
            return []
        self.last_ack[src] = now
        out: list = []
        if msg.success:
            if msg.match_index > self.match_index.get(src, 0):
                self.match_index[src] = msg.match_index
            self.next_index[src] = max(self.next_index.get(src, 1), msg.match_index + 1)
            if msg.read_seq > self.acked_seq.get(src, 0):
                self.acked_seq[src] = msg.read_seq
            out.extend(self._advance_commit(now))
            if self.role == LEADER:
                out.extend(self._serve_leader_reads(now))
                if self.next_index[src] <= self.last_index and src in self._replication_targets():
                    out.append(Send(src, self._append_entries_for(src, now)))
        else:
            self.next_index[src] = max(1, min(self.next_index.get(src, 1) - 1, msg.match_index + 1))
            out.append(Send(src, self._append_entries_for(src, now)))
        return out

    def _on_vote_request(self, src: Address, msg: VoteRequest, now: int) -> list:
        granted = False
        if msg.term == self.term and not self.cfg.pinned:
            up_to_date = (msg.last_term, msg.last_index) >= (self.last_term, self.last_index)
            if self.store.voted_for in (None, msg.candidate) and up_to_date:
                granted = True
                self.store.voted_for = msg.candidate
                self.election_deadline = self._next_election_deadline(now)
        return [Send(src, VoteReply(self.term, granted))]

    def _on_vote_reply(self, src: Address, msg: VoteReply, now: int) -> list:
        if self.role != CANDIDATE or msg.term != self.term or not msg.granted:
            return []
        self.votes.add(src)
        if len(self.votes & set(self.members)) >= self.quorum:
            out = self._become_leader(now)
            out.extend(self._advance_commit(now))
            out.extend(self._broadcast(now))
            return out
        return []

    # -- client operations ----------------------------------------------------

    def _not_leader(self, token: Hashable) -> list:
        if self.leader_hint is not None and self.leader_hint != self.me:
            return [Done(token, Result("NotLeader", hint=self.leader_hint))]
        return [Done(token, Result("Retryable"))]

    def propose(self, token: Hashable, key: str, value: bytes, now: int) -> list:
        if self.role != LEADER:
            return self._not_leader(token)
        entry = LogEntry(self.term, self.last_index + 1, key, bytes(value))
        self.store.log.append(entry)
        self.pending[entry.index] = (entry.term, token)
        out = self._advance_commit(now)
        out.extend(self._broadcast(now))
        return out

    def reconfigure(self, token: Hashable, new_members: Iterable[Address], now: int) -> list:
        new = _sorted(new_members)
        if self.role != LEADER:
            return self._not_leader(token)
        if self._pending_config() is not None:
            return [Done(token, Result("Retryable"))]
        old = set(self.members)
        if old == set(new):
            # Already in effect (a retried step).
            return [Done(token, Result("ok", index=self.commit_index, term=self.term))]
        if len(old.symmetric_difference(new)) != 1:
            return [Done(token, Result("InvalidChange"))]
        entry = LogEntry(self.term, self.last_index + 1, None, b"", "config", new)
        self.store.log.append(entry)
        self.pending[entry.index] = (entry.term, token)
        for m in self._replication_targets():
            self.next_index.setdefault(m, self.last_index)
            self.match_index.setdefault(m, 0)
        out = self._advance_commit(now)
        out.extend(self._broadcast(now))
        return out

    def read_leader(self, token: Hashable, key: str, now: int) -> list:
        """Leader read: confirm leadership with a majority round, then serve."""
        if self.role != LEADER:
            return self._not_leader(token)
        self.leader_reads.append(_LeaderRead(token, key))
        return self._serve_leader_reads(now)

    def _serve_leader_reads(self, now: int) -> list:
        out: list = []
        if not self.leader_reads or self.commit_index < self.term_start_index:
            return out
        members = self.members
        remaining = []
        new_round = False
        for r in self.leader_reads:
            if r.seq is None:
                if not new_round:
                    self.read_seq += 1
                    new_round = True
                r.read_index = self.commit_index
                r.seq = self.read_seq
            confirmed = sum(1 for m in members if m == self.me or self.acked_seq.get(m, 0) >= r.seq)
            if confirmed >= self.quorum and self.last_applied >= r.read_index:
                out.append(Done(r.token, self._value_result(r.key)))
            else:
                remaining.append(r)
        self.leader_reads = remaining
        if new_round and remaining:
            out.extend(self._broadcast(now))
        return out

    def _value_result(self, key: str) -> Result:
        if key not in self.kv:
            return Result("NotFound")
        value, term, index = self.kv[key]
        return Result("ok", value=value, index=index, term=term)

    def read_quorum(self, token: Hashable, key: str, now: int) -> list:
        """Query a majority; answer with the newest committed entry for key."""
        if not self.is_member():
            return [Done(token, Result("NotParticipant"))]
        self._read_ids += 1
        q = _QuorumRead(token, key, self._read_ids)
        self.quorum_reads[token] = q
        return self._probe(q, now)

    def _probe(self, q: _QuorumRead, now: int) -> list:
        self._read_ids += 1
        q.read_id = self._read_ids
        q.replies = {self.me: self._read_reply(ReadProbe(q.read_id, q.key))}
        q.retry_at = None
        out = [Send(m, ReadProbe(q.read_id, q.key)) for m in self.members if m != self.me]
        out.extend(self._decide_quorum_read(q, now))
        return out

    def _latest_entry(self, key: str) -> LogEntry | None:
        for entry in reversed(self.store.log):
            if entry.kind == "put" and entry.key == key:
                return entry
        return None

    def _read_reply(self, probe: ReadProbe) -> ReadReply:
        entry = self._latest_entry(probe.key)
        if entry is None:
            return ReadReply(probe.read_id, False, 0, 0, b"", False)
        return ReadReply(probe.read_id, True, entry.term, entry.index, entry.value,
                         entry.index <= self.commit_index)

    def _on_read_reply(self, src: Address, msg: ReadReply, now: int) -> list:
        for q in self.quorum_reads.values():
            if q.read_id == msg.read_id and q.retry_at is None:
                q.replies[src] = msg
                return self._decide_quorum_read(q, now)
        return []

    def _decide_quorum_read(self, q: _QuorumRead, now: int) -> list:
        counted = {m: r for m, r in q.replies.items() if m in self.members}
        q.last_count = len(counted)
        if len(counted) < self.quorum:
            return []
        found = [r for r in counted.values() if r.found]
        if not found:
            del self.quorum_reads[q.token]
            return [Done(q.token, Result("NotFound"))]
        best = max(found, key=lambda r: (r.term, r.index))
        if any(r.committed and (r.term, r.index) == (best.term, best.index) for r in found):
            del self.quorum_reads[q.token]
            return [Done(q.token, Result("ok", value=best.value, index=best.index, term=best.term))]
        # Newest entry not yet known committed: look again after a heartbeat.
        q.retry_at = now + self.cfg.heartbeat_us
        return []

    def cancel(self, token: Hashable, now: int) -> str:
        """Abandon a client operation at its deadline; returns the failure name."""
        q = self.quorum_reads.pop(token, None)
        if q is not None:
            return "NoQuorum" if q.last_count < self.quorum else "Timeout"
        self.leader_reads = [r for r in self.leader_reads if r.token != token]
        for index, (_, t) in list(self.pending.items()):
            if t == token:
                del self.pending[index]
        return "Timeout" if self.has_quorum_contact(now) else "NoQuorum"


def check_single_change(old: Iterable[Address], new: Iterable[Address]) -> None:
    if len(set(old).symmetric_difference(set(new))) != 1:
        raise InvalidChange("membership changes must add or remove exactly one member")
