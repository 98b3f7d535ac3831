"""Correctness checkers. All of them are pure functions of a stored trace."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import HistoryTooLarge, NotQuiescent
from ..scenario import Scenario
from ..trace import TraceLog
from ..types import CoordinationKey, ReadMode, Strategy

MAX_HISTORY = 8
QUIESCENT_INTERVALS = 20
INF = float("inf")


@dataclass(frozen=True)
class Op:
    """One client operation on a register, as seen from outside."""

    op_id: str
    kind: str  # write | read
    value: str | None  # hex; None for "never written"
    start: float
    end: float  # INF when the outcome is unknown
    optional: bool = False  # failed write: may or may not have taken effect


@dataclass
class Verdict:
    name: str
    ok: bool
    detail: str = ""
    witness: list = field(default_factory=list)

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'} {self.name}" + (f": {self.detail}" if self.detail else "")


# -- consensus safety ------------------------------------------------------------


def check_safety(trace: TraceLog) -> Verdict:
    """At most one committed (term, value) per (group, index); one leader per (group, term)."""
    applied: dict[tuple, set] = {}
    for r in trace.of_kind("apply"):
        f = r.fields()
        applied.setdefault((f["group"], int(f["index"])), set()).add((int(f["term"]), f["entry"], r.key, f["value"]))
    for slot, seen in sorted(applied.items()):
        if len(seen) > 1:
            return Verdict("safety", False, f"{slot[0]} index {slot[1]} committed {len(seen)} distinct entries",
                           sorted(seen))
    leaders: dict[tuple, set] = {}
    for r in trace.of_kind("leader"):
        f = r.fields()
        leaders.setdefault((f["group"], int(f["term"])), set()).add(r.src)
    for (group, term), who in sorted(leaders.items()):
        if len(who) > 1:
            return Verdict("safety", False, f"{group} term {term} had leaders {sorted(who)}", sorted(who))
    return Verdict("safety", True, f"{len(applied)} slots, {len(leaders)} terms")


# -- linearizability ---------------------------------------------------------------


def _search(ops: list[Op]) -> list[Op] | None:
    """Some legal sequential order respecting real time, or None.

    Depth-first over candidate next operations: an op may go next only when
    no other remaining op finished before it started. Optional ops may also
    be dropped entirely.
    """
    n = len(ops)
    seen: set = set()

    def go(remaining: frozenset, current: str | None, prefix: list) -> list | None:
        if not remaining:
            return prefix
        state = (remaining, current)
        if state in seen:
            return None
        seen.add(state)
        rem = [ops[i] for i in sorted(remaining)]
        min_end = min(o.end for o in rem if not o.optional) if any(not o.optional for o in rem) else INF
        if all(o.optional for o in rem):
            return prefix
        for i in sorted(remaining):
            op = ops[i]
            if op.start > min_end:
                continue
            if op.kind == "read" and op.value != current:
                continue
            nxt = op.value if op.kind == "write" else current
            got = go(remaining - {i}, nxt, prefix + [op])
            if got is not None:
                return got
        for i in sorted(remaining):
            if ops[i].optional:
                got = go(remaining - {i}, current, prefix)
                if got is not None:
                    return got
        return None

    return go(frozenset(range(n)), None, [])


def linearizable(ops: list[Op], limit: int = MAX_HISTORY) -> list[Op] | None:
    """A witness linearization, or None when none exists."""
    if len(ops) > limit:
        raise HistoryTooLarge(f"{len(ops)} operations exceed the exhaustive bound of {limit}")
    return _search(ops)


def minimal_witness(ops: list[Op]) -> list[Op]:
    """Shrink a non-linearizable history until dropping any further op makes it linearizable."""
    core = list(ops)
    changed = True
    while changed:
        changed = False
        for i in range(len(core)):
            op = core[i]
            trial = core[:i] + core[i + 1:]
            # Keep writes whose value a remaining read returned, otherwise the
            # witness degenerates to "a read of a value nobody wrote".
            if op.kind == "write" and any(o.kind == "read" and o.value == op.value for o in trial):
                continue
            if trial and _search(trial) is None:
                core = trial
                changed = True
                break
    return sorted(core, key=lambda o: (o.start, o.op_id))


def check_linearizable(ops: list[Op], name: str = "linearizable") -> Verdict:
    order = linearizable(ops)
    if order is not None:
        return Verdict(name, True, witness=[o.op_id for o in order])
    witness = minimal_witness(ops)
    return Verdict(name, False, "no legal order: " + ", ".join(
        f"{o.op_id}:{o.kind}({o.value})@[{o.start},{o.end}]" for o in witness), [o.op_id for o in witness])


def strict_histories(trace: TraceLog, scenario: Scenario) -> dict[str, list[Op]]:
    """Per strict key, the externally visible history (local-cache reads excluded)."""
    reg = scenario.registry()
    starts = {r.fields()["op"]: r for r in trace.of_kind("op_start")}
    out: dict[str, list[Op]] = {}
    for r in trace.of_kind("op_end"):
        f = r.fields()
        s = starts.get(f["op"])
        if s is None or not r.key:
            continue
        d = reg.lookup(CoordinationKey.parse(r.key))
        if d.strategy is not Strategy.STRICT:
            continue
        sf = s.fields()
        kind = sf["kind"]
        ok = f["outcome"] == "ok"
        if kind == "read":
            if d.read_mode is ReadMode.LOCAL_CACHE:
                continue
            if f["outcome"] == "NotFound":
                out.setdefault(r.key, []).append(Op(f["op"], "read", None, s.time_us, r.time_us))
            elif ok:
                out.setdefault(r.key, []).append(Op(f["op"], "read", f["value"], s.time_us, r.time_us))
        elif kind == "write":
            out.setdefault(r.key, []).append(
                Op(f["op"], "write", sf["value"], s.time_us, r.time_us if ok else INF, optional=not ok))
    for ops in out.values():
        ops.sort(key=lambda o: (o.start, o.op_id))
    return out


def check_histories(trace: TraceLog, scenario: Scenario) -> list[Verdict]:
    return [check_linearizable(ops, f"linearizable[{key}]")
            for key, ops in sorted(strict_histories(trace, scenario).items())]


# -- convergence -------------------------------------------------------------------


@dataclass
class Divergence:
    key: str
    nodes: list
    values: list


def check_convergence(trace: TraceLog, scenario: Scenario | None = None) -> Verdict:
    """All live participants of every eventual namespace hold equal states at the end."""
    end = trace.of_kind("end")
    if not end:
        raise NotQuiescent("trace has no end record (truncated run)")
    ef = end[-1].fields()
    end_us = int(ef["end_us"])
    settled = max(int(ef["last_write_us"]), int(ef["last_fault_us"]))
    states: dict[str, dict[str, dict[str, str]]] = {}
    for r in trace.of_kind("state"):
        f = r.fields()
        states.setdefault(f["namespace"], {}).setdefault(r.src, {})[r.key] = f["state"]
    divergent: list[Divergence] = []
    for p in trace.of_kind("participants"):
        f = p.fields()
        interval = int(f["interval_us"])
        if end_us - settled < QUIESCENT_INTERVALS * interval:
            raise NotQuiescent(f"{f['namespace']}: only {end_us - settled} us after last write/fault, "
                               f"need {QUIESCENT_INTERVALS} x {interval} us")
        members = [m for m in f["members"].split(",") if m]
        held = states.get(f["namespace"], {})
        keys = sorted({k for m in members for k in held.get(m, {})})
        for key in keys:
            values = [held.get(m, {}).get(key) for m in members]
            if len(set(values)) > 1:
                divergent.append(Divergence(key, members, values))
    if divergent:
        d = divergent[0]
        return Verdict("convergence", False, f"{len(divergent)} divergent keys, first {d.key}",
                       [(d.key, n, v) for n, v in zip(d.nodes, d.values)])
    return Verdict("convergence", True)


# -- scoping -----------------------------------------------------------------------


def check_scoping(trace: TraceLog, scenario: Scenario) -> Verdict:
    """Every protocol message stays inside the participants of its scope."""
    view = scenario.initial_view()
    allowed_rs: dict[str, set] = {r: set(m) for r, m in view.replica_sets.items()}
    for r in trace.of_kind("view"):
        f = r.fields()
        allowed_rs.setdefault(f["set"], set()).update(m for m in f["members"].split(",") if m)
    bad = []
    for r in trace.of_kind("send", "drop"):
        scope = r.fields().get("scope", "")
        dst = r.dst
        if scope == "system":
            fine = dst in view.system_nodes
        elif scope.startswith("rs:"):
            fine = dst in allowed_rs.get(scope[3:], ())
        elif scope.startswith("node:"):
            fine = dst.split("/")[0] == scope[5:] and "/" in dst
        else:
            fine = False
        if not fine:
            bad.append((r.seq, scope, dst))
    bad.extend((r.seq, r.fields().get("scope"), r.src) for r in trace.of_kind("scope_violation"))
    if bad:
        return Verdict("scoping", False, f"{len(bad)} messages left their scope", bad[:10])
    return Verdict("scoping", True)


# -- all together ---------------------------------------------------------------------


def check_all(trace: TraceLog, scenario: Scenario) -> list[Verdict]:
    out = [check_safety(trace)]
    out.extend(check_histories(trace, scenario))
    try:
        out.append(check_convergence(trace, scenario))
    except NotQuiescent as exc:
        out.append(Verdict("convergence", True, f"skipped: {exc}"))
    out.append(check_scoping(trace, scenario))
    return out
