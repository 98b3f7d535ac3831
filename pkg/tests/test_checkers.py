import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fogcoord.errors import HistoryTooLarge, NotQuiescent
from fogcoord.harness.checkers import (
    INF,
    Op,
    check_all,
    check_convergence,
    check_linearizable,
    check_safety,
    check_scoping,
    linearizable,
    minimal_witness,
)
from fogcoord.scenario import NodeSpec, Scenario, Topology, WorkloadOp
from fogcoord.simnet import Simulation
from fogcoord.trace import TraceLog
from fogcoord.types import CrdtKind, DataTypeDescriptor, Level, Strategy


def brute_force(ops):
    """Reference check: try every subset of optional ops and every permutation."""
    optional = [o for o in ops if o.optional]
    fixed = [o for o in ops if not o.optional]
    for k in range(len(optional) + 1):
        for chosen in itertools.combinations(optional, k):
            for perm in itertools.permutations(fixed + list(chosen)):
                # Real-time: if a finished before b started, a precedes b.
                pos = {o.op_id: i for i, o in enumerate(perm)}
                if any(a.end < b.start and pos[a.op_id] > pos[b.op_id] for a in perm for b in perm):
                    continue
                cur = None
                legal = True
                for o in perm:
                    if o.kind == "write":
                        cur = o.value
                    elif o.value != cur:
                        legal = False
                        break
                if legal:
                    return True
    return False


def w(op_id, v, s, e, optional=False):
    return Op(op_id, "write", v, s, e, optional)


def r(op_id, v, s, e):
    return Op(op_id, "read", v, s, e)


def test_concurrent_writes_then_contradicting_reads():
    # w(x) and w(y) overlap; later, r->y then r->x in sequence: no order fits.
    ops = [w("wx", "x", 0, 10), w("wy", "y", 0, 10), r("r1", "y", 20, 30), r("r2", "x", 40, 50)]
    assert brute_force(ops) is False
    v = check_linearizable(ops)
    assert not v.ok
    assert sorted(v.witness) == ["r1", "r2", "wx", "wy"]


def test_reads_agreeing_with_one_order_pass():
    ops = [w("wx", "x", 0, 10), w("wy", "y", 0, 10), r("r1", "y", 20, 30), r("r2", "y", 40, 50)]
    assert brute_force(ops) is True
    assert check_linearizable(ops).ok


def test_read_of_never_written_value_fails():
    ops = [w("w", "a", 0, 10), r("r", "b", 20, 30)]
    assert brute_force(ops) is False
    assert not check_linearizable(ops).ok


def test_write_then_read():
    assert check_linearizable([w("w", "a", 0, 10), r("r", "a", 20, 30)]).ok
    assert check_linearizable([r("r0", None, 0, 5), w("w", "a", 10, 20)]).ok
    assert not check_linearizable([w("w", "a", 0, 10), r("r", None, 20, 30)]).ok


def test_failed_write_may_or_may_not_take_effect():
    lost = w("w2", "b", 15, INF, optional=True)
    assert check_linearizable([w("w1", "a", 0, 10), lost, r("r", "a", 20, 30)]).ok
    assert check_linearizable([w("w1", "a", 0, 10), lost, r("r", "b", 20, 30)]).ok


def test_history_too_large():
    ops = [w(f"w{i}", str(i), i, i + 1) for i in range(9)]
    with pytest.raises(HistoryTooLarge):
        linearizable(ops)
    assert linearizable(ops[:8]) is not None


def test_minimal_witness_is_one_minimal():
    ops = [w("w0", "z", 0, 1), w("wx", "x", 2, 10), w("wy", "y", 2, 10),
           r("r1", "y", 20, 30), r("r2", "x", 40, 50), r("r3", "x", 60, 70)]
    core = minimal_witness(ops)
    assert not brute_force(core)
    for drop in core:
        rest = [o for o in core if o is not drop]
        kept_write = drop.kind == "write" and any(o.kind == "read" and o.value == drop.value for o in rest)
        assert kept_write or brute_force(rest)


timeline = st.lists(
    st.tuples(st.sampled_from(["write", "read"]), st.sampled_from([None, "a", "b", "c"]),
              st.integers(0, 40), st.integers(1, 30), st.booleans()),
    min_size=1, max_size=6,
)


@settings(max_examples=300, deadline=None)
@given(timeline)
def test_search_agrees_with_brute_force(history):
    ops = []
    for i, (kind, value, start, dur, flag) in enumerate(history):
        if kind == "write":
            value = value or "a"
            ops.append(w(f"o{i}", value, start, INF if flag else start + dur, optional=flag))
        else:
            ops.append(r(f"o{i}", value, start, start + dur))
    assert (linearizable(ops) is not None) == brute_force(ops)


# -- trace-level checks ----------------------------------------------------------------


def trace_of(*rows):
    t = TraceLog()
    for row in rows:
        t.add(*row)
    return t


def test_safety_flags_conflicting_commit():
    ok = trace_of((1, "apply", "n1", "", "k/x", "", 0, {"group": "g", "index": 1, "term": 1, "entry": "e", "value": "01"}),
                  (2, "apply", "n2", "", "k/x", "", 0, {"group": "g", "index": 1, "term": 1, "entry": "e", "value": "01"}))
    assert check_safety(ok).ok
    bad = trace_of((1, "apply", "n1", "", "k/x", "", 0, {"group": "g", "index": 1, "term": 1, "entry": "e", "value": "01"}),
                   (2, "apply", "n2", "", "k/x", "", 0, {"group": "g", "index": 1, "term": 2, "entry": "f", "value": "02"}))
    assert not check_safety(bad).ok
    two = trace_of((1, "leader", "n1", "", "", "", 0, {"group": "g", "term": 3}),
                   (2, "leader", "n2", "", "", "", 0, {"group": "g", "term": 3}))
    assert not check_safety(two).ok


CFG = DataTypeDescriptor("cfg", Strategy.EVENTUAL, Level.system(), crdt_kind=CrdtKind.LWW_REGISTER)
PLACE = DataTypeDescriptor("place", Strategy.EVENTUAL, Level.replica_set("r1"), crdt_kind=CrdtKind.OR_SET)


def small():
    return Scenario(Topology({n: NodeSpec() for n in ("n1", "n2", "n3")}), (CFG, PLACE),
                    {"r1": frozenset({"n1", "n2"})},
                    workload=(WorkloadOp("w", 1_000, "n1", "write", "cfg/a", b"v"),
                              WorkloadOp("p", 2_000, "n2", "add", "place/f", b"m")))


def test_convergence_on_full_run_and_not_quiescent_on_truncation():
    sc = small()
    res = Simulation(sc).run()
    assert check_convergence(res.trace, sc).ok
    truncated = TraceLog(row for row in res.trace.rows if row.kind != "end")
    with pytest.raises(NotQuiescent):
        check_convergence(truncated, sc)
    short = Simulation(Scenario(sc.topology, sc.data_types, sc.replica_sets, workload=sc.workload,
                                duration_us=100_000)).run()
    with pytest.raises(NotQuiescent):
        check_convergence(short.trace, sc)


def test_convergence_detects_divergent_state():
    sc = small()
    res = Simulation(sc).run()
    rows = []
    for row in res.trace.rows:
        if row.kind == "state" and row.src == "n3":
            row = type(row)(*row.as_tuple()[:8], row.note.replace("state=", "state=00"))
        rows.append(row)
    v = check_convergence(TraceLog(rows), sc)
    assert not v.ok and "cfg/a" in v.detail


def test_scoping_pass_and_violation():
    sc = small()
    res = Simulation(sc).run()
    assert check_scoping(res.trace, sc).ok
    assert all(v.ok for v in check_all(res.trace, sc))
    leak = TraceLog(res.trace.rows)
    leak.add(5_000, "send", "n1", "n3", "place/f", "Update", 0, {"scope": "rs:r1"})
    v = check_scoping(leak, sc)
    assert not v.ok and v.witness[0][2] == "n3"
