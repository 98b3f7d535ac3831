"""Metrics derived from a trace, written as a tidy CSV.

Schema ``fogcoord-metrics/1``: one row per ``(section, subject, metric, value)``.

sections:
    op            subject=op id; metrics kind, key, node, outcome, latency_ms
    staleness     subject=key; metrics samples, median_ms, p99_ms, max_ms
    messages      subject=scope|msg_kind; metrics sent, dropped, bytes
    scope_bytes   subject=scope; metric bytes
    availability  subject=epoch index; metrics start_ms, end_ms, ops, ok, ratio
    run           subject=run; metrics schema (first row), end_ms, dropped, scope_violations
"""

from __future__ import annotations

import csv
import io
import statistics
from pathlib import Path

from ..trace import TraceLog

SCHEMA = "fogcoord-metrics/1"
COLUMNS = ("section", "subject", "metric", "value")


def percentile(values: list[float], q: float) -> float:
    """Nearest-rank percentile; ``q`` in [0, 100]."""
    if not values:
        return float("nan")
    ordered = sorted(values)
    rank = max(1, -(-len(ordered) * q // 100))
    return ordered[int(rank) - 1]


def _ms(us) -> float:
    return int(us) / 1000


def op_rows(trace: TraceLog) -> list[dict]:
    starts = {r.fields()["op"]: r for r in trace.of_kind("op_start")}
    out = []
    for r in trace.of_kind("op_end"):
        f = r.fields()
        s = starts[f["op"]]
        out.append({"op": f["op"], "kind": f["kind"], "key": r.key, "node": s.src,
                    "outcome": f["outcome"], "latency_ms": _ms(f["latency_us"]), "start_ms": _ms(s.time_us)})
    return out


def compute(trace: TraceLog) -> list[tuple]:
    rows: list[tuple] = [("run", "run", "schema", SCHEMA)]
    for o in op_rows(trace):
        for m in ("kind", "key", "node", "outcome", "latency_ms"):
            rows.append(("op", o["op"], m, o[m]))

    lags: dict[str, list[float]] = {}
    for r in trace.of_kind("visible"):
        lags.setdefault(r.key, []).append(_ms(r.fields()["lag_us"]))
    for key in sorted(lags):
        v = lags[key]
        rows += [("staleness", key, "samples", len(v)), ("staleness", key, "median_ms", statistics.median(v)),
                 ("staleness", key, "p99_ms", percentile(v, 99)), ("staleness", key, "max_ms", max(v))]

    msgs: dict[tuple, list[int]] = {}
    scope_bytes: dict[str, int] = {}
    for r in trace.of_kind("send", "drop"):
        scope = r.fields().get("scope", "")
        cell = msgs.setdefault((scope, r.msg_kind), [0, 0, 0])
        if r.kind == "send":
            cell[0] += 1
        else:
            cell[1] += 1
        cell[2] += r.size_bytes
        scope_bytes[scope] = scope_bytes.get(scope, 0) + r.size_bytes
    for (scope, kind), (sent, dropped, size) in sorted(msgs.items()):
        subject = f"{scope}|{kind}"
        rows += [("messages", subject, "sent", sent), ("messages", subject, "dropped", dropped),
                 ("messages", subject, "bytes", size)]
    for scope, size in sorted(scope_bytes.items()):
        rows.append(("scope_bytes", scope, "bytes", size))

    # Availability per partition epoch: epochs split at partition/heal events.
    end = trace.of_kind("end")
    end_us = int(end[-1].fields()["end_us"]) if end else (trace.rows[-1].time_us if trace.rows else 0)
    cuts = [0] + [r.time_us for r in trace.of_kind("fault") if r.msg_kind in ("partition", "heal")] + [end_us + 1]
    ops = op_rows(trace)
    for i in range(len(cuts) - 1):
        lo, hi = cuts[i], cuts[i + 1]
        inside = [o for o in ops if lo / 1000 <= o["start_ms"] < hi / 1000]
        ok = sum(o["outcome"] == "ok" for o in inside)
        rows += [("availability", str(i), "start_ms", _ms(lo)), ("availability", str(i), "end_ms", _ms(min(hi, end_us))),
                 ("availability", str(i), "ops", len(inside)), ("availability", str(i), "ok", ok),
                 ("availability", str(i), "ratio", ok / len(inside) if inside else "")]
    dropped = len(trace.of_kind("drop"))
    rows += [("run", "run", "end_ms", _ms(end_us)), ("run", "run", "dropped", dropped),
             ("run", "run", "scope_violations", len(trace.of_kind("scope_violation")))]
    return rows


def to_csv(rows: list[tuple]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    w.writerows(rows)
    return buf.getvalue().encode("utf-8")


def write(trace: TraceLog, path: str | Path) -> Path:
    path = Path(path)
    path.write_bytes(to_csv(compute(trace)))
    return path


def read(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
