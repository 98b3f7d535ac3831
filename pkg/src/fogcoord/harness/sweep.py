"""Parameter sweeps over strategy x level x write ratio x latency scale.

The template supplies topology, replica sets, timers and any background
data types and workload. Each cell adds a benchmark namespace ``bench``
with the cell's strategy and level and a seeded workload on it.
"""

from __future__ import annotations

import csv
import io
import itertools
import random
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from ..scenario import Scenario, WorkloadOp
from ..simnet import Simulation
from ..types import CrdtKind, DataTypeDescriptor, Level, ReadMode, Strategy
from .metrics import percentile

SUMMARY_SCHEMA = "fogcoord-summary/1"
SUMMARY_COLUMNS = (
    "schema", "strategy", "level", "write_ratio", "latency_scale", "seed", "ops", "ok_ratio",
    "write_median_ms", "write_p99_ms", "read_median_ms", "read_p99_ms",
    "staleness_median_ms", "staleness_p99_ms", "update_peers", "messages", "bytes", "error",
)
DIMENSIONS = ("strategy", "level", "write_ratio", "latency_scale", "seed")
DEFAULTS = {"strategy": ["eventual", "strict"], "level": ["system"], "write_ratio": [0.5],
            "latency_scale": [1.0], "seed": [0]}
BENCH_OPS = 40


@dataclass(frozen=True)
class Cell:
    strategy: str
    level: str
    write_ratio: float
    latency_scale: float
    seed: int


def parse_dimension(text: str) -> tuple[str, list]:
    """``"level=system,replica_set"`` -> ``("level", ["system", "replica_set"])``."""
    name, _, values = text.partition("=")
    name = name.strip()
    if name not in DIMENSIONS or not values:
        raise ValueError(f"bad dimension {text!r}; expected one of {', '.join(DIMENSIONS)} as name=v1,v2")
    raw = [v.strip() for v in values.split(",") if v.strip()]
    if name in ("write_ratio", "latency_scale"):
        return name, [float(v) for v in raw]
    if name == "seed":
        return name, [int(v) for v in raw]
    allowed = {"strategy": ("eventual", "strict"), "level": ("system", "replica_set")}[name]
    for v in raw:
        if v not in allowed:
            raise ValueError(f"{name} must be one of {allowed}, got {v!r}")
    return name, raw


def cells(dims: dict[str, list]) -> list[Cell]:
    merged = {k: dims.get(k, DEFAULTS[k]) for k in DIMENSIONS}
    return [Cell(*combo) for combo in itertools.product(*(merged[k] for k in DIMENSIONS))]


def cell_scenario(template: Scenario, cell: Cell) -> Scenario:
    strategy = Strategy(cell.strategy)
    if cell.level == "system":
        level = Level.system()
        clients = sorted(template.topology.nodes)
    else:
        if not template.replica_sets:
            raise ValueError("level=replica_set needs a replica set in the template")
        set_id = sorted(template.replica_sets)[0]
        level = Level.replica_set(set_id)
        clients = sorted(template.replica_sets[set_id])
    if strategy is Strategy.EVENTUAL:
        bench = DataTypeDescriptor("bench", strategy, level, crdt_kind=CrdtKind.LWW_REGISTER)
    else:
        bench = DataTypeDescriptor("bench", strategy, level, read_mode=ReadMode.READ_QUORUM)
    topo = template.topology.scaled(cell.latency_scale)
    rng = random.Random(f"sweep|{cell.seed}|{cell.write_ratio}")
    member_lat = max((topo.node_latency(a, b) for a in clients for b in clients), default=0)
    gap = max(4 * member_lat, 1000)
    ops = list(template.workload)
    for i in range(BENCH_OPS):
        node = rng.choice(clients)
        key = f"bench/k{rng.randint(1, 4)}"
        at = (i + 1) * gap
        if i == 0 or rng.random() < cell.write_ratio:
            ops.append(WorkloadOp(f"b{i}", at, node, "write", key, f"v{i}".encode(), deadline_us=50 * gap))
        else:
            ops.append(WorkloadOp(f"b{i}", at, node, "read", key, deadline_us=50 * gap))
    types = tuple(d for d in template.data_types if d.namespace != "bench") + (bench,)
    return replace(template, topology=topo, data_types=types, workload=tuple(ops), seed=cell.seed,
                   name=f"{template.name}-{cell.strategy}-{cell.level}-w{cell.write_ratio}-x{cell.latency_scale}")


def _stats(values: list[float]) -> tuple:
    if not values:
        return "", ""
    return statistics.median(values), percentile(values, 99)


def run_cell(template: Scenario, cell: Cell) -> dict:
    row: dict = {k: getattr(cell, k) for k in DIMENSIONS}
    try:
        sc = cell_scenario(template, cell)
        result = Simulation(sc).run()
    except Exception as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row
    trace = result.trace
    starts = {r.fields()["op"]: r for r in trace.of_kind("op_start") if r.key.startswith("bench/")}
    writes, reads, ok = [], [], 0
    for r in trace.of_kind("op_end"):
        f = r.fields()
        if f["op"] not in starts:
            continue
        ok += f["outcome"] == "ok"
        if f["outcome"] == "ok":
            (writes if f["kind"] == "write" else reads).append(int(f["latency_us"]) / 1000)
    lags = [int(r.fields()["lag_us"]) / 1000 for r in trace.of_kind("visible") if r.key.startswith("bench/")]
    bench_sends = [r for r in trace.of_kind("send") if r.fields().get("ns") == "bench"]
    update_peers = _update_peers(trace)
    row.update(ops=len(starts), ok_ratio=ok / len(starts) if starts else "",
               messages=len(bench_sends), bytes=sum(r.size_bytes for r in bench_sends),
               update_peers=update_peers, error="")
    row["write_median_ms"], row["write_p99_ms"] = _stats(writes)
    row["read_median_ms"], row["read_p99_ms"] = _stats(reads)
    row["staleness_median_ms"], row["staleness_p99_ms"] = _stats(lags)
    return row


def _update_peers(trace) -> int | str:
    """Peers reached by the first benchmark write: the most distinct destinations
    any one sender addressed with Update or AppendEntries while that write was open."""
    ends = {r.fields()["op"]: r.time_us for r in trace.of_kind("op_end")}
    first = next((r for r in trace.of_kind("op_start")
                  if r.key.startswith("bench/") and r.fields()["kind"] == "write"), None)
    if first is None:
        return ""
    lo, hi = first.time_us, ends.get(first.fields()["op"], first.time_us)
    peers: dict[str, set] = {}
    for x in trace.of_kind("send"):
        if lo <= x.time_us <= hi and x.msg_kind in ("Update", "AppendEntries") and x.fields().get("ns") == "bench":
            peers.setdefault(x.src, set()).add(x.dst)
    return max((len(v) for v in peers.values()), default=0)


def sweep(template: Scenario, dims: dict[str, list], jobs: int = 1) -> list[dict]:
    todo = cells(dims)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(run_cell, [template] * len(todo), todo))
    return [run_cell(template, c) for c in todo]


def summary_csv(rows: list[dict]) -> bytes:
    buf = io.StringIO()
    w = csv.DictWriter(buf, SUMMARY_COLUMNS, lineterminator="\n", restval="")
    w.writeheader()
    w.writerows({**r, "schema": SUMMARY_SCHEMA} for r in rows)
    return buf.getvalue().encode("utf-8")


def write_summary(rows: list[dict], path: str | Path) -> Path:
    path = Path(path)
    path.write_bytes(summary_csv(rows))
    return path


def read_summary(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
