"""Static PNG charts from a sweep summary."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .sweep import read_summary  # noqa: E402

CHARTS = (
    ("write_median_ms", "median write latency (ms)", "write_latency.png"),
    ("staleness_median_ms", "median staleness (ms)", "staleness.png"),
    ("messages", "protocol messages (bench namespace)", "messages.png"),
)


def _num(v: str) -> float:
    try:
        return float(v)
    except (TypeError, ValueError):
        return float("nan")


def _grouped(rows: list[dict], metric: str) -> dict[str, float]:
    """Mean of ``metric`` per strategy/level cell, averaged over other dimensions."""
    acc: dict[str, list[float]] = {}
    for r in rows:
        if r.get("error"):
            continue
        v = _num(r.get(metric, ""))
        if v == v:
            acc.setdefault(f"{r['strategy']}\n{r['level']}", []).append(v)
    return {k: sum(v) / len(v) for k, v in sorted(acc.items())}


def plot_summary(summary: str | Path, out_dir: str | Path) -> list[Path]:
    rows = read_summary(summary)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for metric, label, name in CHARTS:
        data = _grouped(rows, metric)
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.bar(list(data), list(data.values()), color="#4c72b0")
        ax.set_ylabel(label)
        ax.set_title(label)
        fig.tight_layout()
        path = out_dir / name
        fig.savefig(path, dpi=100, metadata={"Software": None})
        plt.close(fig)
        written.append(path)
    return written
