"""Trace log: one row per simulator event, serialised as CSV.

Columns (schema ``fogcoord-trace/1``)::

    time_us, seq, kind, from, to, key, msg_kind, size_bytes, note

``note`` holds ``k=v`` pairs in URL query encoding. The first row is always
``kind=meta`` carrying the schema name, scenario name and seed.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator
from urllib.parse import parse_qsl, urlencode

SCHEMA = "fogcoord-trace/1"
COLUMNS = ("time_us", "seq", "kind", "from", "to", "key", "msg_kind", "size_bytes", "note")


@dataclass(frozen=True)
class TraceRow:
    time_us: int
    seq: int
    kind: str
    src: str = ""
    dst: str = ""
    key: str = ""
    msg_kind: str = ""
    size_bytes: int = 0
    note: str = ""

    def fields(self) -> dict[str, str]:
        return dict(parse_qsl(self.note, keep_blank_values=True))

    def as_tuple(self) -> tuple:
        return (self.time_us, self.seq, self.kind, self.src, self.dst, self.key,
                self.msg_kind, self.size_bytes, self.note)


def encode_note(fields: dict | None) -> str:
    if not fields:
        return ""
    return urlencode([(k, "" if v is None else str(v)) for k, v in fields.items()])


class TraceLog:
    def __init__(self, rows: Iterable[TraceRow] = ()):
        self.rows: list[TraceRow] = list(rows)

    def add(self, time_us: int, kind: str, src="", dst="", key="", msg_kind="", size_bytes=0,
            note: dict | str | None = None) -> TraceRow:
        if not isinstance(note, str):
            note = encode_note(note)
        row = TraceRow(time_us, len(self.rows), kind, str(src), str(dst), key or "", msg_kind, size_bytes, note)
        self.rows.append(row)
        return row

    def __iter__(self) -> Iterator[TraceRow]:
        return iter(self.rows)

    def __len__(self) -> int:
        return len(self.rows)

    def of_kind(self, *kinds: str) -> list[TraceRow]:
        return [r for r in self.rows if r.kind in kinds]

    def meta(self) -> dict[str, str]:
        for r in self.rows:
            if r.kind == "meta":
                return r.fields()
        return {}

    def to_csv(self) -> bytes:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow(r.as_tuple())
        return buf.getvalue().encode("utf-8")

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_bytes(self.to_csv())
        return path

    @classmethod
    def from_csv(cls, data: bytes | str) -> "TraceLog":
        text = data.decode("utf-8") if isinstance(data, bytes) else data
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or tuple(header) != COLUMNS:
            raise ValueError(f"not a trace file (header {header!r})")
        rows = []
        for rec in reader:
            t, seq, kind, src, dst, key, mk, size, note = rec
            rows.append(TraceRow(int(t), int(seq), kind, src, dst, key, mk, int(size), note))
        return cls(rows)

    @classmethod
    def read(cls, path: str | Path) -> "TraceLog":
        return cls.from_csv(Path(path).read_bytes())
