"""Append-only event trace and its newline-delimited JSON form."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple


class Record(NamedTuple):
    time: int  # microseconds
    node: int
    kind: str
    fields: dict


@dataclass
class EventTrace:
    records: list[Record] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, time: int, node: int, kind: str, /, **fields) -> None:
        self.records.append(Record(time, node, kind, fields))

    def __iter__(self) -> Iterator[Record]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def of_kind(self, *kinds: str) -> Iterator[Record]:
        return (r for r in self.records if r.kind in kinds)

    def first(self, kind: str) -> Record | None:
        return next(self.of_kind(kind), None)

    def to_ndjson(self) -> str:
        lines = [json.dumps({"meta": self.meta}, sort_keys=True, separators=(",", ":"))]
        for r in self.records:
            lines.append(json.dumps([r.time, r.node, r.kind, r.fields],
                                    sort_keys=True, separators=(",", ":")))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_ndjson(cls, text: str) -> EventTrace:
        trace = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            item = json.loads(line)
            if isinstance(item, dict):
                trace.meta = item.get("meta", {})
                continue
            if not (isinstance(item, list) and len(item) == 4):
                raise ValueError(f"line {lineno}: expected [time, node, kind, fields]")
            time, node, kind, fields = item
            trace.records.append(Record(int(time), int(node), str(kind), dict(fields)))
        return trace

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_ndjson())

    @classmethod
    def read(cls, path) -> EventTrace:
        with open(path, encoding="utf-8") as fh:
            return cls.from_ndjson(fh.read())
