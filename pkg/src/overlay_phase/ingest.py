"""Parse, validate, persist and filter crawl traces.

Canonical format is JSON Lines, one crawl response per line::

    {"peer": "p1", "t": 1800, "mode": "ultra", "sw": "limewire-4.x",
     "leaves": ["a", "b"], "ultras": ["c"]}

The CSV alternative has the same columns with neighbor sets joined by ``;``.
Files ending in ``.gz`` are read and written gzip-compressed.
"""

from __future__ import annotations

import csv
import gzip
import io
import json
import os
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Callable, Iterable, Iterator, Mapping

from .core import CrawlRecord, PeerMode, PeerTrace
from .errors import IngestError, InvariantViolation

CSV_FIELDS = ("peer", "t", "mode", "sw", "leaves", "ultras")


@dataclass(frozen=True)
class Diagnostic:
    line: int
    reason: str

    def __str__(self):
        return f"line {self.line}: {self.reason}"


@dataclass(frozen=True)
class TraceStore:
    traces: Mapping[str, PeerTrace] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "traces", MappingProxyType(dict(self.traces)))

    @classmethod
    def from_records(cls, records: Iterable[CrawlRecord]) -> TraceStore:
        by_peer = defaultdict(list)
        for r in records:
            by_peer[r.peer_id].append(r)
        return cls({pid: PeerTrace.from_records(rs) for pid, rs in by_peer.items()})

    def __len__(self):
        return len(self.traces)

    def __iter__(self) -> Iterator[PeerTrace]:
        return iter(self.traces.values())

    def __contains__(self, peer_id):
        return peer_id in self.traces

    def __getitem__(self, peer_id) -> PeerTrace:
        return self.traces[peer_id]

    @property
    def n_records(self) -> int:
        return sum(len(t) for t in self.traces.values())

    def records(self) -> Iterator[CrawlRecord]:
        for trace in self.traces.values():
            yield from trace.records

    @property
    def time_range(self) -> tuple[int, int] | None:
        if not self.traces:
            return None
        return (
            min(t.records[0].t for t in self.traces.values()),
            max(t.records[-1].t for t in self.traces.values()),
        )

    @property
    def software_index(self) -> dict[str, frozenset]:
        idx = defaultdict(set)
        for pid, trace in self.traces.items():
            for r in trace.records:
                idx[r.software].add(pid)
        return {sw: frozenset(p) for sw, p in idx.items()}


def _open_text(path: Path, mode: str):
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, mode + "b"), encoding="utf-8", newline="")
    return open(path, mode, encoding="utf-8", newline="")


def _as_ids(value) -> list:
    if value is None or value == "":
        return []
    if isinstance(value, str):
        return [v for v in value.split(";") if v]
    if isinstance(value, (list, tuple)):
        return list(value)
    raise ValueError(f"neighbor list must be an array, got {type(value).__name__}")


def record_from_mapping(obj: Mapping) -> CrawlRecord:
    if not isinstance(obj, Mapping):
        raise ValueError("line is not a JSON object")
    missing = [k for k in ("peer", "t") if k not in obj]
    if missing:
        raise ValueError(f"missing field(s): {', '.join(missing)}")
    t = obj["t"]
    if isinstance(t, str):
        t = float(t) if "." in t else int(t)
    if isinstance(t, float):
        if not t.is_integer():
            raise ValueError(f"timestamp {t} is not integer seconds")
        t = int(t)
    return CrawlRecord(
        peer_id=str(obj["peer"]),
        t=t,
        mode=PeerMode.parse(obj.get("mode") or "unknown"),
        software=str(obj.get("sw", "") or ""),
        leaf_neighbors=frozenset(map(str, _as_ids(obj.get("leaves")))),
        ultra_neighbors=frozenset(map(str, _as_ids(obj.get("ultras")))),
    )


def record_to_mapping(record: CrawlRecord) -> dict:
    return {
        "peer": record.peer_id,
        "t": record.t,
        "mode": record.mode.value,
        "sw": record.software,
        "leaves": sorted(record.leaf_neighbors),
        "ultras": sorted(record.ultra_neighbors),
    }


def _iter_rows(fh, fmt: str):
    if fmt == "jsonl":
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line), None
            except json.JSONDecodeError as exc:
                yield lineno, None, f"invalid JSON: {exc.msg}"
    elif fmt == "csv":
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return
        absent = [c for c in ("peer", "t") if c not in reader.fieldnames]
        if absent:
            raise IngestError(f"CSV header lacks column(s): {', '.join(absent)}")
        for row in reader:
            yield reader.line_num, row, None
    else:
        raise IngestError(f"unsupported format {fmt!r}")


def guess_format(path) -> str:
    name = str(path)
    if name.endswith(".gz"):
        name = name[:-3]
    return "csv" if name.endswith(".csv") else "jsonl"


def parse_crawl_file(path, format: str | None = None) -> tuple[TraceStore, list[Diagnostic]]:
    """Load every valid line of a crawl file.

    Invalid lines never abort the load; each one yields a
    :class:`Diagnostic` with its line number. A file that cannot be opened
    raises :class:`IngestError`.
    """
    path = Path(path)
    fmt = format or guess_format(path)
    diagnostics: list[Diagnostic] = []
    by_peer: dict[str, dict[int, CrawlRecord]] = defaultdict(dict)
    try:
        fh = _open_text(path, "r")
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc.strerror or exc}") from exc
    with fh:
        try:
            for lineno, obj, err in _iter_rows(fh, fmt):
                if err is not None:
                    diagnostics.append(Diagnostic(lineno, err))
                    continue
                try:
                    rec = record_from_mapping(obj)
                except (InvariantViolation, ValueError, TypeError) as exc:
                    diagnostics.append(Diagnostic(lineno, str(exc)))
                    continue
                seen = by_peer[rec.peer_id]
                if rec.t in seen:
                    diagnostics.append(
                        Diagnostic(lineno, f"duplicate record for peer {rec.peer_id} at t={rec.t}")
                    )
                    continue
                seen[rec.t] = rec
        except (OSError, EOFError, UnicodeDecodeError) as exc:
            raise IngestError(f"cannot read {path}: {exc}") from exc
    store = TraceStore(
        {pid: PeerTrace.from_records(recs.values()) for pid, recs in by_peer.items() if recs}
    )
    return store, diagnostics


def write_crawl_file(records: Iterable[CrawlRecord] | TraceStore, path, format: str | None = None) -> int:
    path = Path(path)
    fmt = format or guess_format(path)
    if isinstance(records, TraceStore):
        records = records.records()
    n = 0
    with _open_text(path, "w") as fh:
        if fmt == "jsonl":
            for rec in records:
                fh.write(json.dumps(record_to_mapping(rec), separators=(",", ":")))
                fh.write("\n")
                n += 1
        elif fmt == "csv":
            writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
            writer.writeheader()
            for rec in records:
                row = record_to_mapping(rec)
                row["leaves"] = ";".join(row["leaves"])
                row["ultras"] = ";".join(row["ultras"])
                writer.writerow(row)
                n += 1
        else:
            raise IngestError(f"unsupported format {fmt!r}")
    return n


def iter_jsonl_lines(records: Iterable[CrawlRecord]) -> Iterator[str]:
    for rec in records:
        yield json.dumps(record_to_mapping(rec), separators=(",", ":"))


def filter_store(
    store: TraceStore,
    software: str | Iterable[str] | None = None,
    mode: PeerMode | str | None = None,
    min_records: int = 0,
    predicate: Callable[[PeerTrace], bool] | None = None,
) -> TraceStore:
    """Peer-level sub-store.

    A peer passes ``software`` when its trace's tag matches, ``mode`` when
    any of its records reports that mode, and ``min_records`` when its
    trace has at least that many records.
    """
    if isinstance(software, str):
        software = {software}
    elif software is not None:
        software = set(software)
    if mode is not None:
        mode = PeerMode.parse(mode)

    def keep(trace: PeerTrace) -> bool:
        if len(trace) < min_records:
            return False
        if software is not None and trace.software not in software:
            return False
        if mode is not None and not any(r.mode is mode for r in trace.records):
            return False
        return predicate is None or bool(predicate(trace))

    return TraceStore({pid: tr for pid, tr in store.traces.items() if keep(tr)})


# short alias; shadows the builtin inside this module only
filter = filter_store


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
