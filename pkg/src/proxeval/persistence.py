"""Record store: one append-only JSON-lines table per (sensor, role).

A store lives in a directory holding ``<sensor_slug>__<role>.jsonl`` files,
one row per trace::

    {"seq": 1, "transaction_id": "0a0b0c0d0e0f10", "role": "TT",
     "sensor": "Magnetic Field", "location": "library",
     "start_epoch_ms": 1500000000000, "samples": [{"t_ms": 0.0, "x": ..., "y": ..., "z": ...}]}

Light samples use ``{"t_ms", "v"}``. External exchange files use the same
row schema without ``seq`` (jsonl) or one sample per row (csv).
"""

from __future__ import annotations

import csv
import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union


from .trace_model import (DeviceRole, SensorKind, SensorTrace, TransactionTriple,
                          format_transaction_id, validate_triple)

CSV_HEADER = ["transaction_id", "role", "sensor", "location", "start_epoch_ms", "t_ms", "v", "x", "y", "z"]


class StoreError(Exception):
    pass


class DuplicateKey(StoreError):
    pass


class ParseError(StoreError):
    def __init__(self, message: str, path=None, line: Optional[int] = None):
        where = f"{path}:{line}: " if path is not None and line is not None else (
            f"line {line}: " if line is not None else "")
        super().__init__(f"{where}{message}")
        self.path = path
        self.line = line


@dataclass(frozen=True)
class Row:
    seq: int
    trace: SensorTrace


def samples_blob(trace: SensorTrace) -> list[dict]:
    if trace.sensor.is_vector:
        return [{"t_ms": float(t), "x": float(v[0]), "y": float(v[1]), "z": float(v[2])}
                for t, v in zip(trace.t_ms, trace.values)]
    return [{"t_ms": float(t), "v": float(v)} for t, v in zip(trace.t_ms, trace.values)]


def trace_to_record(trace: SensorTrace) -> dict:
    return {
        "transaction_id": trace.transaction_id,
        "role": trace.role.value,
        "sensor": trace.sensor.label,
        "location": trace.location,
        "start_epoch_ms": trace.start_epoch_ms,
        "samples": samples_blob(trace),
    }


def record_to_trace(rec: dict) -> SensorTrace:
    """Build a trace from a jsonl record; raises ValueError/KeyError/TypeError on bad input."""
    for key in ("transaction_id", "role", "sensor", "location", "start_epoch_ms", "samples"):
        if key not in rec:
            raise ValueError(f"missing field {key!r}")
    sensor = SensorKind.parse(rec["sensor"])
    if rec["role"] not in ("TT", "TI", "DTI"):
        raise ValueError(f"role must be TT, TI or DTI, got {rec['role']!r}")
    epoch = rec["start_epoch_ms"]
    if isinstance(epoch, bool) or not isinstance(epoch, int):
        raise ValueError(f"start_epoch_ms must be an integer, got {epoch!r}")
    if not isinstance(rec["location"], str):
        raise ValueError("location must be a string")
    samples = rec["samples"]
    if not isinstance(samples, list):
        raise ValueError("samples must be an array")
    t = [float(s["t_ms"]) for s in samples]
    if sensor.is_vector:
        v = [(float(s["x"]), float(s["y"]), float(s["z"])) for s in samples]
    else:
        v = [float(s["v"]) for s in samples]
    return SensorTrace(rec["transaction_id"], DeviceRole(rec["role"]), sensor, rec["location"],
                       epoch, t, v)


class RecordStore:
    """Per-(sensor, role) append-only tables, optionally backed by a directory.

    Appends are serialised by a lock; readers only ever see whole rows.
    """

    def __init__(self, path: Union[str, Path, None] = None):
        self.path = Path(path) if path is not None else None
        self._tables: dict[tuple[SensorKind, DeviceRole], list[Row]] = {}
        self._index: dict[tuple[SensorKind, DeviceRole], dict[str, int]] = {}
        self._lock = threading.Lock()
        if self.path is not None:
            self.path.mkdir(parents=True, exist_ok=True)
            self._load()

    @staticmethod
    def table_name(sensor: SensorKind, role: DeviceRole) -> str:
        return f"{sensor.slug}__{role.value}.jsonl"

    def _load(self) -> None:
        for sensor in SensorKind:
            for role in DeviceRole:
                f = self.path / self.table_name(sensor, role)
                if not f.exists():
                    continue
                with f.open(encoding="utf-8") as fh:
                    for lineno, line in enumerate(fh, 1):
                        if not line.strip():
                            continue
                        try:
                            rec = json.loads(line)
                            trace = record_to_trace(rec)
                            seq = int(rec["seq"])
                        except (ValueError, KeyError, TypeError) as exc:
                            raise ParseError(str(exc), f, lineno) from exc
                        if trace.sensor is not sensor or trace.role is not role:
                            raise ParseError(f"row belongs to {trace.sensor}/{trace.role}", f, lineno)
                        self._insert(trace, seq)

    def _insert(self, trace: SensorTrace, seq: int) -> None:
        key = (trace.sensor, trace.role)
        table = self._tables.setdefault(key, [])
        index = self._index.setdefault(key, {})
        if table and seq <= table[-1].seq:
            raise StoreError(f"seq {seq} not increasing in {trace.sensor}/{trace.role}")
        index[trace.transaction_id] = len(table)
        table.append(Row(seq, trace))

    def append(self, trace: SensorTrace) -> int:
        """Append a trace and return its sequence number within its table."""
        key = (trace.sensor, trace.role)
        with self._lock:
            if trace.transaction_id in self._index.get(key, {}):
                raise DuplicateKey(f"{trace.transaction_id} already stored for {trace.sensor}/{trace.role}")
            table = self._tables.get(key, [])
            seq = table[-1].seq + 1 if table else 1
            if self.path is not None:
                rec = {"seq": seq, **trace_to_record(trace)}
                with (self.path / self.table_name(*key)).open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
            self._insert(trace, seq)
            return seq

    def extend(self, traces: Iterable[SensorTrace]) -> None:
        for tr in traces:
            self.append(tr)

    def rows(self, sensor, role) -> list[Row]:
        return list(self._tables.get((SensorKind.parse(sensor), DeviceRole(role)), []))

    def get(self, transaction_id: str, role, sensor) -> SensorTrace:
        key = (SensorKind.parse(sensor), DeviceRole(role))
        idx = self._index.get(key, {}).get(format_transaction_id(transaction_id))
        if idx is None:
            raise KeyError((transaction_id, role, sensor))
        return self._tables[key][idx].trace

    def sensors(self) -> list[SensorKind]:
        return [s for s in SensorKind if any((s, r) in self._tables for r in DeviceRole)]

    def traces(self) -> Iterator[SensorTrace]:
        for sensor in SensorKind:
            for role in DeviceRole:
                for row in self._tables.get((sensor, role), []):
                    yield row.trace

    def __len__(self) -> int:
        return sum(len(t) for t in self._tables.values())


def append(store: RecordStore, trace: SensorTrace) -> int:
    return store.append(trace)


def join_triples(store: RecordStore, sensor) -> list[TransactionTriple]:
    """Triples for ids present in all three role tables, ordered by the TT row's seq."""
    sensor = SensorKind.parse(sensor)
    ti = {r.trace.transaction_id: r.trace for r in store.rows(sensor, DeviceRole.TI)}
    dti = {r.trace.transaction_id: r.trace for r in store.rows(sensor, DeviceRole.DTI)}
    out = []
    for row in store.rows(sensor, DeviceRole.TT):
        tid = row.trace.transaction_id
        if tid in ti and tid in dti:
            out.append(validate_triple(row.trace, ti[tid], dti[tid]))
    return out


def join_all(store: RecordStore, sensors=None) -> list[TransactionTriple]:
    sensors = store.sensors() if sensors is None else [SensorKind.parse(s) for s in sensors]
    return [t for s in sensors for t in join_triples(store, s)]


# ---------------------------------------------------------------------------
# external exchange formats
# ---------------------------------------------------------------------------

def export_jsonl(store: RecordStore, path: Union[str, Path]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for trace in store.traces():
            fh.write(json.dumps(trace_to_record(trace), ensure_ascii=False) + "\n")
            n += 1
    return n


def _num(x: float) -> str:
    return repr(float(x))


def export_csv(store: RecordStore, path: Union[str, Path]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for trace in store.traces():
            head = [trace.transaction_id, trace.role.value, trace.sensor.label, trace.location,
                    str(trace.start_epoch_ms)]
            for t, v in zip(trace.t_ms, trace.values):
                if trace.sensor.is_vector:
                    w.writerow(head + [_num(t), "", _num(v[0]), _num(v[1]), _num(v[2])])
                else:
                    w.writerow(head + [_num(t), _num(v), "", "", ""])
            n += 1
    return n


def _read_jsonl(fh, path) -> Iterator[tuple[int, SensorTrace]]:
    for lineno, line in enumerate(fh, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            if not isinstance(rec, dict):
                raise ValueError("row must be a JSON object")
            yield lineno, record_to_trace(rec)
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(str(exc), path, lineno) from exc


def _read_csv(fh, path) -> Iterator[tuple[int, SensorTrace]]:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        return
    if [h.strip() for h in header] != CSV_HEADER:
        raise ParseError(f"header must be {','.join(CSV_HEADER)}", path, 1)
    group_key = None
    group_line = 0
    rec: dict = {}
    for lineno, row in enumerate(reader, 2):
        if not any(cell.strip() for cell in row):
            continue
        try:
            if len(row) != len(CSV_HEADER):
                raise ValueError(f"expected {len(CSV_HEADER)} columns, got {len(row)}")
            tid, role, sensor, location, epoch, t, v, x, y, z = row
            key = (tid, role, sensor)
            if key != group_key:
                if group_key is not None:
                    yield group_line, record_to_trace(rec)
                group_key, group_line = key, lineno
                rec = {"transaction_id": tid, "role": role, "sensor": sensor, "location": location,
                       "start_epoch_ms": int(epoch), "samples": []}
            if SensorKind.parse(sensor).is_vector:
                rec["samples"].append({"t_ms": float(t), "x": float(x), "y": float(y), "z": float(z)})
            else:
                rec["samples"].append({"t_ms": float(t), "v": float(v)})
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(str(exc), path, lineno) from exc
    if group_key is not None:
        try:
            yield group_line, record_to_trace(rec)
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(str(exc), path, group_line) from exc


def ingest_external(path: Union[str, Path], format: Optional[str] = None,
                    store: Optional[RecordStore] = None) -> RecordStore:
    """Load an external jsonl/csv dataset into a (new or given) store.

    Raises ParseError naming the file and line of the first malformed row.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt not in ("jsonl", "csv"):
        raise ParseError(f"unsupported format {fmt!r} (expected jsonl or csv)", path)
    store = RecordStore() if store is None else store
    reader = _read_jsonl if fmt == "jsonl" else _read_csv
    with path.open(encoding="utf-8", newline="" if fmt == "csv" else None) as fh:
        for lineno, trace in reader(fh, path):
            try:
                store.append(trace)
            except DuplicateKey as exc:
                raise ParseError(str(exc), path, lineno) from exc
    return store
