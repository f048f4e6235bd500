"""Registration log parsing, weekly windowing and graph construction."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .graph import (
    ENTITY_TYPES,
    DuplicateAccountError,
    DynamicHeteroGraph,
    FeatureTable,
    GraphError,
    LabelTable,
    TimeStepError,
    normalize_key,
)

WEEK_SECONDS = 7 * 24 * 3600
DAY_SECONDS = 24 * 3600
ENTITY_FIELDS = tuple(t.value for t in ENTITY_TYPES)
CSV_COLUMNS = ("account_id", "ts") + ENTITY_FIELDS + ("features", "label")


class FormatError(ValueError):
    pass


@dataclass
class RegistrationRecord:
    account_id: str
    timestamp: int
    features: np.ndarray
    label: int | None = None
    email: str | None = None
    address: str | None = None
    phone: str | None = None
    ip: str | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if not self.entities():
            raise ValueError("record needs at least one linking entity")
        if self.features.ndim != 1 or not np.all(np.isfinite(self.features)):
            raise ValueError("features must be a finite vector")
        if self.label not in (None, 0, 1):
            raise ValueError(f"label must be 0, 1 or null, got {self.label!r}")

    def entities(self) -> dict[str, str]:
        out = {}
        for name in ENTITY_FIELDS:
            value = getattr(self, name)
            if value is not None and normalize_key(value):
                out[name] = value
        return out

    def to_json(self) -> str:
        doc = {"account_id": self.account_id, "ts": int(self.timestamp)}
        for name in ENTITY_FIELDS:
            doc[name] = getattr(self, name)
        doc["features"] = [float(x) for x in self.features.tolist()]
        doc["label"] = self.label
        return json.dumps(doc)


@dataclass
class TimeWindowing:
    origin: int
    window_length: int = WEEK_SECONDS

    def time_step(self, ts: int) -> int:
        return 1 + (int(ts) - self.origin) // self.window_length

    @classmethod
    def from_records(cls, records, window_length: int = WEEK_SECONDS) -> "TimeWindowing":
        """Anchor week 1 at midnight UTC of the earliest record."""
        if not records:
            raise ValueError("cannot anchor a window on an empty record list")
        first = min(int(r.timestamp) for r in records)
        return cls(origin=first - first % DAY_SECONDS, window_length=window_length)


@dataclass
class ParseReport:
    records: list = field(default_factory=list)
    errors: list = field(default_factory=list)  # (line_no, reason)

    def errors_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["line_no", "reason"])
        w.writerows(self.errors)
        return buf.getvalue()


def _record_from_fields(doc: dict, d_account: int | None) -> RegistrationRecord:
    if not isinstance(doc, dict):
        raise ValueError("record is not an object")
    account_id = doc.get("account_id")
    if not isinstance(account_id, str) or not account_id:
        raise ValueError("missing account_id")
    ts = doc.get("ts")
    if isinstance(ts, bool) or not isinstance(ts, int):
        raise ValueError("ts must be an integer epoch")
    entities = {}
    for name in ENTITY_FIELDS:
        value = doc.get(name)
        if value is not None and not isinstance(value, str):
            raise ValueError(f"{name} must be a string")
        entities[name] = normalize_key(value) if value is not None and normalize_key(value) else None
    if not any(entities.values()):
        raise ValueError("no linking entity")
    features = doc.get("features")
    if not isinstance(features, list):
        raise ValueError("features must be a list")
    try:
        vec = np.array(features, dtype=np.float64)
    except (TypeError, ValueError):
        raise ValueError("features must be numeric") from None
    if d_account is not None and vec.shape != (d_account,):
        raise ValueError(f"expected {d_account} features, got {vec.size}")
    if not np.all(np.isfinite(vec)):
        raise ValueError("non-finite feature")
    label = doc.get("label")
    if label not in (None, 0, 1) or isinstance(label, bool):
        raise ValueError("label must be 0, 1 or null")
    return RegistrationRecord(account_id, ts, vec, label, **entities)


def _csv_docs(lines: Iterable[str]):
    it = iter(lines)
    try:
        header_line = next(it)
    except StopIteration:
        return
    header = next(csv.reader([header_line]))
    if tuple(h.strip() for h in header) != CSV_COLUMNS:
        raise FormatError(f"CSV header must be {','.join(CSV_COLUMNS)}")
    for line_no, line in enumerate(it, start=2):
        if not line.strip():
            continue
        try:
            row = next(csv.reader([line]))
            if len(row) != len(CSV_COLUMNS):
                raise ValueError(f"expected {len(CSV_COLUMNS)} columns, got {len(row)}")
            doc = dict(zip(CSV_COLUMNS, row))
            doc["ts"] = int(doc["ts"])
            for name in ENTITY_FIELDS:
                doc[name] = doc[name] or None
            doc["features"] = [float(x) for x in doc["features"].split(";")] if doc["features"] else []
            doc["label"] = None if doc["label"] in ("", "null") else int(doc["label"])
        except ValueError as exc:
            yield line_no, None, str(exc)
            continue
        yield line_no, doc, None


def _jsonl_docs(lines: Iterable[str]):
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            yield line_no, json.loads(line), None
        except json.JSONDecodeError as exc:
            yield line_no, None, f"invalid JSON: {exc.msg}"


def parse_records(lines: Iterable[str], fmt: str = "jsonl", d_account: int | None = None) -> ParseReport:
    """Parse JSONL or headered CSV registration lines.

    Malformed lines and repeated account ids go to the error report with
    their 1-based line number; valid records keep input order.  When
    ``d_account`` is None it is fixed by the first valid record.
    """
    if fmt not in ("jsonl", "csv"):
        raise FormatError(f"unknown format {fmt!r}")
    report = ParseReport()
    seen: set[str] = set()
    docs = _jsonl_docs(lines) if fmt == "jsonl" else _csv_docs(lines)
    for line_no, doc, err in docs:
        if err is None:
            try:
                rec = _record_from_fields(doc, d_account)
            except ValueError as exc:
                err = str(exc)
        if err is None and rec.account_id in seen:
            err = f"duplicate account_id {rec.account_id}"
        if err is not None:
            report.errors.append((line_no, err))
            continue
        seen.add(rec.account_id)
        if d_account is None:
            d_account = rec.features.size
        report.records.append(rec)
    return report


def read_records(path, d_account: int | None = None) -> ParseReport:
    path = Path(path)
    fmt = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    with path.open("r", encoding="utf-8") as fh:
        return parse_records(fh, fmt=fmt, d_account=d_account)


def write_records(path, records) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
    return path


@dataclass
class BuiltGraph:
    graph: DynamicHeteroGraph
    features: FeatureTable
    labels: LabelTable
    windowing: TimeWindowing


def build_graph(records, windowing: TimeWindowing | None = None, T_max: int | None = None,
                freeze: bool = True) -> BuiltGraph:
    """Turn registration records into the unrolled graph plus feature and label tables.

    Each account attaches to its entities only at its own registration week.
    Records whose week exceeds ``T_max`` raise :class:`TimeStepError`; a
    repeated account id raises :class:`DuplicateAccountError`.
    """
    records = list(records)
    if windowing is None:
        windowing = TimeWindowing.from_records(records) if records else TimeWindowing(0)
    steps = [windowing.time_step(r.timestamp) for r in records]
    if T_max is None:
        T_max = max(steps, default=1)
    d = records[0].features.size if records else 0
    graph = DynamicHeteroGraph(T_max, d)
    rows, feats, labels = [], [], []
    for rec, t in zip(records, steps):
        if not 1 <= t <= T_max:
            raise TimeStepError(f"record {rec.account_id!r} falls in week {t}, outside 1..{T_max}")
        if rec.features.size != d:
            raise GraphError(f"record {rec.account_id!r} has {rec.features.size} features, expected {d}")
        idx = graph.add_registration(rec.account_id, t, rec.entities())
        rows.append(idx)
        feats.append(rec.features)
        labels.append(-1 if rec.label is None else rec.label)
    n = graph.num_nodes
    table = FeatureTable.zeros(n, d)
    label_arr = np.full(n, -1, dtype=np.int64)
    if rows:
        table.values[rows] = np.vstack(feats)
        label_arr[rows] = labels
    if freeze:
        graph.freeze()
    return BuiltGraph(graph, table, LabelTable(label_arr), windowing)


__all__ = [
    "BuiltGraph",
    "DuplicateAccountError",
    "FormatError",
    "ParseReport",
    "RegistrationRecord",
    "TimeStepError",
    "TimeWindowing",
    "build_graph",
    "parse_records",
    "read_records",
    "write_records",
]
