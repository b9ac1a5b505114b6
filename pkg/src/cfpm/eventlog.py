"""In-memory event log model with CSV and minimal-XES ingestion.

An event log is a sequence of traces; a trace is a chronologically ordered,
non-empty sequence of events plus trace-level attributes.  Timestamps are
UTC epoch milliseconds.  Every attribute name is bound to a single value
kind (integer, real, text or timestamp) per level, recorded in the log's
schema.  All structures are immutable after construction, so logs can be
shared freely between threads.
"""
from __future__ import annotations

import csv
import io
import math
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Iterable, Mapping, NamedTuple

from ._util import fmt_value, round_half_up

Value = int | float | str

KIND_INTEGER = "integer"
KIND_REAL = "real"
KIND_TEXT = "text"
KIND_TIMESTAMP = "timestamp"
KINDS = (KIND_INTEGER, KIND_REAL, KIND_TEXT, KIND_TIMESTAMP)

TRACE_LEVEL = "trace"
EVENT_LEVEL = "event"

# (level, attribute name) -> kind
Schema = Mapping[tuple[str, str], str]

MS_PER_UNIT = {"hours": 3_600_000, "minutes": 60_000, "seconds": 1_000}

_INT_RE = re.compile(r"[+-]?\d+\Z")


class LogError(ValueError):
    """Invalid event log content or structure."""


class LogParseError(LogError):
    """Unparseable input; the message carries the offending location."""


def parse_timestamp(text: str) -> int:
    """Parse an ISO-8601 timestamp ('T' or space separator) to UTC epoch ms."""
    raw = text.strip()
    if raw.endswith(("Z", "z")):
        raw = raw[:-1] + "+00:00"
    dt = datetime.fromisoformat(raw)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    ms = round(dt.timestamp() * 1000)
    if ms < 0:
        raise ValueError(f"timestamp before epoch: {text!r}")
    return ms


def format_timestamp(ms: int) -> str:
    secs, rem = divmod(int(ms), 1000)
    dt = datetime.fromtimestamp(secs, tz=timezone.utc)
    out = dt.strftime("%Y-%m-%dT%H:%M:%S")
    return f"{out}.{rem:03d}" if rem else out


def value_conforms(value: Value, kind: str) -> bool:
    if isinstance(value, bool):
        return False
    if kind == KIND_INTEGER:
        return isinstance(value, int)
    if kind == KIND_REAL:
        return isinstance(value, float)
    if kind == KIND_TEXT:
        return isinstance(value, str)
    if kind == KIND_TIMESTAMP:
        return isinstance(value, int) and value >= 0
    raise ValueError(f"unknown value kind {kind!r}")


@dataclass(frozen=True)
class Event:
    event_id: str
    activity: str
    timestamp: int  # UTC epoch milliseconds
    attrs: Mapping[str, Value] = field(default_factory=dict)

    def __post_init__(self):
        if self.timestamp < 0:
            raise LogError(f"event {self.event_id!r}: negative timestamp")


@dataclass(frozen=True)
class Trace:
    case_id: str
    events: tuple[Event, ...]
    attrs: Mapping[str, Value] = field(default_factory=dict)

    def __post_init__(self):
        if not self.events:
            raise LogError(f"trace {self.case_id!r} has no events")
        ts = [e.timestamp for e in self.events]
        if any(a > b for a, b in zip(ts, ts[1:])):
            raise LogError(f"trace {self.case_id!r}: events not time-ordered")


@dataclass(frozen=True)
class EventLog:
    traces: tuple[Trace, ...]
    schema: Schema = field(default_factory=dict)

    def __post_init__(self):
        seen_cases: set[str] = set()
        seen_events: set[str] = set()
        for trace in self.traces:
            if trace.case_id in seen_cases:
                raise LogError(f"duplicate case id {trace.case_id!r}")
            seen_cases.add(trace.case_id)
            self._check_attrs(TRACE_LEVEL, trace.attrs, f"trace {trace.case_id!r}")
            for event in trace.events:
                if event.event_id in seen_events:
                    raise LogError(f"duplicate event id {event.event_id!r}")
                seen_events.add(event.event_id)
                self._check_attrs(EVENT_LEVEL, event.attrs, f"event {event.event_id!r}")

    def _check_attrs(self, level: str, attrs: Mapping[str, Value], where: str):
        for name, value in attrs.items():
            kind = self.schema.get((level, name))
            if kind is None:
                raise LogError(f"{where}: attribute {name!r} not in schema")
            if not value_conforms(value, kind):
                raise LogError(
                    f"{where}: attribute {name!r} value {value!r} does not match kind {kind!r}"
                )

    @property
    def case_ids(self) -> tuple[str, ...]:
        return tuple(t.case_id for t in self.traces)

    def trace(self, case_id: str) -> Trace:
        for t in self.traces:
            if t.case_id == case_id:
                return t
        raise KeyError(case_id)

    def event_count(self) -> int:
        return sum(len(t.events) for t in self.traces)


@dataclass(frozen=True)
class CsvLogConfig:
    """Column layout of a flat CSV event log.

    Every non-core column must be declared as either trace-level or
    event-level.  `kinds` optionally pins a column to a value kind instead
    of inferring one from the data.
    """

    case_col: str
    activity_col: str
    timestamp_col: str
    event_id_col: str | None = None
    trace_attr_cols: tuple[str, ...] = ()
    event_attr_cols: tuple[str, ...] = ()
    kinds: Mapping[str, str] = field(default_factory=dict)


def _strip_leading_comments(text: str) -> str:
    lines = text.splitlines(keepends=True)
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        i += 1
    return "".join(lines[i:])


def _fits_kind(raw: str, kind: str) -> bool:
    if kind == KIND_INTEGER:
        return bool(_INT_RE.match(raw.strip()))
    if kind == KIND_REAL:
        try:
            return math.isfinite(float(raw))
        except ValueError:
            return False
    if kind == KIND_TIMESTAMP:
        try:
            parse_timestamp(raw)
            return True
        except ValueError:
            return False
    return True


def _infer_kind(values: Iterable[str]) -> str:
    """Pick the narrowest kind that fits every non-empty cell of a column."""
    vals = list(values)
    if not vals:
        return KIND_TEXT
    for kind in (KIND_INTEGER, KIND_REAL, KIND_TIMESTAMP):
        if all(_fits_kind(v, kind) for v in vals):
            return kind
    return KIND_TEXT


def _convert(raw: str, kind: str) -> Value:
    if kind == KIND_INTEGER:
        return int(raw)
    if kind == KIND_REAL:
        return float(raw)
    if kind == KIND_TIMESTAMP:
        return parse_timestamp(raw)
    return raw


def parse_csv(source, config: CsvLogConfig) -> EventLog:
    """Parse a flat CSV event log (comma separated, header row mandatory).

    Rows are grouped into traces by the case-id column and sorted by
    timestamp within each trace (stable on ties).  Leading '#' comment
    lines are skipped.  Raises LogParseError with the offending row number
    on bad timestamps, duplicate event ids, and trace-level columns that
    vary within a case.
    """
    text = source.read() if hasattr(source, "read") else source
    rows = list(csv.reader(io.StringIO(_strip_leading_comments(text))))
    if not rows:
        raise LogParseError("empty input: header row is mandatory")
    header = rows[0]

    col_index: dict[str, int] = {}
    for i, name in enumerate(header):
        if name in col_index:
            raise LogParseError(f"duplicate column {name!r} in header")
        col_index[name] = i

    mandatory = [config.case_col, config.activity_col, config.timestamp_col]
    if config.event_id_col is not None:
        mandatory.append(config.event_id_col)
    for name in (*mandatory, *config.trace_attr_cols, *config.event_attr_cols):
        if name not in col_index:
            raise LogParseError(f"missing mandatory column {name!r}")
    declared = set(mandatory) | set(config.trace_attr_cols) | set(config.event_attr_cols)
    undeclared = [name for name in header if name not in declared]
    if undeclared:
        raise LogParseError(
            f"columns {undeclared!r} are neither core nor declared trace/event attributes"
        )

    attr_cols = list(config.trace_attr_cols) + list(config.event_attr_cols)
    raw_by_col: dict[str, list[str]] = {c: [] for c in attr_cols}
    records = []  # (case, activity, ts, event_id, {col: raw})
    seen_event_ids: set[str] = set()
    for row_no, row in enumerate(rows[1:], start=2):
        if not row or all(cell == "" for cell in row):
            continue
        if len(row) != len(header):
            raise LogParseError(f"row {row_no}: expected {len(header)} cells, got {len(row)}")
        case = row[col_index[config.case_col]]
        activity = row[col_index[config.activity_col]]
        ts_raw = row[col_index[config.timestamp_col]]
        try:
            ts = parse_timestamp(ts_raw)
        except ValueError:
            raise LogParseError(f"row {row_no}: unparseable timestamp {ts_raw!r}") from None
        if config.event_id_col is not None:
            event_id = row[col_index[config.event_id_col]]
        else:
            event_id = f"e{row_no - 1}"
        if event_id in seen_event_ids:
            raise LogParseError(f"row {row_no}: duplicate event id {event_id!r}")
        seen_event_ids.add(event_id)
        cells = {c: row[col_index[c]] for c in attr_cols}
        for c in attr_cols:
            if cells[c] != "":
                raw_by_col[c].append(cells[c])
        records.append((case, activity, ts, event_id, cells))

    kinds = {
        c: config.kinds.get(c) or _infer_kind(raw_by_col[c])
        for c in attr_cols
    }
    for c, kind in kinds.items():
        if kind not in KINDS:
            raise LogParseError(f"column {c!r}: unknown kind {kind!r}")

    by_case: dict[str, list] = {}
    for rec in records:
        by_case.setdefault(rec[0], []).append(rec)

    traces = []
    for case, recs in by_case.items():
        trace_attrs: dict[str, Value] = {}
        for c in config.trace_attr_cols:
            values = {rec[4][c] for rec in recs}
            typed = {_convert(v, kinds[c]) if v != "" else None for v in values}
            if len(typed) > 1:
                raise LogParseError(
                    f"trace-level column {c!r} varies within case {case!r}: {sorted(values)!r}"
                )
            (only,) = typed
            if only is not None:
                trace_attrs[c] = only
        events = []
        for _, activity, ts, event_id, cells in recs:
            attrs = {
                c: _convert(cells[c], kinds[c])
                for c in config.event_attr_cols
                if cells[c] != ""
            }
            events.append(Event(event_id, activity, ts, attrs))
        events.sort(key=lambda e: e.timestamp)  # stable: file order on ties
        traces.append(Trace(case, tuple(events), trace_attrs))

    schema: dict[tuple[str, str], str] = {}
    for c in config.trace_attr_cols:
        schema[(TRACE_LEVEL, c)] = kinds[c]
    for c in config.event_attr_cols:
        schema[(EVENT_LEVEL, c)] = kinds[c]
    return EventLog(tuple(traces), schema)


def to_csv(log: EventLog, header_comment: str | None = None) -> str:
    """Serialize a log to the flat CSV layout accepted by parse_csv.

    Columns: event id, case id, activity name, timestamp, then trace-level
    and event-level attributes in schema order.  Missing attributes are
    empty cells.
    """
    trace_cols = [n for (lvl, n) in log.schema if lvl == TRACE_LEVEL]
    event_cols = [n for (lvl, n) in log.schema if lvl == EVENT_LEVEL]
    clash = set(trace_cols) & set(event_cols)
    if clash:
        raise LogError(f"cannot serialize: attribute names used on both levels: {sorted(clash)!r}")
    core = ["event id", "case id", "activity name", "timestamp"]
    for c in trace_cols + event_cols:
        if c in core:
            raise LogError(f"cannot serialize: attribute column {c!r} clashes with a core column")

    def cell(value: Value | None, kind: str) -> str:
        if value is None:
            return ""
        if kind == KIND_TIMESTAMP:
            return format_timestamp(int(value))
        return fmt_value(value)

    out = io.StringIO()
    if header_comment:
        out.write(f"# {header_comment}\n")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(core + trace_cols + event_cols)
    for trace in log.traces:
        for event in trace.events:
            row = [event.event_id, trace.case_id, event.activity, format_timestamp(event.timestamp)]
            row += [cell(trace.attrs.get(c), log.schema[(TRACE_LEVEL, c)]) for c in trace_cols]
            row += [cell(event.attrs.get(c), log.schema[(EVENT_LEVEL, c)]) for c in event_cols]
            writer.writerow(row)
    return out.getvalue()


def csv_config_for(log: EventLog) -> CsvLogConfig:
    """Config that re-parses to_csv output into a field-identical log."""
    trace_cols = tuple(n for (lvl, n) in log.schema if lvl == TRACE_LEVEL)
    event_cols = tuple(n for (lvl, n) in log.schema if lvl == EVENT_LEVEL)
    kinds = {n: log.schema[(lvl, n)] for (lvl, n) in log.schema}
    return CsvLogConfig(
        case_col="case id",
        activity_col="activity name",
        timestamp_col="timestamp",
        event_id_col="event id",
        trace_attr_cols=trace_cols,
        event_attr_cols=event_cols,
        kinds=kinds,
    )


class XesParseResult(NamedTuple):
    log: EventLog
    ignored: int


_XES_KINDS = {"string": KIND_TEXT, "int": KIND_INTEGER, "float": KIND_REAL, "date": KIND_TIMESTAMP}


def _localname(tag: str) -> str:
    return tag.split("}", 1)[-1]


def parse_xes(source) -> XesParseResult:
    """Parse a minimal XES document: log/trace/event with string/int/float/date attrs.

    `concept:name` gives the case id on traces and the activity on events;
    `time:timestamp` gives the event timestamp; `identity:id` on an event,
    if present, gives the event id (otherwise ids are synthesized as e1,
    e2, ... in document order).  Anything else is ignored and counted in
    the returned `ignored` tally.  Events are re-sorted by timestamp
    within each trace.
    """
    text = source.read() if hasattr(source, "read") else source
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise LogParseError(f"malformed XML: {exc}") from None
    if _localname(root.tag) != "log":
        raise LogParseError(f"root element is {_localname(root.tag)!r}, expected 'log'")

    ignored = 0
    schema: dict[tuple[str, str], str] = {}
    traces: list[Trace] = []
    event_counter = 0

    def record_kind(level: str, name: str, kind: str):
        prev = schema.setdefault((level, name), kind)
        if prev != kind:
            raise LogParseError(
                f"attribute {name!r} at {level} level declared as both {prev!r} and {kind!r}"
            )

    def read_attr(elem) -> tuple[str, str, Value] | None:
        """Returns (xes-kind-tag, key, typed value), or None if not an attribute element."""
        tag = _localname(elem.tag)
        if tag not in _XES_KINDS:
            return None
        key = elem.get("key")
        raw = elem.get("value")
        if key is None or raw is None:
            raise LogParseError(f"<{tag}> element without key/value attributes")
        try:
            if tag == "int":
                value: Value = int(raw)
            elif tag == "float":
                value = float(raw)
            elif tag == "date":
                value = parse_timestamp(raw)
            else:
                value = raw
        except ValueError:
            raise LogParseError(f"attribute {key!r}: unparseable {tag} value {raw!r}") from None
        return tag, key, value

    for trace_elem in root:
        if _localname(trace_elem.tag) != "trace":
            ignored += 1
            continue
        case_id = None
        trace_attrs: dict[str, Value] = {}
        events: list[Event] = []
        for child in trace_elem:
            tag = _localname(child.tag)
            if tag == "event":
                activity = None
                timestamp = None
                event_id = None
                attrs: dict[str, Value] = {}
                for attr_elem in child:
                    parsed = read_attr(attr_elem)
                    if parsed is None:
                        ignored += 1
                        continue
                    xes_kind, key, value = parsed
                    if key == "concept:name":
                        activity = str(value)
                    elif key == "time:timestamp":
                        if xes_kind != "date":
                            raise LogParseError("time:timestamp must be a date attribute")
                        timestamp = int(value)
                    elif key == "identity:id":
                        event_id = str(value)
                    else:
                        attrs[key] = value
                        record_kind(EVENT_LEVEL, key, _XES_KINDS[xes_kind])
                if activity is None:
                    raise LogParseError("event missing concept:name")
                if timestamp is None:
                    raise LogParseError("event missing time:timestamp")
                if event_id is None:
                    event_counter += 1
                    event_id = f"e{event_counter}"
                events.append(Event(event_id, activity, timestamp, attrs))
            else:
                parsed = read_attr(child)
                if parsed is None:
                    ignored += 1
                    continue
                xes_kind, key, value = parsed
                if key == "concept:name":
                    case_id = str(value)
                else:
                    trace_attrs[key] = value
                    record_kind(TRACE_LEVEL, key, _XES_KINDS[xes_kind])
        if case_id is None:
            raise LogParseError("trace missing concept:name")
        events.sort(key=lambda e: e.timestamp)
        traces.append(Trace(case_id, tuple(events), trace_attrs))

    return XesParseResult(EventLog(tuple(traces), schema), ignored)


def enrich_durations(log: EventLog, attr_name: str, unit: str = "hours") -> EventLog:
    """Add a derived event attribute holding the gap to the next event.

    Every event except the last of its trace gains `attr_name` = timestamp
    of the following event minus its own, converted to `unit` and rounded
    half-up to an integer.  Raises LogError on a name collision with an
    existing event attribute.
    """
    if unit not in MS_PER_UNIT:
        raise LogError(f"unknown duration unit {unit!r}; use one of {sorted(MS_PER_UNIT)}")
    if (EVENT_LEVEL, attr_name) in log.schema:
        raise LogError(f"event attribute {attr_name!r} already exists")
    divisor = MS_PER_UNIT[unit]
    new_traces = []
    for trace in log.traces:
        events = list(trace.events)
        enriched = []
        for i, event in enumerate(events):
            if i + 1 < len(events):
                delta = events[i + 1].timestamp - event.timestamp
                duration = round_half_up(delta / divisor)
                enriched.append(replace(event, attrs={**event.attrs, attr_name: duration}))
            else:
                enriched.append(event)
        new_traces.append(replace(trace, events=tuple(enriched)))
    schema = {**log.schema, (EVENT_LEVEL, attr_name): KIND_INTEGER}
    return EventLog(tuple(new_traces), schema)
