"""Target-dependent feature tables carved out of event logs.

A *situation* is a non-empty trace prefix ending at an anchor event; a
*situation feature* names either a trace-level attribute or an attribute
read from the latest event of a given activity inside the prefix.  A
*plan* fixes the descriptive features, the target feature and the anchor;
applying it to a log yields one instance per situation and, collectively,
the situation feature table used for candidate generation, distances and
baseline training.

Because every feature is read from the prefix only, instance values never
depend on events after the anchor (the target may read the anchor event
itself, e.g. a duration derived during enrichment).
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from ._util import fmt_value
from .eventlog import EVENT_LEVEL, TRACE_LEVEL, Event, EventLog, Value


class PlanError(ValueError):
    """A situation feature plan that cannot be applied."""


@dataclass(frozen=True)
class TraceAttr:
    attribute: str


@dataclass(frozen=True)
class ActivityAttr:
    activity: str
    attribute: str


Source = TraceAttr | ActivityAttr


@dataclass(frozen=True)
class SituationFeature:
    name: str
    source: Source


@dataclass(frozen=True)
class TraceEnd:
    pass


@dataclass(frozen=True)
class Activity:
    name: str


Anchor = TraceEnd | Activity

TRACE_END = TraceEnd()


@dataclass(frozen=True)
class SituationFeaturePlan:
    descriptive: tuple[SituationFeature, ...]
    target: SituationFeature
    anchor: Anchor

    def __post_init__(self):
        names = [f.name for f in self.descriptive]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise PlanError(f"duplicate descriptive feature names: {dupes!r}")
        if self.target.name in names:
            raise PlanError(f"target {self.target.name!r} also listed as descriptive")
        if isinstance(self.anchor, Activity):
            src = self.target.source
            if isinstance(src, ActivityAttr) and src.activity != self.anchor.name:
                raise PlanError(
                    f"target {self.target.name!r} reads activity {src.activity!r} "
                    f"but the anchor is {self.anchor.name!r}"
                )

    @property
    def features(self) -> tuple[SituationFeature, ...]:
        return (*self.descriptive, self.target)

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    @property
    def descriptive_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.descriptive)


@dataclass(frozen=True)
class Situation:
    case_id: str
    prefix: tuple[Event, ...]
    trace_attrs: Mapping[str, Value] = field(default_factory=dict)

    def __post_init__(self):
        if not self.prefix:
            raise PlanError("situation prefix must be non-empty")


@dataclass(frozen=True)
class Provenance:
    case_id: str
    prefix_length: int


@dataclass(frozen=True)
class Instance:
    """One extracted data point: feature name -> value (None = missing)."""

    values: Mapping[str, Value | None]
    provenance: Provenance | None = None


@dataclass(frozen=True)
class NumericDomain:
    lo: float
    hi: float

    @property
    def width(self) -> float:
        return self.hi - self.lo


@dataclass(frozen=True)
class CategoricalDomain:
    values: frozenset[str]


Domain = NumericDomain | CategoricalDomain


@dataclass(frozen=True)
class SituationTable:
    """The bag of instances extracted under one plan, plus observed domains.

    `domains` maps each feature name to the closed [min, max] interval of
    its observed numeric values, or to the set of observed categorical
    values; features never observed are absent.  Rows whose target value
    was missing are dropped and counted in `dropped_missing_target`.
    """

    plan: SituationFeaturePlan
    rows: tuple[Instance, ...]
    domains: Mapping[str, Domain]
    dropped_missing_target: int = 0

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, feature: str) -> list[Value | None]:
        return [row.values[feature] for row in self.rows]

    def observed(self, feature: str) -> list[Value]:
        return [v for v in self.column(feature) if v is not None]


def extract_situations(log: EventLog, anchor: Anchor) -> list[Situation]:
    """Carve prefixes out of every trace.

    For an Activity anchor, each occurrence of the anchor activity yields
    one situation whose prefix ends at (and includes) that event; traces
    without the activity contribute nothing.  For TraceEnd, each trace
    yields a single situation covering the whole trace.
    """
    situations: list[Situation] = []
    for trace in log.traces:
        if isinstance(anchor, TraceEnd):
            situations.append(Situation(trace.case_id, trace.events, trace.attrs))
        else:
            for i, event in enumerate(trace.events):
                if event.activity == anchor.name:
                    situations.append(
                        Situation(trace.case_id, trace.events[: i + 1], trace.attrs)
                    )
    return situations


def feature_value(situation: Situation, feature: SituationFeature) -> Value | None:
    """Read one feature from a situation; absence is None, never an error.

    Activity-sourced features read the attribute from the prefix event
    with that activity and the maximum timestamp (last occurrence wins on
    ties, matching the stable event order).
    """
    src = feature.source
    if isinstance(src, TraceAttr):
        return situation.trace_attrs.get(src.attribute)
    best: Event | None = None
    for event in situation.prefix:
        if event.activity == src.activity and (best is None or event.timestamp >= best.timestamp):
            best = event
    if best is None:
        return None
    return best.attrs.get(src.attribute)


def _check_plan_against_schema(log: EventLog, plan: SituationFeaturePlan):
    for feature in plan.features:
        src = feature.source
        if isinstance(src, TraceAttr):
            key = (TRACE_LEVEL, src.attribute)
        else:
            key = (EVENT_LEVEL, src.attribute)
        if key not in log.schema:
            raise PlanError(
                f"feature {feature.name!r} references {key[0]}-level attribute "
                f"{key[1]!r} which is absent from the log schema"
            )


def compute_domains(
    feature_names: Sequence[str], rows: Iterable[Instance]
) -> dict[str, Domain]:
    """Observed per-feature domains: numeric [min, max] or categorical value set."""
    numeric: dict[str, list[float]] = {}
    categorical: dict[str, set[str]] = {}
    for row in rows:
        for name in feature_names:
            v = row.values.get(name)
            if v is None:
                continue
            if isinstance(v, str):
                categorical.setdefault(name, set()).add(v)
            else:
                numeric.setdefault(name, []).append(float(v))
    domains: dict[str, Domain] = {}
    for name in feature_names:
        if name in numeric and name in categorical:
            raise PlanError(f"feature {name!r} mixes numeric and text values")
        if name in numeric:
            domains[name] = NumericDomain(min(numeric[name]), max(numeric[name]))
        elif name in categorical:
            domains[name] = CategoricalDomain(frozenset(categorical[name]))
    return domains


def build_table(log: EventLog, plan: SituationFeaturePlan) -> SituationTable:
    """Extract one instance per situation and assemble the feature table.

    Instances with a missing target value are dropped (their count is kept
    on the table); missing descriptive values are retained as None.
    """
    _check_plan_against_schema(log, plan)
    rows: list[Instance] = []
    dropped = 0
    for situation in extract_situations(log, plan.anchor):
        values = {f.name: feature_value(situation, f) for f in plan.features}
        if values[plan.target.name] is None:
            dropped += 1
            continue
        rows.append(
            Instance(values, Provenance(situation.case_id, len(situation.prefix)))
        )
    domains = compute_domains(plan.feature_names, rows)
    return SituationTable(plan, tuple(rows), domains, dropped)


def table_to_csv(table: SituationTable, header_comment: str | None = None) -> str:
    """CSV with one column per feature (descriptive first, target last)."""
    out = io.StringIO()
    if header_comment:
        out.write(f"# {header_comment}\n")
    writer = csv.writer(out, lineterminator="\n")
    names = table.plan.feature_names
    writer.writerow(names)
    for row in table.rows:
        writer.writerow([fmt_value(row.values[n]) for n in names])
    return out.getvalue()


def _domain_json(domain: Domain):
    if isinstance(domain, NumericDomain):
        return {"kind": "numeric", "min": domain.lo, "max": domain.hi}
    return {"kind": "categorical", "values": sorted(domain.values)}


def table_to_json(table: SituationTable, meta: Mapping | None = None) -> str:
    names = table.plan.feature_names
    doc = {
        "features": list(names),
        "target": table.plan.target.name,
        "domains": {n: _domain_json(d) for n, d in sorted(table.domains.items())},
        "dropped_missing_target": table.dropped_missing_target,
        "rows": [[row.values[n] for n in names] for row in table.rows],
    }
    if meta:
        doc["meta"] = dict(meta)
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"
