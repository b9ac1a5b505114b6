"""Materialize sampled feature rows as an event log.

A LogTemplate says where each model feature lives in a trace: as a
trace-level attribute, as an event-level attribute on one activity, or as
the duration of one activity (realized through timestamps).  Each sampled
row becomes one linear trace over the template's activity sequence; event
timestamps accumulate the durations, so re-extracting the situation table
(after duration enrichment) recovers the sampled rows exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

from ._util import round_half_up
from .eventlog import (
    EVENT_LEVEL,
    KIND_INTEGER,
    KIND_REAL,
    TRACE_LEVEL,
    Event,
    EventLog,
    Trace,
    parse_timestamp,
)
from .sem import Sem, sample
from .situations import (
    ActivityAttr,
    Instance,
    SituationFeaturePlan,
    SituationTable,
    TraceAttr,
    compute_domains,
)

MS_PER_HOUR = 3_600_000


class SynthesisError(ValueError):
    pass


@dataclass(frozen=True)
class TracePlacement:
    attribute: str


@dataclass(frozen=True)
class EventAttrPlacement:
    activity: str
    attribute: str


@dataclass(frozen=True)
class DurationPlacement:
    activity: str


Placement = TracePlacement | EventAttrPlacement | DurationPlacement


@dataclass(frozen=True)
class LogTemplate:
    """How sampled feature rows map onto traces.

    Durations are in hours.  Activities without a model-governed duration
    take theirs from `fixed_durations_hours`; the last activity needs no
    duration at all (nothing follows it).
    """

    placements: Mapping[str, Placement]
    activities: tuple[str, ...] = ("inspection", "repair", "final test")
    epoch_ms: int = parse_timestamp("2020-04-01T08:00:00")
    case_gap_ms: int = 30 * 24 * MS_PER_HOUR
    fixed_durations_hours: Mapping[str, float] = field(
        default_factory=lambda: {"final test": 24.0}
    )

    def __post_init__(self):
        if not self.activities:
            raise SynthesisError("template needs at least one activity")
        duration_targets = [
            p.activity for p in self.placements.values() if isinstance(p, DurationPlacement)
        ]
        if len(duration_targets) != len(set(duration_targets)):
            raise SynthesisError("two features placed as the duration of the same activity")
        for placement in self.placements.values():
            if isinstance(placement, (EventAttrPlacement, DurationPlacement)):
                if placement.activity not in self.activities:
                    raise SynthesisError(
                        f"placement references unknown activity {placement.activity!r}"
                    )
        last = self.activities[-1]
        if last in duration_targets:
            raise SynthesisError(
                f"duration of the last activity {last!r} can never be recovered "
                "from timestamps; place that feature elsewhere"
            )


def repair_template() -> LogTemplate:
    """Template for the repair-company log (3 activities, 5 features)."""
    return LogTemplate(
        placements={
            "model": TracePlacement("model"),
            "team size": TracePlacement("team size"),
            "inspNumTest": EventAttrPlacement("inspection", "num test"),
            "inspDuration": DurationPlacement("inspection"),
            "repairDuration": DurationPlacement("repair"),
        }
    )


def synthesize_log_with_table(
    sem: Sem, template: LogTemplate, n: int, seed: int, target: str | None = None
) -> tuple[EventLog, SituationTable]:
    """Sample n rows and build the log plus the ground-truth table.

    Values placed as durations or event attributes are rounded half-up to
    integers (durations must be whole to survive the timestamp round
    trip); trace attributes keep their sampled values.  The returned table
    holds the post-rounding rows, i.e. exactly what the log encodes.
    Raises SynthesisError on a negative duration (a model whose noise
    support permits negative time) with the offending row index.
    """
    missing = sorted(set(sem.features) - set(template.placements))
    extra = sorted(set(template.placements) - set(sem.features))
    if missing or extra:
        raise SynthesisError(
            f"template/model feature mismatch: unplaced {missing!r}, unknown {extra!r}"
        )

    sampled = sample(sem, n, seed, target=target)
    rows: list[Instance] = []
    traces: list[Trace] = []
    event_counter = 0
    for case_index, raw_row in enumerate(sampled.rows):
        values = dict(raw_row.values)
        for feature, placement in template.placements.items():
            if isinstance(placement, (DurationPlacement, EventAttrPlacement)):
                values[feature] = round_half_up(float(values[feature]))
        durations: dict[str, float] = dict(template.fixed_durations_hours)
        for feature, placement in template.placements.items():
            if isinstance(placement, DurationPlacement):
                duration = values[feature]
                if duration < 0:
                    raise SynthesisError(
                        f"row {case_index}: negative duration {duration} "
                        f"for feature {feature!r}"
                    )
                durations[placement.activity] = float(duration)

        case_id = f"c{case_index + 1}"
        trace_attrs = {
            placement.attribute: values[feature]
            for feature, placement in template.placements.items()
            if isinstance(placement, TracePlacement)
        }
        events = []
        ts = template.epoch_ms + case_index * template.case_gap_ms
        for pos, activity in enumerate(template.activities):
            event_counter += 1
            attrs = {
                placement.attribute: values[feature]
                for feature, placement in template.placements.items()
                if isinstance(placement, EventAttrPlacement) and placement.activity == activity
            }
            events.append(Event(f"e{event_counter}", activity, ts, attrs))
            if pos + 1 < len(template.activities):
                if activity not in durations:
                    raise SynthesisError(
                        f"activity {activity!r} has no duration (neither model-governed "
                        "nor fixed) but is followed by another event"
                    )
                ts += round(durations[activity] * MS_PER_HOUR)
        traces.append(Trace(case_id, tuple(events), trace_attrs))
        rows.append(replace(raw_row, values=values))

    schema = {}
    for feature, placement in template.placements.items():
        if isinstance(placement, TracePlacement):
            key = (TRACE_LEVEL, placement.attribute)
        elif isinstance(placement, EventAttrPlacement):
            key = (EVENT_LEVEL, placement.attribute)
        else:
            continue
        kind = (
            KIND_INTEGER
            if all(isinstance(r.values[feature], int) for r in rows)
            else KIND_REAL
        )
        schema[key] = kind

    log = EventLog(tuple(traces), schema)
    truth = SituationTable(
        sampled.plan,
        tuple(rows),
        compute_domains(sampled.plan.feature_names, rows),
    )
    return log, truth


def synthesize_log(
    sem: Sem, template: LogTemplate, n: int, seed: int, target: str | None = None
) -> EventLog:
    log, _ = synthesize_log_with_table(sem, template, n, seed, target=target)
    return log


def template_from_plan(
    plan: SituationFeaturePlan,
    duration_attr: str,
    activities: tuple[str, ...] = ("inspection", "repair", "final test"),
    **template_kwargs,
) -> LogTemplate:
    """Derive placements from a plan: features reading `duration_attr` become
    duration placements of their activity, other activity features become
    event attributes, trace features become trace attributes."""
    placements: dict[str, Placement] = {}
    for feature in plan.features:
        src = feature.source
        if isinstance(src, TraceAttr):
            placements[feature.name] = TracePlacement(src.attribute)
        elif isinstance(src, ActivityAttr) and src.attribute == duration_attr:
            placements[feature.name] = DurationPlacement(src.activity)
        else:
            placements[feature.name] = EventAttrPlacement(src.activity, src.attribute)
    return LogTemplate(placements=placements, activities=activities, **template_kwargs)
