"""Canonical repair-company example: model, plan, template and fixtures.

A company repairs products in three steps (inspection, repair, final
test).  Newer models are harder to handle; team size and the number of
inspection tests drive the durations.  The manager wants to know why one
repair took 577 hours when it should have taken at most 500, and what
would have had to be different.

Everything the demos, tests and shipped configs need for this example
lives here so there is a single source of truth.
"""
from __future__ import annotations

from .eventlog import CsvLogConfig
from .sem import Sem, parse_sem
from .situations import (
    Activity,
    ActivityAttr,
    Instance,
    Provenance,
    SituationFeature,
    SituationFeaturePlan,
    TraceAttr,
)
from .synth import LogTemplate, repair_template  # re-export for convenience

# Structural equations for the repair company.  The third equation governs
# the inspection duration (it depends only on the model); the repair
# duration is governed by the last equation.  All features are integers.
REPAIR_SEM_TEXT = """\
# Repair-company structural equations.
# inspDuration depends on the model only; repairDuration depends on the
# model and on the number of inspection tests.
model = N ; noise model ~ Uniform(1, 10) ; integer
"team size" = N ; noise "team size" ~ Uniform(1, 3) ; integer
inspDuration = 10 * model + N ; noise inspDuration ~ Uniform(-2, 4) ; integer
inspNumTest = 5 * model + 3 * "team size" + N ; noise inspNumTest ~ Uniform(-1, 2) ; integer
repairDuration = 50 * model + 5 * inspNumTest + N ; noise repairDuration ~ Uniform(10, 20) ; integer
"""

# A non-linear variant exercising power, floor, sqrt and mod nodes.
NONLINEAR_SEM_TEXT = """\
# Non-linear structural equations (software-project flavoured).
Complexity = N ; noise Complexity ~ Uniform(1, 10)
Priority = N ; noise Priority ~ Uniform(1, 3)
ProductBacklogDuration = Complexity^2 + floor(Complexity / 2) + N ; noise ProductBacklogDuration ~ Uniform(-2, 4)
NumEmployees = Complexity * sqrt(Complexity) + Priority^2 + N ; noise NumEmployees ~ Uniform(-1, 2)
ImplementationDuration = Complexity^3 + 5 * Complexity * NumEmployees * sqrt(NumEmployees) - (mod(NumEmployees, 5) + 1) * sqrt(mod(NumEmployees, 5) + 1) + N ; noise ImplementationDuration ~ Uniform(10, 20)
"""

FEATURES = ("model", "team size", "inspNumTest", "inspDuration", "repairDuration")
TARGET = "repairDuration"
ACTIONABLE = ("model", "team size", "inspNumTest", "inspDuration")
THRESHOLD = 500.0

# The 6-row snapshot of the raw event log (two repair cases).
TABLE1_CSV = """\
event id,case id,activity name,timestamp,team size,num test,model
e1,c1,inspection,2020-04-01T08:00:00,2,42,7
e2,c1,repair,2020-04-04T07:00:00,2,42,7
e3,c1,final test,2020-04-28T08:00:00,2,42,7
e4,c2,inspection,2020-05-01T08:00:00,3,26,5
e5,c2,repair,2020-05-03T11:00:00,3,26,5
e6,c2,final test,2020-05-19T20:00:00,3,26,5
"""


def repair_sem() -> Sem:
    return parse_sem(REPAIR_SEM_TEXT)


def nonlinear_sem() -> Sem:
    return parse_sem(NONLINEAR_SEM_TEXT)


def repair_csv_config() -> CsvLogConfig:
    return CsvLogConfig(
        case_col="case id",
        activity_col="activity name",
        timestamp_col="timestamp",
        event_id_col="event id",
        trace_attr_cols=("team size", "model"),
        event_attr_cols=("num test",),
    )


def repair_plan(duration_attr: str = "duration") -> SituationFeaturePlan:
    """Plan anchored at the repair activity, targeting its duration."""
    return SituationFeaturePlan(
        descriptive=(
            SituationFeature("model", TraceAttr("model")),
            SituationFeature("team size", TraceAttr("team size")),
            SituationFeature("inspNumTest", ActivityAttr("inspection", "num test")),
            SituationFeature("inspDuration", ActivityAttr("inspection", duration_attr)),
        ),
        target=SituationFeature("repairDuration", ActivityAttr("repair", duration_attr)),
        anchor=Activity("repair"),
    )


def i_repair() -> Instance:
    """The undesirable instance from case c1: the repair took 577 hours."""
    return Instance(
        values={
            "model": 7,
            "team size": 2,
            "inspNumTest": 42,
            "inspDuration": 71,
            "repairDuration": 577,
        },
        provenance=Provenance("c1", 2),
    )
