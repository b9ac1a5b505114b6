"""Counterfactual case-level explanations for process event logs.

The library turns an event log into a target-dependent feature table,
evaluates a user-supplied structural equation model over it, and produces
ranked, diverse "if feature X had been v, the outcome would have been y"
explanations via abduction, intervention and prediction.  Regression-tree
and locally-weighted baselines are included to show how correlation-based
prediction fails on counterfactual instances.
"""

from . import baselines, eventlog, explain, repair, sem, situations, synth
from .eventlog import (
    CsvLogConfig,
    Event,
    EventLog,
    LogError,
    LogParseError,
    Trace,
    enrich_durations,
    parse_csv,
    parse_xes,
    to_csv,
)
from .explain import (
    Candidate,
    CounterfactualInstance,
    ExplanationSet,
    ModelPredictor,
    SemPredictor,
    evaluate,
    explain_instance,
    filter_desirable,
    generate_candidates,
    distance,
    render,
    select_diverse,
)
from .sem import (
    AbductionError,
    CounterfactualSem,
    Sem,
    SemError,
    SemParseError,
    abduce,
    affects,
    intervene,
    parse_sem,
    predict,
    sample,
)
from .situations import (
    Activity,
    ActivityAttr,
    Instance,
    SituationFeature,
    SituationFeaturePlan,
    SituationTable,
    TraceAttr,
    TraceEnd,
    build_table,
    extract_situations,
    feature_value,
)
from .synth import LogTemplate, synthesize_log, synthesize_log_with_table

__version__ = "0.1.0"
