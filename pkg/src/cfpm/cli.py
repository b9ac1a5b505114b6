"""Command-line entry point.

Subcommands:

  synth      sample a structural model and materialize it as an event log
  extract    build the situation feature table from a log
  sem check  validate a model file and print its parent graph as DOT
  explain    produce counterfactual explanations for one instance
  evaluate   train the regression baselines and measure the accuracy gap

Runs are driven by a flat key=value config file; `--seed`, `--out` and
repeated `--set key=value` flags override single entries.  Every numeric
output file starts with a `# seed=... config=...` comment so a run can be
traced back to its inputs.  Exit codes: 0 success, 2 usage or config
error, 3 no explanation found, 4 model or abduction inconsistency.
"""
from __future__ import annotations

import argparse
import hashlib
import io
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import baselines
from .eventlog import (
    CsvLogConfig,
    EventLog,
    LogError,
    enrich_durations,
    parse_csv,
    parse_xes,
    to_csv,
)
from .explain import (
    DIRECTION_ABOVE,
    DIRECTION_BELOW,
    ExplainError,
    PredictionError,
    explain_instance,
    generate_candidates,
    is_desirable,
    render,
    report_json,
)
from .sem import AbductionError, Sem, SemError, abduce, dot_graph, parse_sem
from .situations import (
    Activity,
    ActivityAttr,
    Instance,
    PlanError,
    SituationFeature,
    SituationFeaturePlan,
    SituationTable,
    TRACE_END,
    TraceAttr,
    build_table,
    table_to_csv,
    table_to_json,
)
from .synth import SynthesisError, synthesize_log_with_table, template_from_plan

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_EXPLANATION = 3
EXIT_SEM = 4


class ConfigError(ValueError):
    pass


def load_config_file(path: Path) -> dict[str, str]:
    """Flat `key = value` lines; '#' starts a comment, blank lines ignored."""
    entries: dict[str, str] = {}
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{line_no}: expected 'key = value', got {stripped!r}")
        key, value = stripped.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


def config_hash(entries: dict[str, str]) -> str:
    canonical = "".join(f"{k}={v}\n" for k, v in sorted(entries.items()))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def _split_list(raw: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in raw.split(",") if part.strip())


def _parse_source(raw: str, key: str):
    parts = raw.split(":", 2)
    if parts[0] == "trace" and len(parts) == 2:
        return TraceAttr(parts[1].strip())
    if parts[0] == "activity" and len(parts) == 3:
        return ActivityAttr(parts[1].strip(), parts[2].strip())
    raise ConfigError(
        f"{key}: expected 'trace:<attr>' or 'activity:<activity>:<attr>', got {raw!r}"
    )


@dataclass
class RunConfig:
    entries: dict[str, str]
    hash: str
    out_dir: Path
    seed: int
    plan: SituationFeaturePlan | None = None
    sem_path: Path | None = None
    log_path: Path | None = None
    enrich_attr: str | None = None
    enrich_unit: str = "hours"
    actionable: tuple[str, ...] = ()
    threshold: float | None = None
    direction: str = DIRECTION_BELOW
    k: int = 8
    candidates: int = 1000
    extra: dict = field(default_factory=dict)

    def require(self, name: str, value):
        if value is None or (isinstance(value, tuple) and not value):
            raise ConfigError(f"config key {name!r} is required for this command")
        return value


def build_run_config(entries: dict[str, str], args) -> RunConfig:
    entries = dict(entries)
    for override in getattr(args, "set", None) or []:
        if "=" not in override:
            raise ConfigError(f"--set expects key=value, got {override!r}")
        key, value = override.split("=", 1)
        entries[key.strip()] = value.strip()
    if getattr(args, "seed", None) is not None:
        entries["seed"] = str(args.seed)
    if getattr(args, "out", None) is not None:
        entries["out"] = args.out

    def get(key: str, default: str | None = None) -> str | None:
        return entries.get(key, default)

    def get_int(key: str, default: int) -> int:
        raw = get(key)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"config key {key!r} must be an integer, got {raw!r}") from None

    def get_float(key: str) -> float | None:
        raw = get(key)
        if raw is None:
            return None
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"config key {key!r} must be a number, got {raw!r}") from None

    features = [
        SituationFeature(key[len("feature.") :].strip(), _parse_source(value, key))
        for key, value in entries.items()
        if key.startswith("feature.")
    ]
    plan = None
    if features:
        target_name = get("target")
        if target_name is None:
            raise ConfigError("config declares features but no 'target'")
        by_name = {f.name: f for f in features}
        if target_name not in by_name:
            raise ConfigError(f"target {target_name!r} is not among the declared features")
        anchor_raw = get("anchor", "trace-end")
        if anchor_raw == "trace-end":
            anchor = TRACE_END
        elif anchor_raw.startswith("activity:"):
            anchor = Activity(anchor_raw.split(":", 1)[1].strip())
        else:
            raise ConfigError(
                f"anchor must be 'trace-end' or 'activity:<name>', got {anchor_raw!r}"
            )
        try:
            plan = SituationFeaturePlan(
                descriptive=tuple(f for f in features if f.name != target_name),
                target=by_name[target_name],
                anchor=anchor,
            )
        except PlanError as exc:
            raise ConfigError(str(exc)) from None

    enrich_attr = None
    enrich_unit = "hours"
    enrich_raw = get("enrich")
    if enrich_raw:
        parts = enrich_raw.split(":")
        enrich_attr = parts[0].strip()
        if len(parts) > 1:
            enrich_unit = parts[1].strip()

    direction = get("direction", DIRECTION_BELOW)
    if direction not in (DIRECTION_BELOW, DIRECTION_ABOVE):
        raise ConfigError(f"direction must be 'below' or 'above', got {direction!r}")

    config = RunConfig(
        entries=entries,
        hash=config_hash(entries),
        out_dir=Path(get("out", "out")),
        seed=get_int("seed", 0),
        plan=plan,
        sem_path=Path(get("sem")) if get("sem") else None,
        log_path=Path(get("log")) if get("log") else None,
        enrich_attr=enrich_attr,
        enrich_unit=enrich_unit,
        actionable=_split_list(get("actionable", "")),
        threshold=get_float("threshold"),
        direction=direction,
        k=get_int("k", 8),
        candidates=get_int("candidates", 1000),
    )
    config.extra = {
        "synth_n": get_int("synth.n", 0),
        "epsilon": get_float("epsilon") or 0.05,
        "test_fraction": get_float("test_fraction") or 0.2,
        "eval_instances": get_int("eval.instances", 40),
        "eval_candidates": get_int("eval.candidates", 25),
        "lwl_k": get_int("lwl.k", 18),
        "lwl_kernel": get("lwl.kernel", baselines.KERNEL_LINEAR),
        "rt_min_leaf": get_int("rt.min_leaf", 2),
        "case": get("case"),
        "prefix": get_int("prefix", 0),
        "synth_activities": _split_list(get("synth.activities", "inspection, repair, final test")),
    }
    if config.plan is not None:
        unknown = sorted(set(config.actionable) - set(config.plan.descriptive_names))
        if unknown:
            raise ConfigError(f"actionable features not in the plan: {unknown!r}")
    if config.k < 1:
        raise ConfigError(f"k must be >= 1, got {config.k}")
    if config.candidates < config.k:
        raise ConfigError(
            f"candidate count ({config.candidates}) must be >= k ({config.k})"
        )
    return config


def load_sem(config: RunConfig) -> Sem:
    path = config.require("sem", config.sem_path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read model file {path}: {exc}") from None
    return parse_sem(text)


def csv_config_from_entries(entries: dict[str, str]) -> CsvLogConfig:
    def need(key: str) -> str:
        if key not in entries:
            raise ConfigError(f"config key {key!r} is required to parse a CSV log")
        return entries[key]

    return CsvLogConfig(
        case_col=need("csv.case"),
        activity_col=need("csv.activity"),
        timestamp_col=need("csv.timestamp"),
        event_id_col=entries.get("csv.event_id"),
        trace_attr_cols=_split_list(entries.get("csv.trace_attrs", "")),
        event_attr_cols=_split_list(entries.get("csv.event_attrs", "")),
    )


def load_log(config: RunConfig) -> EventLog:
    path = config.require("log", config.log_path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read log file {path}: {exc}") from None
    if path.suffix.lower() == ".xes":
        log, ignored = parse_xes(text)
        if ignored:
            print(f"note: ignored {ignored} unsupported XES element(s)", file=sys.stderr)
    else:
        log = parse_csv(text, csv_config_from_entries(config.entries))
    if config.enrich_attr:
        log = enrich_durations(log, config.enrich_attr, config.enrich_unit)
    return log


def header_comment(config: RunConfig) -> str:
    return f"seed={config.seed} config={config.hash}"


def _write(path: Path, content: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(content, encoding="utf-8")


def pick_instance(table: SituationTable, config: RunConfig) -> Instance:
    """The designated instance: config case/prefix, or the first undesirable row."""
    case = config.extra["case"]
    prefix_index = config.extra["prefix"]
    if case is not None:
        rows = [r for r in table.rows if r.provenance and r.provenance.case_id == case]
        if not rows:
            raise ConfigError(f"no instance extracted for case {case!r}")
        if not 0 <= prefix_index < len(rows):
            raise ConfigError(
                f"case {case!r} has {len(rows)} instance(s); prefix index "
                f"{prefix_index} is out of range"
            )
        return rows[prefix_index]
    threshold = config.require("threshold", config.threshold)
    for row in table.rows:
        value = row.values[table.plan.target.name]
        if value is not None and not is_desirable(float(value), threshold, config.direction):
            return row
    raise ConfigError(
        "no undesirable instance found; pass 'case' (and optionally 'prefix') to pick one"
    )


# --- subcommands -------------------------------------------------------------


def cmd_synth(config: RunConfig) -> int:
    sem = load_sem(config)
    plan = config.require("feature.* plan", config.plan)
    n = config.extra["synth_n"]
    if n < 0:
        raise ConfigError(f"synth.n must be >= 0, got {n}")
    duration_attr = config.require("enrich", config.enrich_attr)
    template = template_from_plan(
        plan, duration_attr, activities=config.extra["synth_activities"]
    )
    log, truth = synthesize_log_with_table(sem, template, n, config.seed)
    comment = header_comment(config)
    _write(config.out_dir / "log.csv", to_csv(log, header_comment=comment))
    _write(config.out_dir / "truth.csv", table_to_csv(truth, header_comment=comment))
    print(f"wrote {len(log.traces)} traces / {log.event_count()} events to {config.out_dir / 'log.csv'}")
    print(f"wrote {len(truth.rows)} ground-truth rows to {config.out_dir / 'truth.csv'}")
    return EXIT_OK


def cmd_extract(config: RunConfig) -> int:
    plan = config.require("feature.* plan", config.plan)
    log = load_log(config)
    table = build_table(log, plan)
    comment = header_comment(config)
    meta = {"seed": config.seed, "config_hash": config.hash}
    _write(config.out_dir / "table.csv", table_to_csv(table, header_comment=comment))
    _write(config.out_dir / "table.json", table_to_json(table, meta=meta))
    print(
        f"extracted {len(table.rows)} instance(s) "
        f"({table.dropped_missing_target} dropped for missing target)"
    )
    return EXIT_OK


def cmd_sem_check(config: RunConfig) -> int:
    sem = load_sem(config)
    sys.stdout.write(dot_graph(sem))
    return EXIT_OK


def cmd_explain(config: RunConfig) -> int:
    sem = load_sem(config)
    plan = config.require("feature.* plan", config.plan)
    threshold = config.require("threshold", config.threshold)
    actionable = config.require("actionable", config.actionable)
    log = load_log(config)
    table = build_table(log, plan)
    given = pick_instance(table, config)

    abduce(sem, given)  # fail fast on an inconsistent instance
    explanation_set = explain_instance(
        table,
        given,
        sem,
        actionable,
        threshold=threshold,
        direction=config.direction,
        k=config.k,
        count=config.candidates,
        seed=config.seed,
    )
    text, report = render(explanation_set)
    meta = {"seed": config.seed, "config_hash": config.hash}
    _write(config.out_dir / "report.txt", text)
    _write(config.out_dir / "report.json", report_json(report, meta=meta))

    plot = io.StringIO()
    plot.write(f"# {header_comment(config)}\n")
    plot.write("index,predicted,effective_domain_size\n")
    for i, cf in enumerate(explanation_set.explanations):
        plot.write(f"{i},{cf.predicted_target!r},{len(cf.effective_domain)}\n")
    _write(config.out_dir / "plot_explanations.csv", plot.getvalue())

    sys.stdout.write(text)
    return EXIT_OK if explanation_set.explanations else EXIT_NO_EXPLANATION


def cmd_evaluate(config: RunConfig) -> int:
    sem = load_sem(config)
    plan = config.require("feature.* plan", config.plan)
    threshold = config.require("threshold", config.threshold)
    actionable = config.require("actionable", config.actionable)
    log = load_log(config)
    table = build_table(log, plan)
    eps = config.extra["epsilon"]

    train_table, test_rows = baselines.split_rows(
        table, config.extra["test_fraction"], config.seed
    )
    rt = baselines.train_rt(train_table, min_leaf=config.extra["rt_min_leaf"])
    lwl = baselines.train_lwl(
        train_table, k=config.extra["lwl_k"], kernel=config.extra["lwl_kernel"]
    )

    eval_instances = list(test_rows[: config.extra["eval_instances"]])
    eval_candidates = generate_candidates(
        train_table, actionable, config.extra["eval_candidates"], config.seed + 1
    )

    lines = ["predictor,observational_accuracy,counterfactual_accuracy,epsilon,seed"]
    results = {}
    for name, model in (("rt", rt), ("lwl", lwl)):
        obs = baselines.observational_accuracy(model, test_rows, eps)
        cf = baselines.counterfactual_accuracy(model, sem, eval_instances, eval_candidates, eps)
        results[name] = (obs, cf)
        lines.append(f"{name},{obs.accuracy!r},{cf.accuracy!r},{eps!r},{config.seed}")
    comparison = f"# {header_comment(config)}\n" + "\n".join(lines) + "\n"
    _write(config.out_dir / "comparison.csv", comparison)

    given = pick_instance(table, config)
    abduce(sem, given)
    explanation_set = explain_instance(
        table,
        given,
        sem,
        actionable,
        threshold=threshold,
        direction=config.direction,
        k=config.k,
        count=config.candidates,
        seed=config.seed,
    )
    plot = io.StringIO()
    plot.write(f"# {header_comment(config)}\n")
    plot.write(
        "index,sem_predicted,rt_predicted,lwl_predicted,"
        "sem_domain_size,model_domain_size\n"
    )
    gaps = []
    for i, cf in enumerate(explanation_set.explanations):
        modified = {**given.values, **cf.candidate}
        rt_pred = baselines.predict_model(rt, modified)
        lwl_pred = baselines.predict_model(lwl, modified)
        gaps.append(abs(cf.predicted_target - rt_pred))
        gaps.append(abs(cf.predicted_target - lwl_pred))
        plot.write(
            f"{i},{cf.predicted_target!r},{rt_pred!r},{lwl_pred!r},"
            f"{len(cf.effective_domain)},{len(cf.candidate)}\n"
        )
    _write(config.out_dir / "plot_gap.csv", plot.getvalue())

    def show(acc):
        return "n/a" if acc is None else f"{acc:.3f}"

    for name, (obs, cf) in results.items():
        print(
            f"{name}: observational accuracy {show(obs.accuracy)}, "
            f"counterfactual accuracy {show(cf.accuracy)} (epsilon {eps})"
        )
    if gaps:
        print(f"mean |model - structural| gap over {len(explanation_set)} explanations: "
              f"{sum(gaps) / len(gaps):.2f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfpm",
        description="Counterfactual case-level explanations for process event logs.",
        epilog=(
            "Desirability is a strict inequality: with direction=below, a prediction "
            "equal to the threshold is NOT desirable (use threshold 501 to accept "
            "'at most 500')."
        ),
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key=value config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="override the output directory")
    common.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override any single config entry (repeatable)",
    )

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="sample a model into an event log")
    sub.add_parser("extract", parents=[common], help="build the situation feature table")

    sem_cmd = sub.add_parser("sem", help="model utilities")
    sem_sub = sem_cmd.add_subparsers(dest="sem_command", required=True)
    check = sem_sub.add_parser("check", parents=[common], help="validate and print DOT graph")
    check.add_argument("--sem", dest="sem_path", type=Path, help="model file (overrides config)")

    explain_cmd = sub.add_parser("explain", parents=[common], help="explain one instance")
    explain_cmd.add_argument("--case", help="case id of the instance to explain")
    explain_cmd.add_argument(
        "--prefix", type=int, help="situation index within the case (0-based)"
    )

    sub.add_parser("evaluate", parents=[common], help="baseline accuracy comparison")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        entries = load_config_file(args.config) if args.config else {}
        if getattr(args, "case", None) is not None:
            entries["case"] = args.case
        if getattr(args, "prefix", None) is not None:
            entries["prefix"] = str(args.prefix)
        if getattr(args, "sem_path", None) is not None:
            entries["sem"] = str(args.sem_path)
        config = build_run_config(entries, args)

        if args.command == "synth":
            return cmd_synth(config)
        if args.command == "extract":
            return cmd_extract(config)
        if args.command == "sem":
            return cmd_sem_check(config)
        if args.command == "explain":
            return cmd_explain(config)
        if args.command == "evaluate":
            return cmd_evaluate(config)
        parser.error(f"unknown command {args.command!r}")
    except PredictionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SEM if isinstance(exc.__cause__, SemError) else EXIT_CONFIG
    except SemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SEM
    except (ConfigError, LogError, PlanError, ExplainError,
            baselines.TrainingError, SynthesisError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
