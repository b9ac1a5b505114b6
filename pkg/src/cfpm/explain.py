"""Counterfactual explanation pipeline.

Given an instance with an undesirable target value, the pipeline

  1. generates random candidates: partial value assignments to actionable
     features (half empirically valued from the table, half drawn
     uniformly from the feature domains),
  2. predicts each candidate's target value through a pluggable predictor
     (the three-step counterfactual route over a structural model, or a
     plain regressor that treats the modified instance as a new data
     point),
  3. keeps the desirable ones and selects a small, diverse, close subset:
     partition by the set of effectively changed features, sort each
     partition by L1 distance on normalized features, then pick round-
     robin across partitions, smallest changed-sets first.

The structural route prunes candidate features with no directed path to
the target before intervening; the regressor route substitutes every
candidate value verbatim.  That asymmetry is deliberate: it is what makes
correlation-based predictors recommend touching features that cannot
matter.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Mapping, Protocol, Sequence

import numpy as np

from ._util import fmt_number
from .sem import Sem, abduce, affects, evaluate_all, intervene
from .situations import (
    CategoricalDomain,
    Domain,
    Instance,
    NumericDomain,
    SituationTable,
)

DIRECTION_BELOW = "below"
DIRECTION_ABOVE = "above"


class ExplainError(ValueError):
    pass


class PredictionError(ExplainError):
    """A predictor failed on one candidate; carries the candidate index."""

    def __init__(self, message: str, candidate_index: int):
        self.candidate_index = candidate_index
        super().__init__(f"candidate {candidate_index}: {message}")


@dataclass(frozen=True)
class Candidate:
    """A value assignment to a non-empty subset of actionable features."""

    assignment: Mapping[str, float | int | str]

    def __post_init__(self):
        if not self.assignment:
            raise ExplainError("candidate assignment must be non-empty")

    @property
    def domain(self) -> frozenset[str]:
        return frozenset(self.assignment)


@dataclass(frozen=True)
class CounterfactualInstance:
    """A fully evaluated candidate.

    `values` holds the complete feature mapping after applying the
    candidate (with downstream propagation on the structural route, raw
    substitution on the regressor route); `effective_domain` is the set of
    changed features that can actually reach the target.
    """

    values: Mapping[str, float | int | str]
    predicted_target: float
    effective_domain: frozenset[str]
    candidate_index: int
    candidate: Mapping[str, float | int | str]
    distance: float = 0.0

    def values_key(self) -> tuple:
        def k(v):
            return ("n", float(v)) if isinstance(v, (int, float)) else ("s", v)

        return tuple(sorted((name, k(v)) for name, v in self.values.items()))


@dataclass(frozen=True)
class ExplanationSet:
    explanations: tuple[CounterfactualInstance, ...]
    given: Instance
    target: str
    threshold: float
    direction: str

    def __len__(self) -> int:
        return len(self.explanations)

    @property
    def observed_target(self):
        return self.given.values.get(self.target)


class Predictor(Protocol):
    def counterfactual(
        self, given: Instance, candidate: Candidate
    ) -> tuple[dict, float, frozenset[str]]:
        """Return (full value mapping, predicted target, effective domain)."""


class SemPredictor:
    """Abduction / action / prediction over a structural equation model."""

    def __init__(self, sem: Sem, target: str):
        if target not in sem.equations:
            raise ExplainError(f"target {target!r} is not a model feature")
        self.sem = sem
        self.target = target
        self._abduced: dict[int, object] = {}

    def abduced(self, given: Instance):
        key = id(given)
        if key not in self._abduced:
            self._abduced.clear()  # cache the current instance only
            self._abduced[key] = abduce(self.sem, given)
        return self._abduced[key]

    def counterfactual(self, given, candidate):
        effective = frozenset(
            f for f in candidate.assignment if affects(self.sem, f, self.target)
        )
        cf = intervene(
            self.abduced(given), {f: candidate.assignment[f] for f in effective}
        )
        env = evaluate_all(cf)
        values = {**given.values, **env}
        return values, env[self.target], effective


class ModelPredictor:
    """Plain regressor route: the modified instance is scored as a new data point.

    No abduction, no propagation, no causal pruning; the effective domain
    is the full candidate domain.
    """

    def __init__(self, model, target: str):
        self.model = model
        self.target = target

    def counterfactual(self, given, candidate):
        values = {**given.values, **candidate.assignment}
        predicted = float(self.model.predict_row(values))
        values[self.target] = predicted
        return values, predicted, candidate.domain


def generate_candidates(
    table: SituationTable,
    actionable: Sequence[str],
    count: int,
    seed: int,
) -> list[Candidate]:
    """Draw `count` random candidates over the actionable features.

    Each candidate's domain is a random non-empty subset of `actionable`
    (subset size uniform over 1..|actionable|, then a uniform subset of
    that size, so sparse and broad changes are equally represented).  The
    first ceil(count/2) candidates take their values from the table's
    observed column values (duplicates included); the rest draw uniformly
    from the feature domain: continuous on [min, max] for numeric
    features, uniform over the value set for categorical ones.
    """
    if count < 1:
        raise ExplainError(f"candidate count must be >= 1, got {count}")
    descriptive = table.plan.descriptive_names
    if not actionable:
        raise ExplainError("actionable feature set is empty")
    unknown = sorted(set(actionable) - set(descriptive))
    if unknown:
        raise ExplainError(f"actionable features not in the plan: {unknown!r}")
    features = [f for f in descriptive if f in set(actionable)]

    observed: dict[str, list] = {}
    for f in features:
        column = table.observed(f)
        if not column or f not in table.domains:
            raise ExplainError(f"actionable feature {f!r} has no observed values")
        observed[f] = column

    rng = np.random.default_rng(seed)
    empirical_cutoff = math.ceil(count / 2)
    candidates: list[Candidate] = []
    for i in range(count):
        size = int(rng.integers(1, len(features) + 1))
        chosen = sorted(rng.choice(len(features), size=size, replace=False))
        assignment = {}
        for idx in chosen:
            f = features[idx]
            if i < empirical_cutoff:
                column = observed[f]
                assignment[f] = column[int(rng.integers(0, len(column)))]
            else:
                domain = table.domains[f]
                if isinstance(domain, NumericDomain):
                    assignment[f] = float(rng.uniform(domain.lo, domain.hi))
                else:
                    values = sorted(domain.values)
                    assignment[f] = values[int(rng.integers(0, len(values)))]
        candidates.append(Candidate(assignment))
    return candidates


def evaluate(
    given: Instance,
    candidates: Sequence[Candidate],
    predictor: Predictor,
    target: str,
    domains: Mapping[str, Domain] | None = None,
) -> list[CounterfactualInstance]:
    """Run the predictor on every candidate.

    Predictor failures are re-raised as PredictionError tagged with the
    candidate index.  When `domains` is given, each result's distance to
    the given instance is filled in.
    """
    results: list[CounterfactualInstance] = []
    for index, candidate in enumerate(candidates):
        try:
            values, predicted, effective = predictor.counterfactual(given, candidate)
        except ExplainError:
            raise
        except ValueError as exc:
            raise PredictionError(str(exc), index) from exc
        cf = CounterfactualInstance(
            values=values,
            predicted_target=float(predicted),
            effective_domain=effective,
            candidate_index=index,
            candidate=dict(candidate.assignment),
        )
        if domains is not None:
            cf = replace(cf, distance=distance(given, cf, domains))
        results.append(cf)
    return results


def is_desirable(predicted: float, threshold: float, direction: str) -> bool:
    if direction == DIRECTION_BELOW:
        return predicted < threshold
    if direction == DIRECTION_ABOVE:
        return predicted > threshold
    raise ExplainError(f"unknown direction {direction!r}")


def filter_desirable(
    cfs: Sequence[CounterfactualInstance], threshold: float, direction: str
) -> list[CounterfactualInstance]:
    """Keep strictly-desirable results that still change something.

    Equality with the threshold is not desirable, and candidates whose
    effective domain was pruned to nothing explain nothing, so both are
    dropped.
    """
    return [
        cf
        for cf in cfs
        if cf.effective_domain and is_desirable(cf.predicted_target, threshold, direction)
    ]


def distance(
    given: Instance,
    cf: CounterfactualInstance,
    domains: Mapping[str, Domain],
) -> float:
    """L1 distance over min-max normalized features.

    Sums |norm(given) - norm(cf)| over the features named by `domains`
    (the descriptive features).  Categorical features contribute 0 when
    equal and 1 otherwise, as does a present-vs-missing mismatch;
    zero-width numeric domains contribute 0.
    """
    total = 0.0
    for name, domain in domains.items():
        a = given.values.get(name)
        b = cf.values.get(name)
        if a is None and b is None:
            continue
        if a is None or b is None:
            total += 1.0
            continue
        if isinstance(domain, NumericDomain):
            if domain.width == 0:
                continue
            total += abs(float(a) - float(b)) / domain.width
        else:
            total += 0.0 if a == b else 1.0
    return total


def select_diverse(
    cfs: Sequence[CounterfactualInstance],
    given: Instance,
    k: int,
    *,
    target: str,
    threshold: float,
    direction: str = DIRECTION_BELOW,
) -> ExplanationSet:
    """Pick up to k diverse, close counterfactual instances.

    Duplicates (identical full value mappings) are removed first, keeping
    the nearest (ties: lower predicted target, then lower candidate
    index).  Survivors are partitioned by effective domain, each partition
    is sorted ascending by (distance, predicted target, candidate index),
    and partitions are visited round-robin in (domain size, lexicographic
    feature names) order, taking each partition's best remaining member
    per round until k instances are collected or everything is exhausted.
    """
    if k < 1:
        raise ExplainError(f"k must be >= 1, got {k}")

    def rank(cf: CounterfactualInstance):
        return (cf.distance, cf.predicted_target, cf.candidate_index)

    best_by_values: dict[tuple, CounterfactualInstance] = {}
    for cf in cfs:
        key = cf.values_key()
        prev = best_by_values.get(key)
        if prev is None or rank(cf) < rank(prev):
            best_by_values[key] = cf

    partitions: dict[frozenset[str], list[CounterfactualInstance]] = {}
    for cf in best_by_values.values():
        partitions.setdefault(cf.effective_domain, []).append(cf)
    for members in partitions.values():
        members.sort(key=rank)

    ordered_domains = sorted(partitions, key=lambda d: (len(d), tuple(sorted(d))))
    queues = {d: list(partitions[d]) for d in ordered_domains}
    selected: list[CounterfactualInstance] = []
    while len(selected) < k and any(queues.values()):
        for domain in ordered_domains:
            if queues[domain]:
                selected.append(queues[domain].pop(0))
                if len(selected) == k:
                    break
    return ExplanationSet(tuple(selected), given, target, threshold, direction)


def render(explanation_set: ExplanationSet) -> tuple[str, dict]:
    """Human-readable sentences plus a JSON-serializable report."""
    given = explanation_set.given
    target = explanation_set.target
    observed = explanation_set.observed_target
    lines = []
    if not explanation_set.explanations:
        lines.append(
            "No desirable counterfactual explanation was found "
            f"(target {target!r}, threshold {fmt_number(explanation_set.threshold)}, "
            f"direction {explanation_set.direction})."
        )
    for cf in explanation_set.explanations:
        changed = {f: cf.values[f] for f in sorted(cf.effective_domain)}
        clauses = " and ".join(
            f'the "{name}" had been set to {fmt_number(v) if isinstance(v, (int, float)) else v}'
            for name, v in changed.items()
        )
        lines.append(
            f'If {clauses}, then the "{target}" would have been '
            f"{fmt_number(cf.predicted_target)} instead of "
            f"{fmt_number(observed) if observed is not None else '?'}."
        )
    report = {
        "given": dict(given.values),
        "target": target,
        "observed": observed,
        "threshold": explanation_set.threshold,
        "direction": explanation_set.direction,
        "explanations": [
            {
                "changed": {f: cf.values[f] for f in sorted(cf.effective_domain)},
                "predicted": cf.predicted_target,
                "distance": cf.distance,
                "effective_domain": sorted(cf.effective_domain),
            }
            for cf in explanation_set.explanations
        ],
    }
    return "\n".join(lines) + "\n", report


def report_json(report: dict, meta: Mapping | None = None) -> str:
    doc = dict(report)
    if meta:
        doc["meta"] = dict(meta)
    return json.dumps(doc, indent=2) + "\n"


def explain_instance(
    table: SituationTable,
    given: Instance,
    sem: Sem,
    actionable: Sequence[str],
    *,
    threshold: float,
    direction: str = DIRECTION_BELOW,
    k: int = 8,
    count: int = 1000,
    seed: int = 0,
) -> ExplanationSet:
    """Full pipeline: generate, evaluate through the model, filter, select.

    Deterministic for fixed inputs and seed.
    """
    target = table.plan.target.name
    predictor = SemPredictor(sem, target)
    candidates = generate_candidates(table, actionable, count, seed)
    domains = {
        name: d for name, d in table.domains.items() if name != target
    }
    cfs = evaluate(given, candidates, predictor, target, domains=domains)
    kept = filter_desirable(cfs, threshold, direction)
    return select_diverse(
        kept, given, k, target=target, threshold=threshold, direction=direction
    )
