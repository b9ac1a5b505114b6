"""Structural equation models: sampling, abduction, intervention, prediction.

A Sem maps each feature to one equation `feature = expr(parents [, N])`
with an independent noise distribution per equation and an acyclic parent
graph.  Counterfactual reasoning follows the abduction / action /
prediction recipe: recover the concrete noise values that reproduce an
observed instance, overwrite some equations with constants, and
re-evaluate the target.

Noise recovery requires additively solvable equations: the expression is
either noise-free, exactly N, or a sum with N as one addend, in which
case the unique noise value is `observed - expr[N := 0]`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .._util import round_half_up
from ..situations import (
    Instance,
    SituationFeature,
    SituationFeaturePlan,
    SituationTable,
    TRACE_END,
    TraceAttr,
    compute_domains,
)
from .expr import Expr, SemError, SemEvalError, eval_expr, features_in, noise_shape

_EPS = 1e-9


class SemStructureError(SemError):
    """Invalid model structure: cycles, duplicate or dangling references."""

    def __init__(self, message: str, feature: str | None = None):
        self.feature = feature
        super().__init__(message)


class AbductionError(SemError):
    """The observed instance cannot be explained by the model."""

    def __init__(self, message: str, feature: str | None = None):
        self.feature = feature
        super().__init__(message)


# --- noise distributions ----------------------------------------------------


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"Uniform bounds out of order: ({self.lo}, {self.hi})")

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.uniform(self.lo, self.hi))

    def contains(self, x: float, slack: float = 0.0) -> bool:
        return self.lo - slack - _EPS <= x <= self.hi + slack + _EPS


@dataclass(frozen=True)
class DiscreteUniform:
    lo: int
    hi: int

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"DiscreteUniform bounds out of order: ({self.lo}, {self.hi})")

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.integers(self.lo, self.hi + 1))

    def contains(self, x: float, slack: float = 0.0) -> bool:
        if not (self.lo - slack - _EPS <= x <= self.hi + slack + _EPS):
            return False
        return abs(x - round(x)) <= max(slack, _EPS)


@dataclass(frozen=True)
class Normal:
    mean: float
    stddev: float

    def __post_init__(self):
        if self.stddev < 0:
            raise ValueError(f"Normal stddev must be >= 0, got {self.stddev}")

    def sample(self, rng: np.random.Generator) -> float:
        if self.stddev == 0:
            return self.mean
        return float(rng.normal(self.mean, self.stddev))

    def contains(self, x: float, slack: float = 0.0) -> bool:
        if self.stddev == 0:
            return abs(x - self.mean) <= slack + _EPS
        return math.isfinite(x)


@dataclass(frozen=True)
class PointMass:
    value: float

    def sample(self, rng: np.random.Generator) -> float:
        return self.value

    def contains(self, x: float, slack: float = 0.0) -> bool:
        return abs(x - self.value) <= slack + _EPS


NoiseDist = Uniform | DiscreteUniform | Normal | PointMass


@dataclass(frozen=True)
class Equation:
    feature: str
    expr: Expr
    noise: NoiseDist | None = None
    integer: bool = False  # round the evaluated value half-up

    @property
    def parents(self) -> frozenset[str]:
        return frozenset(features_in(self.expr))


@dataclass(frozen=True)
class Sem:
    """A validated model: equations in declaration order plus a topological order."""

    equations: Mapping[str, Equation]
    order: tuple[str, ...]

    @classmethod
    def from_equations(cls, equations: Iterable[Equation]) -> "Sem":
        """Validate structure and compute a deterministic topological order.

        The order follows declaration order wherever the parent relation
        allows it.  Raises SemStructureError on duplicate equations,
        references to undeclared features, or cycles (the message spells
        the cycle out).
        """
        eq_list = list(equations)
        by_name: dict[str, Equation] = {}
        for eq in eq_list:
            if eq.feature in by_name:
                raise SemStructureError(
                    f"duplicate equation for {eq.feature!r}", feature=eq.feature
                )
            by_name[eq.feature] = eq
        for eq in eq_list:
            for parent in sorted(eq.parents):
                if parent not in by_name:
                    raise SemStructureError(
                        f"equation for {eq.feature!r} references undeclared feature {parent!r}",
                        feature=eq.feature,
                    )

        decl_index = {eq.feature: i for i, eq in enumerate(eq_list)}
        remaining_parents = {eq.feature: set(eq.parents) for eq in eq_list}
        children: dict[str, list[str]] = {eq.feature: [] for eq in eq_list}
        for eq in eq_list:
            for parent in eq.parents:
                children[parent].append(eq.feature)

        order: list[str] = []
        ready = sorted((f for f, ps in remaining_parents.items() if not ps), key=decl_index.get)
        while ready:
            feature = ready.pop(0)
            order.append(feature)
            for child in children[feature]:
                remaining_parents[child].discard(feature)
                if not remaining_parents[child]:
                    ready.append(child)
            ready.sort(key=decl_index.get)  # declaration order wherever possible
        if len(order) < len(eq_list):
            stuck = [f for f, ps in remaining_parents.items() if ps]
            cycle = _find_cycle(stuck, by_name)
            raise SemStructureError(
                "cycle detected: " + " -> ".join(cycle), feature=cycle[0]
            )
        return cls({f: by_name[f] for f in (eq.feature for eq in eq_list)}, tuple(order))

    @property
    def features(self) -> tuple[str, ...]:
        return tuple(self.equations)

    def parents(self, feature: str) -> frozenset[str]:
        return self.equations[feature].parents

    @cached_property
    def _children(self) -> dict[str, tuple[str, ...]]:
        out: dict[str, list[str]] = {f: [] for f in self.equations}
        for eq in self.equations.values():
            for parent in eq.parents:
                out[parent].append(eq.feature)
        decl = {f: i for i, f in enumerate(self.equations)}
        return {f: tuple(sorted(cs, key=decl.get)) for f, cs in out.items()}

    def children(self, feature: str) -> tuple[str, ...]:
        return self._children[feature]


def _find_cycle(stuck: Sequence[str], by_name: Mapping[str, Equation]) -> list[str]:
    start = stuck[0]
    seen: dict[str, int] = {}
    path: list[str] = []
    node = start
    while node not in seen:
        seen[node] = len(path)
        path.append(node)
        node = sorted(p for p in by_name[node].parents if p in stuck)[0]
    return path[seen[node] :] + [node]


def affects(sem: Sem, feature: str, target: str) -> bool:
    """True iff a directed path feature -> ... -> target exists (never for itself)."""
    for name in (feature, target):
        if name not in sem.equations:
            raise SemStructureError(f"unknown feature {name!r}", feature=name)
    stack = list(sem.children(feature))
    seen: set[str] = set()
    while stack:
        node = stack.pop()
        if node == target:
            return True
        if node in seen:
            continue
        seen.add(node)
        stack.extend(sem.children(node))
    return False


def dot_graph(sem: Sem) -> str:
    """Parent graph in DOT format, declaration-ordered for stable output."""
    lines = ["digraph sem {"]
    for feature in sem.equations:
        lines.append(f'  "{feature}";')
    for feature in sem.equations:
        for child in sem.children(feature):
            lines.append(f'  "{feature}" -> "{child}";')
    lines.append("}")
    return "\n".join(lines) + "\n"


# --- evaluation -------------------------------------------------------------


def _eval_equation(
    eq: Equation, env: Mapping[str, float], noise: float | None, row: int | None = None
) -> float:
    try:
        value = eval_expr(eq.expr, env, noise)
    except SemEvalError as exc:
        raise SemEvalError(str(exc), feature=eq.feature, row=row) from None
    if eq.integer:
        return float(round_half_up(value))
    return value


def sample(sem: Sem, n: int, seed: int, target: str | None = None) -> SituationTable:
    """Draw n rows by evaluating equations in topological order.

    Every equation's noise is drawn independently per row; a fixed seed
    gives a bit-identical table.  The returned table carries a virtual
    plan (all features as trace-level attributes, whole-trace anchor) with
    `target` as its target feature; by default the last-declared feature.
    """
    if n < 0:
        raise ValueError(f"sample size must be >= 0, got {n}")
    features = sem.features
    if target is None:
        target = features[-1]
    elif target not in sem.equations:
        raise SemStructureError(f"unknown target feature {target!r}", feature=target)

    rng = np.random.default_rng(seed)
    rows: list[Instance] = []
    for i in range(n):
        env: dict[str, float] = {}
        for feature in sem.order:
            eq = sem.equations[feature]
            noise = eq.noise.sample(rng) if eq.noise is not None else None
            value = _eval_equation(eq, env, noise, row=i)
            env[feature] = value
        rows.append(
            Instance({f: _as_value(env[f], sem.equations[f].integer) for f in features})
        )

    plan = SituationFeaturePlan(
        descriptive=tuple(
            SituationFeature(f, TraceAttr(f)) for f in features if f != target
        ),
        target=SituationFeature(target, TraceAttr(target)),
        anchor=TRACE_END,
    )
    return SituationTable(plan, tuple(rows), compute_domains(features, rows))


def _as_value(x: float, integer: bool):
    return int(x) if integer and float(x).is_integer() else x


@dataclass(frozen=True)
class CounterfactualSem:
    """A Sem with noise values pinned to an observed instance.

    `noise_values` holds the recovered noise per noisy equation;
    `interventions` overwrite whole equations with constants;
    `slack_features` records integer-flagged equations whose recovered
    noise fell outside the strict support but within the +-0.5 rounding
    slack.
    """

    base: Sem
    noise_values: Mapping[str, float]
    interventions: Mapping[str, float] = field(default_factory=dict)
    slack_features: frozenset[str] = frozenset()


def abduce(sem: Sem, instance: Instance) -> CounterfactualSem:
    """Recover the unique noise values that reproduce `instance`.

    Requires every model feature to have a non-missing numeric value in
    the instance and every noisy equation to be additively solvable.
    Raises AbductionError when a recovered noise value falls outside its
    distribution's support (the instance is inconsistent with the model)
    or when an equation cannot be solved for N.
    """
    observed: dict[str, float] = {}
    for feature in sem.features:
        value = instance.values.get(feature)
        if value is None:
            raise AbductionError(f"instance has no value for feature {feature!r}", feature)
        if isinstance(value, str):
            raise AbductionError(
                f"feature {feature!r} is non-numeric ({value!r}); the model needs numbers",
                feature,
            )
        observed[feature] = float(value)

    noise_values: dict[str, float] = {}
    slack_features: set[str] = set()
    for feature in sem.order:
        eq = sem.equations[feature]
        shape = noise_shape(eq.expr)
        obs = observed[feature]
        slack = 0.5 if eq.integer else 0.0
        if shape == "free":
            predicted = _eval_equation(eq, observed, None)
            if abs(predicted - obs) > slack + _EPS * max(1.0, abs(obs)):
                raise AbductionError(
                    f"noise-free equation for {feature!r} yields {predicted}, "
                    f"but the instance observed {obs}",
                    feature,
                )
            continue
        if shape == "entangled":
            raise AbductionError(
                f"equation for {feature!r} is not additively noise-solvable", feature
            )
        if shape == "bare":
            noise = obs
        else:  # additive: value = expr[N := 0] + N
            noise = obs - _raw_eval(eq, observed, 0.0)
        assert eq.noise is not None
        if not eq.noise.contains(noise, slack=slack):
            raise AbductionError(
                f"recovered noise {noise} for {feature!r} lies outside the support "
                f"of {eq.noise}",
                feature,
            )
        if slack and not eq.noise.contains(noise, slack=0.0):
            slack_features.add(feature)
        noise_values[feature] = noise
    return CounterfactualSem(sem, noise_values, {}, frozenset(slack_features))


def _raw_eval(eq: Equation, env: Mapping[str, float], noise: float | None) -> float:
    # no integer rounding: used for noise recovery where expr[N := 0] is needed raw
    try:
        return eval_expr(eq.expr, env, noise)
    except SemEvalError as exc:
        raise SemEvalError(str(exc), feature=eq.feature) from None


def intervene(cf: CounterfactualSem, assignment: Mapping[str, float]) -> CounterfactualSem:
    """Overwrite the equations named by `assignment` with constants.

    Returns a model whose interventions are exactly `assignment`; noise
    values stay untouched, so non-intervened equations still reproduce the
    abduced behaviour.
    """
    for feature in assignment:
        if feature not in cf.base.equations:
            raise SemStructureError(f"cannot intervene on unknown feature {feature!r}", feature)
    clean = {}
    for feature, value in assignment.items():
        if isinstance(value, str):
            raise SemStructureError(
                f"intervention value for {feature!r} must be numeric, got {value!r}", feature
            )
        clean[feature] = float(value)
    return replace(cf, interventions=clean)


def evaluate_all(cf: CounterfactualSem) -> dict[str, float]:
    """Evaluate every feature under the pinned noises and interventions."""
    env: dict[str, float] = {}
    for feature in cf.base.order:
        if feature in cf.interventions:
            env[feature] = cf.interventions[feature]
            continue
        eq = cf.base.equations[feature]
        noise = cf.noise_values.get(feature)
        if eq.noise is not None and noise is None:
            raise AbductionError(
                f"no noise value for non-intervened equation {feature!r}", feature
            )
        env[feature] = _eval_equation(eq, env, noise)
    return env


def predict(cf: CounterfactualSem, target: str) -> float:
    """Counterfactual value of `target` under the model's interventions."""
    if target not in cf.base.equations:
        raise SemStructureError(f"unknown target feature {target!r}", feature=target)
    return evaluate_all(cf)[target]
