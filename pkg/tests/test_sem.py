"""SEM DSL parsing, sampling, abduction, intervention and prediction."""
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfpm.repair import NONLINEAR_SEM_TEXT, REPAIR_SEM_TEXT, nonlinear_sem, repair_sem
from cfpm.sem import (
    AbductionError,
    BinOp,
    Const,
    DiscreteUniform,
    FeatureRef,
    Normal,
    PointMass,
    SemEvalError,
    SemParseError,
    SemStructureError,
    Uniform,
    abduce,
    affects,
    dot_graph,
    evaluate_all,
    intervene,
    parse_sem,
    predict,
    sample,
)
from cfpm.situations import Instance

# The repair equations without integer rounding, for tests about the raw
# real-valued process.
PLAIN_REPAIR_SEM = REPAIR_SEM_TEXT.replace(" ; integer", "")


class TestParser:
    def test_repair_model_shape(self, sem_repair):
        assert len(sem_repair.equations) == 5
        assert sem_repair.order == (
            "model", "team size", "inspDuration", "inspNumTest", "repairDuration",
        )
        eq = sem_repair.equations["repairDuration"]
        assert eq.noise == Uniform(10, 20)
        assert eq.parents == {"model", "inspNumTest"}
        assert eq.integer

    def test_single_equation(self):
        sem = parse_sem("x = N ; noise x ~ Uniform(0, 1)\n")
        assert sem.order == ("x",)
        assert sem.equations["x"].noise == Uniform(0, 1)

    def test_smallest_cycle_is_named(self):
        text = "a = b + N ; noise a ~ Uniform(0,1)\nb = a + N ; noise b ~ Uniform(0,1)\n"
        with pytest.raises(SemParseError, match=r"a -> b -> a|b -> a -> b"):
            parse_sem(text)

    def test_duplicate_equation(self):
        text = "x = 1\nx = 2\n"
        with pytest.raises(SemParseError, match="duplicate equation"):
            parse_sem(text)

    def test_undeclared_reference(self):
        with pytest.raises(SemParseError, match="undeclared feature 'ghost'"):
            parse_sem("x = ghost + N ; noise x ~ Uniform(0,1)\n")

    def test_two_noise_terms_rejected(self):
        with pytest.raises(SemParseError, match="two noise terms"):
            parse_sem("x = N + N ; noise x ~ Uniform(0,1)\n")

    def test_noise_clause_feature_mismatch(self):
        with pytest.raises(SemParseError, match="noise clause names"):
            parse_sem("x = N ; noise y ~ Uniform(0,1)\n")

    def test_noise_referenced_but_undeclared(self):
        with pytest.raises(SemParseError, match="declares no noise"):
            parse_sem("x = N\n")

    def test_noise_declared_but_unreferenced(self):
        with pytest.raises(SemParseError, match="never references N"):
            parse_sem("x = 5 ; noise x ~ Uniform(0,1)\n")

    def test_error_carries_line_and_column(self):
        text = "x = 1\ny = 2 +\n"
        with pytest.raises(SemParseError) as err:
            parse_sem(text)
        assert err.value.line == 2
        assert "line 2" in str(err.value)

    def test_unknown_distribution(self):
        with pytest.raises(SemParseError, match="unknown distribution"):
            parse_sem("x = N ; noise x ~ Cauchy(0,1)\n")

    def test_quoted_names_allow_spaces(self):
        sem = parse_sem('"team size" = N ; noise "team size" ~ Uniform(1,3)\n')
        assert sem.order == ("team size",)

    def test_comments_and_blank_lines(self):
        sem = parse_sem("# header\n\nx = 1  # trailing\n")
        assert sem.order == ("x",)

    def test_reads_from_stream(self):
        sem = parse_sem(io.StringIO("x = 1\n"))
        assert sem.order == ("x",)

    def test_precedence_and_power(self):
        sem = parse_sem("x = 2 + 3 * 4 ^ 2\n")
        assert evaluate_all(abduce(sem, Instance({"x": 50.0})))["x"] == 50.0

    def test_unary_minus_binds_looser_than_power(self):
        sem = parse_sem("x = -2 ^ 2\n")  # -(2^2)
        cf = abduce(sem, Instance({"x": -4.0}))
        assert evaluate_all(cf)["x"] == -4.0

    def test_distribution_bounds_validated(self):
        with pytest.raises(SemParseError, match="out of order"):
            parse_sem("x = N ; noise x ~ Uniform(3, 1)\n")

    def test_all_distributions_parse(self):
        text = (
            "a = N ; noise a ~ DiscreteUniform(1, 5)\n"
            "b = N ; noise b ~ Normal(0, 1)\n"
            "c = N ; noise c ~ PointMass(4)\n"
            "d = N ; noise d ~ Uniform(-1.5, 2.5)\n"
        )
        sem = parse_sem(text)
        assert sem.equations["a"].noise == DiscreteUniform(1, 5)
        assert sem.equations["b"].noise == Normal(0, 1)
        assert sem.equations["c"].noise == PointMass(4)
        assert sem.equations["d"].noise == Uniform(-1.5, 2.5)


# --- independent interval-arithmetic oracle -----------------------------------


def _interval(expr, envs):
    """Tiny interval evaluator over [lo, hi] bounds; supports the nodes the
    repair equations use (+, *, and constant coefficients)."""
    from cfpm.sem import Neg, NoiseRef

    if isinstance(expr, Const):
        return (expr.value, expr.value)
    if isinstance(expr, FeatureRef):
        return envs[expr.name]
    if isinstance(expr, NoiseRef):
        return envs["__noise__"]
    if isinstance(expr, Neg):
        lo, hi = _interval(expr.operand, envs)
        return (-hi, -lo)
    if isinstance(expr, BinOp):
        a_lo, a_hi = _interval(expr.left, envs)
        b_lo, b_hi = _interval(expr.right, envs)
        if expr.op == "+":
            return (a_lo + b_lo, a_hi + b_hi)
        if expr.op == "-":
            return (a_lo - b_hi, a_hi - b_lo)
        if expr.op == "*":
            products = [a_lo * b_lo, a_lo * b_hi, a_hi * b_lo, a_hi * b_hi]
            return (min(products), max(products))
    raise NotImplementedError(f"interval oracle does not handle {expr!r}")


def feature_bounds(sem):
    """Propagate noise supports through the equations in topological order."""
    bounds = {}
    for feature in sem.order:
        eq = sem.equations[feature]
        noise = eq.noise
        if isinstance(noise, (Uniform, DiscreteUniform)):
            noise_bounds = (noise.lo, noise.hi)
        elif isinstance(noise, PointMass):
            noise_bounds = (noise.value, noise.value)
        elif noise is None:
            noise_bounds = (0.0, 0.0)
        else:
            raise NotImplementedError
        bounds[feature] = _interval(eq.expr, {**bounds, "__noise__": noise_bounds})
    return bounds


class TestSample:
    def test_bounds_oracle_on_10k_rows(self):
        sem = parse_sem(PLAIN_REPAIR_SEM)
        bounds = feature_bounds(sem)
        # oracle sanity: 50*1 + 5*(5*1+3*1-1) + 10 = 95 up to
        # 50*10 + 5*(5*10+3*3+2) + 20 = 825
        assert bounds["repairDuration"] == (95.0, 825.0)
        assert bounds["model"] == (1.0, 10.0)
        table = sample(sem, 10_000, seed=42)
        for feature, (lo, hi) in bounds.items():
            values = [float(r.values[feature]) for r in table.rows]
            assert min(values) >= lo and max(values) <= hi

    def test_zero_rows(self, sem_repair):
        table = sample(sem_repair, 0, seed=1)
        assert table.rows == ()

    def test_seed_determinism(self, sem_repair):
        a = sample(sem_repair, 50, seed=9)
        b = sample(sem_repair, 50, seed=9)
        assert a == b
        c = sample(sem_repair, 50, seed=10)
        assert a != c

    def test_virtual_plan_and_target(self, sem_repair):
        table = sample(sem_repair, 3, seed=0)
        assert table.plan.target.name == "repairDuration"
        assert table.plan.descriptive_names == (
            "model", "team size", "inspDuration", "inspNumTest",
        )
        other = sample(sem_repair, 3, seed=0, target="inspNumTest")
        assert other.plan.target.name == "inspNumTest"

    def test_integer_flag_rounds_values(self, sem_repair):
        table = sample(sem_repair, 200, seed=3)
        for row in table.rows:
            assert all(isinstance(v, int) for v in row.values.values())

    def test_uniform_mean_within_three_standard_errors(self):
        sem = parse_sem("x = N ; noise x ~ Uniform(2, 8)\n")
        n = 100_000
        values = [float(r.values["x"]) for r in sample(sem, n, seed=7).rows]
        se = (8 - 2) / math.sqrt(12) / math.sqrt(n)
        assert abs(np.mean(values) - 5.0) <= 3 * se

    def test_eval_error_names_feature_and_row(self):
        text = "x = N ; noise x ~ Uniform(-2, -1)\ny = sqrt(x) + N ; noise y ~ Uniform(0, 1)\n"
        sem = parse_sem(text)
        with pytest.raises(SemEvalError, match=r"'y'.*row 0"):
            sample(sem, 5, seed=0)

    def test_discrete_uniform_hits_both_ends(self):
        sem = parse_sem("x = N ; noise x ~ DiscreteUniform(1, 3)\n")
        values = {r.values["x"] for r in sample(sem, 300, seed=5).rows}
        assert values == {1.0, 2.0, 3.0}


class TestAbduce:
    def test_worked_example_noise_values(self, sem_repair, instance_repair):
        cf = abduce(sem_repair, instance_repair)
        assert cf.noise_values == {
            "model": 7.0,
            "team size": 2.0,
            "inspDuration": 1.0,
            "inspNumTest": 1.0,
            "repairDuration": 17.0,
        }
        assert cf.slack_features == frozenset()

    def test_bare_noise_equation(self):
        sem = parse_sem("x = N ; noise x ~ Uniform(0, 10)\n")
        cf = abduce(sem, Instance({"x": 5}))
        assert cf.noise_values == {"x": 5.0}

    def test_support_violation_reports_feature_and_value(self):
        sem = parse_sem("x = N ; noise x ~ Uniform(10, 20)\n")
        with pytest.raises(AbductionError, match=r"9\.0.*'x'"):
            abduce(sem, Instance({"x": 9}))

    def test_missing_feature_value(self, sem_repair, instance_repair):
        values = dict(instance_repair.values)
        values["model"] = None
        with pytest.raises(AbductionError, match="model"):
            abduce(sem_repair, Instance(values))

    def test_non_additive_equation_rejected(self):
        sem = parse_sem("x = 2 * N ; noise x ~ Uniform(0, 1)\n")
        with pytest.raises(AbductionError, match="not additively noise-solvable"):
            abduce(sem, Instance({"x": 1.0}))

    def test_noise_free_consistency_enforced(self):
        sem = parse_sem("x = N ; noise x ~ Uniform(0, 10)\ny = 2 * x\n")
        abduce(sem, Instance({"x": 3, "y": 6}))
        with pytest.raises(AbductionError, match="'y'"):
            abduce(sem, Instance({"x": 3, "y": 7}))

    def test_integer_flag_grants_rounding_slack(self):
        # rounding can push the recovered noise up to 0.5 outside the
        # support; integer-flagged equations tolerate that and flag it
        sem = parse_sem("x = N ; noise x ~ Uniform(0.25, 0.75) ; integer\n")
        cf = abduce(sem, Instance({"x": 1}))  # noise 0.6 rounds to 1
        assert cf.noise_values["x"] == 1.0
        assert cf.slack_features == {"x"}
        assert evaluate_all(cf)["x"] == 1.0
        plain = parse_sem("x = N ; noise x ~ Uniform(0, 10)\n")
        with pytest.raises(AbductionError):
            abduce(plain, Instance({"x": 10.4}))

    def test_reproduces_instance_exactly(self, sem_repair, instance_repair):
        cf = abduce(sem_repair, instance_repair)
        env = evaluate_all(cf)
        for name, value in instance_repair.values.items():
            assert env[name] == pytest.approx(float(value), abs=1e-9)


class TestIntervene:
    def test_team_size_replacement(self, sem_repair, instance_repair):
        cf = intervene(abduce(sem_repair, instance_repair), {"team size": 3})
        env = evaluate_all(cf)
        assert env["team size"] == 3.0
        assert env["inspNumTest"] == 45.0
        assert env["repairDuration"] == 592.0

    def test_empty_intervention_is_identity(self, sem_repair, instance_repair):
        cf = abduce(sem_repair, instance_repair)
        assert predict(intervene(cf, {}), "repairDuration") == predict(cf, "repairDuration")

    def test_observed_value_intervention_keeps_prediction(self, sem_repair, instance_repair):
        cf = intervene(abduce(sem_repair, instance_repair), {"team size": 2})
        assert predict(cf, "repairDuration") == 577.0

    def test_unknown_feature_rejected(self, sem_repair, instance_repair):
        cf = abduce(sem_repair, instance_repair)
        with pytest.raises(SemStructureError, match="ghost"):
            intervene(cf, {"ghost": 1})

    def test_interventions_replaced_not_merged(self, sem_repair, instance_repair):
        cf = intervene(abduce(sem_repair, instance_repair), {"model": 5})
        cf = intervene(cf, {"team size": 3})
        assert cf.interventions == {"team size": 3.0}


class TestPredict:
    def test_worked_example(self, sem_repair, instance_repair):
        cf = intervene(abduce(sem_repair, instance_repair), {"team size": 3})
        assert predict(cf, "repairDuration") == pytest.approx(592.0, abs=1e-9)
        assert predict(cf, "inspNumTest") == pytest.approx(45.0, abs=1e-9)

    def test_no_intervention_reproduces_observed(self, sem_repair, instance_repair):
        cf = abduce(sem_repair, instance_repair)
        assert predict(cf, "repairDuration") == pytest.approx(577.0, abs=1e-9)

    def test_model_five_hand_computed(self, sem_repair, instance_repair):
        # 50*5 + 5*(5*5 + 3*2 + 1) + 17 = 427
        cf = intervene(abduce(sem_repair, instance_repair), {"model": 5})
        assert predict(cf, "repairDuration") == pytest.approx(427.0, abs=1e-9)

    def test_unknown_target(self, sem_repair, instance_repair):
        cf = abduce(sem_repair, instance_repair)
        with pytest.raises(SemStructureError, match="ghost"):
            predict(cf, "ghost")


class TestAffects:
    def test_team_size_reaches_target_via_tests(self, sem_repair):
        assert affects(sem_repair, "team size", "repairDuration")

    def test_inspection_duration_is_a_sink(self, sem_repair):
        # reachability oracle: inspDuration has no outgoing edge
        assert not any(
            "inspDuration" in sem_repair.parents(f) for f in sem_repair.features
        )
        assert not affects(sem_repair, "inspDuration", "repairDuration")

    def test_never_affects_itself(self, sem_repair):
        for feature in sem_repair.features:
            assert not affects(sem_repair, feature, feature)

    def test_unknown_feature(self, sem_repair):
        with pytest.raises(SemStructureError):
            affects(sem_repair, "ghost", "repairDuration")


class TestRoundTripProperties:
    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_abduction_round_trip_repair(self, seed):
        sem = repair_sem()
        table = sample(sem, 40, seed=seed)
        for row in table.rows:
            env = evaluate_all(abduce(sem, row))
            for name, value in row.values.items():
                assert abs(env[name] - float(value)) <= 1e-9

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_abduction_round_trip_nonlinear(self, seed):
        sem = nonlinear_sem()
        table = sample(sem, 40, seed=seed)
        for row in table.rows:
            env = evaluate_all(abduce(sem, row))
            for name, value in row.values.items():
                assert abs(env[name] - float(value)) <= 1e-9 * max(1.0, abs(float(value)))

    def test_intervention_locality(self, sem_repair, instance_repair):
        # inspDuration does not affect the target, so interventions on it
        # leave the prediction bit-identical
        cf = abduce(sem_repair, instance_repair)
        base = predict(cf, "repairDuration")
        rng = np.random.default_rng(0)
        for _ in range(100):
            value = float(rng.uniform(8, 104))
            assert predict(intervene(cf, {"inspDuration": value}), "repairDuration") == base


class TestDotGraph:
    def test_repair_graph_edges(self, sem_repair):
        dot = dot_graph(sem_repair)
        assert '"model" -> "repairDuration";' in dot
        assert '"team size" -> "inspNumTest";' in dot
        assert '"inspDuration" ->' not in dot

    def test_nonlinear_graph_parses(self):
        dot = dot_graph(nonlinear_sem())
        assert dot.startswith("digraph sem {")
        assert '"NumEmployees" -> "ImplementationDuration";' in dot
