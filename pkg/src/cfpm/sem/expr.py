"""Expression trees for structural equations.

Nodes: constants, feature references, the equation's own noise term,
arithmetic operators (+ - * / ^) and the functions floor, sqrt, mod, min,
max.  Evaluation is plain float arithmetic; domain failures (division by
zero, sqrt of a negative, ...) raise SemEvalError so callers can attach
the feature and row they were computing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping


class SemError(ValueError):
    """Base class for structural-equation-model failures."""


class SemEvalError(SemError):
    """Arithmetic domain failure while evaluating an equation."""

    def __init__(self, message: str, feature: str | None = None, row: int | None = None):
        self.feature = feature
        self.row = row
        where = ""
        if feature is not None:
            where = f" [feature {feature!r}" + (f", row {row}" if row is not None else "") + "]"
        super().__init__(message + where)


class Expr:
    pass


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class FeatureRef(Expr):
    name: str


@dataclass(frozen=True)
class NoiseRef(Expr):
    pass


@dataclass(frozen=True)
class BinOp(Expr):
    op: str  # one of + - * / ^
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr


@dataclass(frozen=True)
class Call(Expr):
    func: str  # floor | sqrt | mod | min | max
    args: tuple[Expr, ...]


FUNC_ARITY = {"floor": 1, "sqrt": 1, "mod": 2, "min": 2, "max": 2}


def eval_expr(expr: Expr, env: Mapping[str, float], noise: float | None = None) -> float:
    """Evaluate with feature values from `env` and N bound to `noise`."""
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, FeatureRef):
        try:
            return float(env[expr.name])
        except KeyError:
            raise SemEvalError(f"unbound feature {expr.name!r}") from None
    if isinstance(expr, NoiseRef):
        if noise is None:
            raise SemEvalError("expression references N but no noise value is bound")
        return noise
    if isinstance(expr, Neg):
        return -eval_expr(expr.operand, env, noise)
    if isinstance(expr, BinOp):
        left = eval_expr(expr.left, env, noise)
        right = eval_expr(expr.right, env, noise)
        if expr.op == "+":
            return left + right
        if expr.op == "-":
            return left - right
        if expr.op == "*":
            return left * right
        if expr.op == "/":
            if right == 0:
                raise SemEvalError("division by zero")
            return left / right
        if expr.op == "^":
            try:
                result = math.pow(left, right)
            except (ValueError, OverflowError) as exc:
                raise SemEvalError(f"invalid power {left} ^ {right}: {exc}") from None
            if math.isinf(result) or math.isnan(result):
                raise SemEvalError(f"non-finite power {left} ^ {right}")
            return result
        raise SemEvalError(f"unknown operator {expr.op!r}")
    if isinstance(expr, Call):
        args = [eval_expr(a, env, noise) for a in expr.args]
        if expr.func == "floor":
            return float(math.floor(args[0]))
        if expr.func == "sqrt":
            if args[0] < 0:
                raise SemEvalError(f"sqrt of negative value {args[0]}")
            return math.sqrt(args[0])
        if expr.func == "mod":
            if args[1] == 0:
                raise SemEvalError("mod by zero")
            return args[0] % args[1]
        if expr.func == "min":
            return min(args)
        if expr.func == "max":
            return max(args)
        raise SemEvalError(f"unknown function {expr.func!r}")
    raise SemEvalError(f"unknown expression node {type(expr).__name__}")


def features_in(expr: Expr) -> set[str]:
    if isinstance(expr, FeatureRef):
        return {expr.name}
    if isinstance(expr, Neg):
        return features_in(expr.operand)
    if isinstance(expr, BinOp):
        return features_in(expr.left) | features_in(expr.right)
    if isinstance(expr, Call):
        out: set[str] = set()
        for a in expr.args:
            out |= features_in(a)
        return out
    return set()


def noise_count(expr: Expr) -> int:
    if isinstance(expr, NoiseRef):
        return 1
    if isinstance(expr, Neg):
        return noise_count(expr.operand)
    if isinstance(expr, BinOp):
        return noise_count(expr.left) + noise_count(expr.right)
    if isinstance(expr, Call):
        return sum(noise_count(a) for a in expr.args)
    return 0


def noise_shape(expr: Expr) -> str:
    """Classify how N enters the expression.

    Returns one of:
      "free"     - no noise reference at all
      "bare"     - the expression is exactly N
      "additive" - N occurs once and every node on the path from the root
                   to it is a '+' (so value = rest + N and N is uniquely
                   recoverable as value - expr[N := 0])
      "entangled" - anything else; abduction cannot solve for N
    """
    n = noise_count(expr)
    if n == 0:
        return "free"
    if n > 1:
        return "entangled"
    if isinstance(expr, NoiseRef):
        return "bare"

    def additive_path(node: Expr) -> bool:
        if isinstance(node, NoiseRef):
            return True
        if isinstance(node, BinOp) and node.op == "+":
            if noise_count(node.left) == 1:
                return additive_path(node.left)
            return additive_path(node.right)
        return False

    return "additive" if additive_path(expr) else "entangled"
