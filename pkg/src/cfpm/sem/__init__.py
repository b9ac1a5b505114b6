"""Structural equation models: DSL parsing and counterfactual evaluation."""

from .expr import (
    BinOp,
    Call,
    Const,
    Expr,
    FeatureRef,
    Neg,
    NoiseRef,
    SemError,
    SemEvalError,
    eval_expr,
    features_in,
    noise_shape,
)
from .model import (
    AbductionError,
    CounterfactualSem,
    DiscreteUniform,
    Equation,
    NoiseDist,
    Normal,
    PointMass,
    Sem,
    SemStructureError,
    Uniform,
    abduce,
    affects,
    dot_graph,
    evaluate_all,
    intervene,
    predict,
    sample,
)
from .parser import SemParseError, parse_sem

__all__ = [
    "AbductionError",
    "BinOp",
    "Call",
    "Const",
    "CounterfactualSem",
    "DiscreteUniform",
    "Equation",
    "Expr",
    "FeatureRef",
    "Neg",
    "NoiseDist",
    "NoiseRef",
    "Normal",
    "PointMass",
    "Sem",
    "SemError",
    "SemEvalError",
    "SemParseError",
    "SemStructureError",
    "Uniform",
    "abduce",
    "affects",
    "dot_graph",
    "eval_expr",
    "evaluate_all",
    "features_in",
    "intervene",
    "noise_shape",
    "parse_sem",
    "predict",
    "sample",
]
